"""Layered driving stack: sense, perceive, predict and plan, smooth.

Each scene the stack senses the world through two noisy emulated
sensors, fuses them into a tracked world model, plans speed and steering
against the closest in-path obstacle and the lane, and smooths raw
actuation through per-channel PID controllers with slew limits.

Every intermediate value is written to the variable registry through an
injection hook, after the producing stage computes it and before the
consuming stage reads it, so a fault plan can corrupt any declared
variable at its architectural position.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from faultminer.kinematics import VehicleState, wrap_angle
from faultminer.world import Lane, WorldObject

__all__ = [
    "AdsConfig",
    "ObjectReading",
    "SensorFrame",
    "Track",
    "AdsState",
    "RawActuation",
    "ActuationCommand",
    "AdsFrame",
    "Ads",
    "fuse_distance",
]

NO_OBSTACLE_CLASS = "disappear"

_KIND_TO_CLASS = {
    "vehicle": "vehicle",
    "pedestrian": "pedestrian",
    "cyclist": "cyclist",
    "static": "vehicle",
}


@dataclass(frozen=True)
class AdsConfig:
    dt: float = 1.0 / 7.5
    cruise_speed: float = 12.0        # m/s
    horizon: float = 200.0            # m
    ego_half_width: float = 0.9       # m
    ego_radius: float = 0.9           # m
    # sensor noise (std dev) and class confidence per sensor
    sigma_camera: float = 0.35        # m
    sigma_lidar: float = 0.18         # m
    sigma_lane_offset: float = 0.02   # m
    sigma_lane_width: float = 0.04    # m
    sigma_lane_heading: float = 0.004  # rad
    sigma_lane_curvature: float = 2e-4  # 1/m
    camera_confidence: float = 0.9
    lidar_confidence: float = 0.6
    # world model
    t_miss: int = 8                   # frames a track may coast unobserved
    closing_alpha: float = 0.5        # EMA factor for closing-speed estimate
    # planner
    plan_decel: float = 5.0           # m/s^2, comfort braking ceiling
    comfort_accel: float = 2.0        # m/s^2
    a_lat_comfort: float = 1.8        # m/s^2, corner speed limit
    headway: float = 3.2              # s, time gap kept behind movers
    settle_frames: float = 2.0
    a_des_deadband: float = 0.4       # m/s^2, dead zone so cruise coasts
    target_alpha: float = 0.45        # EMA factor on the speed target
    standoff_vehicle: float = 2.0     # m, added to d_safe_min per class
    standoff_cyclist: float = 2.5
    standoff_pedestrian: float = 3.0
    d_safe_min: float = 1.0
    curvature_lookahead: float = 0.6  # s
    k_offset: float = 0.12            # rad per m of lane offset
    k_heading: float = 1.0            # rad per rad of heading error
    # actuation limits and smoothing
    a_accel_max: float = 3.0          # m/s^2 at full throttle
    a_brake_max: float = 6.0          # m/s^2 at full brake
    phi_max: float = math.pi / 4      # rad
    wheelbase: float = 2.7            # m, for steering feedforward
    kp: float = 0.8
    ki: float = 0.1
    kd: float = 0.05
    integral_limit: float = 1.0
    slew_throttle: float = 0.1        # per frame
    # brake apply is jerk limited for comfort (0.15/frame is about
    # 6.8 m/s^3); release is unrestricted
    slew_brake_apply: float = 0.15
    slew_brake_release: float = 1.0
    slew_steer: float = 0.1           # per frame


@dataclass
class ObjectReading:
    obj_id: str
    distance: float     # m, surface range from ego center
    bearing: float      # rad, body frame
    cls: str
    confidence: float
    radius: float


@dataclass
class SensorFrame:
    v: float
    a: float
    theta: float
    camera: list[ObjectReading]
    lidar: list[ObjectReading]
    lane_type: str
    lane_width: float
    lane_offset: float
    lane_heading_err: float
    lane_curvature: float


@dataclass
class Track:
    obj_id: str
    distance: float
    bearing: float
    cls: str
    # None until two sightings; the planner assumes a standing obstacle
    # for an unmeasured track, which is the conservative default
    closing_speed: float | None
    age: int = 1
    misses: int = 0
    radius: float = 0.5


@dataclass
class RawActuation:
    u_throttle: float
    u_brake: float
    u_steer: float


@dataclass(frozen=True)
class ActuationCommand:
    throttle: float
    brake: float
    steer: float


@dataclass
class _PidChannel:
    integral: float = 0.0
    prev_err: float = 0.0


@dataclass
class AdsState:
    tracks: dict[str, Track] = field(default_factory=dict)
    prev_cmd: ActuationCommand = ActuationCommand(0.0, 0.0, 0.0)
    target_smooth: float | None = None
    pid: dict[str, _PidChannel] = field(
        default_factory=lambda: {c: _PidChannel() for c in ("throttle", "brake", "steer")}
    )


@dataclass
class AdsFrame:
    scene: int
    values: dict[str, float | str]
    cipo_track: str | None
    new_tracks: tuple[str, ...]


def fuse_distance(d_cam: float | None, d_lidar: float | None,
                  sigma_cam: float, sigma_lidar: float) -> float | None:
    """Inverse-variance fusion of the two range readings."""
    if d_cam is None and d_lidar is None:
        return None
    if d_cam is None:
        return d_lidar
    if d_lidar is None:
        return d_cam
    w_cam = 1.0 / (sigma_cam * sigma_cam)
    w_lid = 1.0 / (sigma_lidar * sigma_lidar)
    return (d_cam * w_cam + d_lidar * w_lid) / (w_cam + w_lid)


def _identity_hook(name: str, value):
    return value


class Ads:
    """One driving stack instance; call step() once per scene."""

    def __init__(self, cfg: AdsConfig):
        self.cfg = cfg
        self.state = AdsState()

    def reset(self) -> None:
        self.state = AdsState()

    # sensing ---------------------------------------------------------

    def sense(self, ego: VehicleState, accel: float, objects: list[WorldObject],
              lane: Lane, rng: np.random.Generator) -> SensorFrame:
        """Two independent noisy views of every visible object, plus the
        lane estimate and inertial readings."""
        cfg = self.cfg
        cth, sth = math.cos(ego.theta), math.sin(ego.theta)
        camera: list[ObjectReading] = []
        lidar: list[ObjectReading] = []
        for obj in sorted(objects, key=lambda o: o.obj_id):
            rx = obj.position[0] - ego.x
            ry = obj.position[1] - ego.y
            lc = rx * cth + ry * sth
            tc = -rx * sth + ry * cth
            rng_dist = math.hypot(lc, tc) - obj.radius
            if lc < -2.0 or rng_dist > cfg.horizon:
                continue
            bearing = math.atan2(tc, lc)
            cls = _KIND_TO_CLASS.get(obj.kind)
            if cls is None:
                continue
            camera.append(ObjectReading(
                obj.obj_id, rng_dist + cfg.sigma_camera * rng.standard_normal(),
                bearing, cls, cfg.camera_confidence, obj.radius))
            lidar.append(ObjectReading(
                obj.obj_id, rng_dist + cfg.sigma_lidar * rng.standard_normal(),
                bearing, cls, cfg.lidar_confidence, obj.radius))

        station, offset, lane_heading = lane.project(ego.x, ego.y)
        look = station + max(ego.v, 1.0) * cfg.curvature_lookahead
        return SensorFrame(
            v=ego.v,
            a=accel,
            theta=ego.theta,
            camera=camera,
            lidar=lidar,
            lane_type="normal",
            lane_width=2.0 * lane.half_width + cfg.sigma_lane_width * rng.standard_normal(),
            lane_offset=offset + cfg.sigma_lane_offset * rng.standard_normal(),
            lane_heading_err=wrap_angle(ego.theta - lane_heading)
            + cfg.sigma_lane_heading * rng.standard_normal(),
            lane_curvature=lane.curvature_at(look)
            + cfg.sigma_lane_curvature * rng.standard_normal(),
        )

    # helpers ---------------------------------------------------------

    def _primary_candidate(self, frame: SensorFrame) -> str | None:
        """Nearest raw in-corridor reading decides which object the
        scalar sensor variables describe this frame."""
        cfg = self.cfg
        best_id, best_d = None, float("inf")
        by_id: dict[str, ObjectReading] = {r.obj_id: r for r in frame.lidar}
        for r in frame.camera:
            by_id.setdefault(r.obj_id, r)
        for oid, r in sorted(by_id.items()):
            if not math.isfinite(r.distance):
                continue
            lc = r.distance * math.cos(r.bearing)
            tc = r.distance * math.sin(r.bearing)
            if lc > 0 and abs(tc) < cfg.ego_half_width + r.radius and lc < best_d:
                best_id, best_d = oid, lc
        return best_id

    # the full per-scene pipeline ------------------------------------

    def step(self, scene: int, frame: SensorFrame, inject=None) -> tuple[ActuationCommand, AdsFrame]:
        cfg = self.cfg
        st = self.state
        inject = inject or _identity_hook
        values: dict[str, float | str] = {}

        def put(name: str, value):
            value = inject(name, value)
            values[name] = value
            return value

        # physical state readings close the loop but are not corrupted
        values["inertial.speed"] = frame.v
        values["inertial.accel"] = frame.a
        values["inertial.heading"] = frame.theta

        # stage 1: sensing of the primary in-path candidate
        primary = self._primary_candidate(frame)
        cam = next((r for r in frame.camera if r.obj_id == primary), None)
        lid = next((r for r in frame.lidar if r.obj_id == primary), None)
        cam_dist = put("perception.camera_object_distance",
                       cam.distance if cam else cfg.horizon)
        cam_cls = put("perception.camera_object_class",
                      cam.cls if cam else NO_OBSTACLE_CLASS)
        lid_dist = put("perception.lidar_object_distance",
                       lid.distance if lid else cfg.horizon)
        lid_cls = put("perception.lidar_object_class",
                      lid.cls if lid else NO_OBSTACLE_CLASS)

        # stage 2: fusion and world-model upkeep
        observed: set[str] = set()
        if primary is not None:
            fused_d = fuse_distance(
                cam_dist if cam else None, lid_dist if lid else None,
                cfg.sigma_camera, cfg.sigma_lidar)
            if cam and lid:
                fused_c = cam_cls if cam.confidence >= lid.confidence else lid_cls
            else:
                fused_c = cam_cls if cam else lid_cls
            bearing = cam.bearing if cam else lid.bearing
            radius = cam.radius if cam else lid.radius
            if fused_c != NO_OBSTACLE_CLASS:
                self._update_track(primary, fused_d, bearing, fused_c, radius)
                observed.add(primary)

        # secondary objects keep their tracks current without touching
        # the scalar registry variables
        for r in frame.camera:
            if r.obj_id == primary or r.obj_id in observed:
                continue
            lid_r = next((q for q in frame.lidar if q.obj_id == r.obj_id), None)
            fused_d = fuse_distance(r.distance, lid_r.distance if lid_r else None,
                                    cfg.sigma_camera, cfg.sigma_lidar)
            self._update_track(r.obj_id, fused_d, r.bearing, r.cls, r.radius)
            observed.add(r.obj_id)

        new_tracks = tuple(tid for tid, t in st.tracks.items() if t.age == 1)
        self._coast_tracks(observed)

        cipo = self._select_cipo()
        fused_dist = put("perception.sensor_fused_obstacle_distance",
                         cipo.distance if cipo else cfg.horizon)
        fused_cls = put("perception.sensor_fused_obstacle_class",
                        cipo.cls if cipo else NO_OBSTACLE_CLASS)
        if cipo is not None:
            cipo.distance = fused_dist
            cipo.cls = fused_cls

        lane_type = put("perception.lane_type", frame.lane_type)
        put("perception.lane_width", frame.lane_width)
        lane_offset = put("perception.lane_offset", frame.lane_offset)
        lane_curv = put("perception.lane_curvature", frame.lane_curvature)

        # stage 3: prediction and planning
        v_meas = put("planning.vehicle_speed", frame.v)
        put("planning.vehicle_accel", frame.a)
        heading_meas = put("planning.vehicle_heading", frame.theta)

        have_obstacle = (
            cipo is not None
            and fused_cls != NO_OBSTACLE_CLASS
            and math.isfinite(fused_dist)
        )
        if have_obstacle:
            # an unmeasured track is assumed standing: closing at our speed
            closing = cipo.closing_speed if cipo.closing_speed is not None \
                else (v_meas if math.isfinite(v_meas) else 0.0)
            gap_now = fused_dist - cfg.ego_radius
            gap_pred = gap_now - closing * cfg.dt
        else:
            closing = 0.0
            gap_pred = cfg.horizon
        gap = put("planning.obstacle_gap", gap_pred)
        closing = put("planning.obstacle_speed", closing)

        target = self._target_speed(gap, closing, v_meas, fused_cls, lane_curv,
                                    have_obstacle)
        # first-order smoothing keeps the target from chasing sensor noise
        if st.target_smooth is not None and math.isfinite(st.target_smooth) \
                and math.isfinite(target):
            target = st.target_smooth + cfg.target_alpha * (target - st.target_smooth)
        target = put("planning.target_speed", target)
        st.target_smooth = target if math.isfinite(target) else None

        u = self._raw_actuation(target, v_meas, lane_offset, lane_curv,
                                lane_type, frame.lane_heading_err)
        u_throttle = put("control.u_throttle", u.u_throttle)
        u_brake = put("control.u_brake", u.u_brake)
        u_steer = put("control.u_steer", u.u_steer)

        # stage 4: PID smoothing; the throttle channel exposes its
        # measured value and raw output as registry variables
        measured = put("control.pid_measured_value", st.prev_cmd.throttle)
        raw_out = self._pid_raw("throttle", u_throttle, measured)
        raw_out = put("control.pid_output", raw_out)
        throttle = self._apply_limits(measured, raw_out, cfg.slew_throttle,
                                      cfg.slew_throttle, 0.0, 1.0)
        throttle = put("actuation.throttle", throttle)

        brake_raw = self._pid_raw("brake", u_brake, st.prev_cmd.brake)
        brake = self._apply_limits(st.prev_cmd.brake, brake_raw,
                                   cfg.slew_brake_apply, cfg.slew_brake_release,
                                   0.0, 1.0)
        brake = put("actuation.brake", brake)

        steer_raw = self._pid_raw("steer", u_steer, st.prev_cmd.steer)
        steer = self._apply_limits(st.prev_cmd.steer, steer_raw, cfg.slew_steer,
                                   cfg.slew_steer, -1.0, 1.0)
        steer = put("actuation.steer", steer)

        cmd = ActuationCommand(throttle=throttle, brake=brake, steer=steer)
        st.prev_cmd = cmd
        ads_frame = AdsFrame(
            scene=scene, values=values,
            cipo_track=cipo.obj_id if cipo else None,
            new_tracks=new_tracks,
        )
        return cmd, ads_frame

    # world model internals -------------------------------------------

    def _update_track(self, oid: str, dist: float, bearing: float,
                      cls: str, radius: float) -> None:
        cfg = self.cfg
        tr = self.state.tracks.get(oid)
        if tr is None:
            self.state.tracks[oid] = Track(
                obj_id=oid, distance=dist, bearing=bearing, cls=cls,
                closing_speed=None, radius=radius)
            return
        if math.isfinite(dist) and math.isfinite(tr.distance):
            inst = (tr.distance - dist) / cfg.dt
            if tr.closing_speed is None:
                tr.closing_speed = inst
            else:
                tr.closing_speed += cfg.closing_alpha * (inst - tr.closing_speed)
        tr.distance = dist
        tr.bearing = bearing
        tr.cls = cls
        tr.age += 1
        tr.misses = 0

    def _coast_tracks(self, observed: set[str]) -> None:
        """Unobserved tracks extrapolate at their last closing speed and
        expire after t_miss consecutive misses."""
        cfg = self.cfg
        drop = []
        for oid, tr in self.state.tracks.items():
            if oid in observed:
                continue
            tr.misses += 1
            tr.age += 1
            if tr.misses > cfg.t_miss:
                drop.append(oid)
                continue
            if tr.closing_speed is not None:
                tr.distance = tr.distance - tr.closing_speed * cfg.dt
        for oid in drop:
            del self.state.tracks[oid]

    def _select_cipo(self) -> Track | None:
        cfg = self.cfg
        best, best_lc = None, float("inf")
        for tr in sorted(self.state.tracks.values(), key=lambda t: t.obj_id):
            if not (math.isfinite(tr.distance) and math.isfinite(tr.bearing)):
                continue
            lc = tr.distance * math.cos(tr.bearing)
            tc = tr.distance * math.sin(tr.bearing)
            if lc > 0 and abs(tc) < cfg.ego_half_width + tr.radius and lc < best_lc:
                best, best_lc = tr, lc
        return best

    # planner internals ------------------------------------------------

    def _standoff(self, cls: str) -> float:
        cfg = self.cfg
        extra = {
            "vehicle": cfg.standoff_vehicle,
            "cyclist": cfg.standoff_cyclist,
            "pedestrian": cfg.standoff_pedestrian,
        }.get(cls, cfg.standoff_vehicle)
        return cfg.d_safe_min + extra

    def _target_speed(self, gap: float, closing: float, v: float,
                      cls: str, curvature: float, have_obstacle: bool) -> float:
        """Gap keeping: the speed from which comfort braking still leaves
        the class standoff, shifted by the obstacle's own ground speed."""
        cfg = self.cfg
        target = cfg.cruise_speed
        if math.isfinite(curvature) and abs(curvature) > 1e-6:
            target = min(target, math.sqrt(cfg.a_lat_comfort / abs(curvature)))
        if have_obstacle and math.isfinite(gap):
            ground = v - closing if math.isfinite(closing) else 0.0
            ground = max(0.0, min(ground, v)) if math.isfinite(v) else 0.0
            clear = max(0.0, gap - self._standoff(cls) - cfg.headway * ground)
            allow = math.sqrt(2.0 * cfg.plan_decel * clear) + ground
            target = min(target, allow)
        return target

    def _raw_actuation(self, target: float, v: float, lane_offset: float,
                       curvature: float, lane_type: str,
                       heading_err: float) -> RawActuation:
        cfg = self.cfg
        if math.isfinite(target) and math.isfinite(v):
            a_des = (target - v) / (cfg.settle_frames * cfg.dt)
            a_des = min(max(a_des, -cfg.plan_decel), cfg.comfort_accel)
            if abs(a_des) < cfg.a_des_deadband:
                a_des = 0.0   # coast inside the dead zone
            u_thr = max(0.0, a_des) / cfg.a_accel_max
            u_brk = max(0.0, -a_des) / cfg.a_brake_max
            if target < 0.1 and v < 0.3:
                # hold the brake at a commanded stop; the dead zone must
                # not let the vehicle creep into its standoff
                u_thr = 0.0
                u_brk = max(u_brk, 0.2)
        else:
            u_thr = float("nan")
            u_brk = float("nan")

        if lane_type == "normal" and math.isfinite(lane_offset):
            curv = curvature if math.isfinite(curvature) else 0.0
            phi_cmd = (
                math.atan(cfg.wheelbase * curv)   # feedforward holds the arc
                - cfg.k_offset * lane_offset
                - cfg.k_heading * heading_err
            )
            u_str = phi_cmd / cfg.phi_max
        else:
            u_str = 0.0
        return RawActuation(
            u_throttle=min(max(u_thr, 0.0), 1.0) if math.isfinite(u_thr) else u_thr,
            u_brake=min(max(u_brk, 0.0), 1.0) if math.isfinite(u_brk) else u_brk,
            u_steer=min(max(u_str, -1.0), 1.0) if math.isfinite(u_str) else u_str,
        )

    # smoothing internals ----------------------------------------------

    def _pid_raw(self, channel: str, setpoint: float, measured: float) -> float:
        """Absolute next command before slew and bound clamping."""
        cfg = self.cfg
        ch = self.state.pid[channel]
        if not (math.isfinite(setpoint) and math.isfinite(measured)):
            # fail hold: a poisoned setpoint leaves the channel where it is
            ch.prev_err = 0.0
            return measured if math.isfinite(measured) else 0.0
        err = setpoint - measured
        ch.integral = min(max(ch.integral + err * cfg.dt, -cfg.integral_limit),
                          cfg.integral_limit)
        deriv = (err - ch.prev_err) / cfg.dt
        ch.prev_err = err
        return measured + cfg.kp * err + cfg.ki * ch.integral + cfg.kd * deriv

    @staticmethod
    def _apply_limits(prev: float, raw: float, slew_up: float,
                      slew_down: float, lo: float, hi: float) -> float:
        if not math.isfinite(raw):
            raw = prev if math.isfinite(prev) else lo
        if not math.isfinite(prev):
            prev = lo
        step = min(max(raw - prev, -slew_down), slew_up)
        return min(max(prev + step, lo), hi)
