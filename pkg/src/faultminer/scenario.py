"""Scenario engine: scripted worlds, the closed simulation loop, traces.

A scenario is fully declarative: lane geometry, ego start, cruise speed
and piecewise-linear actor scripts.  run() closes the loop between the
driving stack and the bicycle-model physics at the sensing rate and
records one row per scene with every registry variable, the ground
truth, the per-frame safety assessment and event tags.  Identical
scenario, fault plan, seed and configuration reproduce a byte-identical
trace.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from faultminer.ads import Ads, AdsConfig
from faultminer.kinematics import KinematicParams, VehicleState, rk4_step
from faultminer.registry import registry_names
from faultminer.safety import SafetyConfig, assess, run_metrics, RunMetrics
from faultminer.world import Lane, WorldObject

__all__ = [
    "ScenarioError",
    "ActorScript",
    "Scenario",
    "VehicleParams",
    "Trace",
    "step",
    "run",
    "scene_objects",
    "scenario_library",
    "scenario_to_json",
    "scenario_from_json",
    "load_scenario",
]

BRAKE_TAG_MIN = 0.05       # u_brake above this marks a braking frame
TURN_TAG_CURVATURE = 0.02  # 1/m, lane curvature above this marks a turn


class ScenarioError(ValueError):
    """Raised for malformed scenario definitions or files."""


@dataclass(frozen=True)
class ActorScript:
    """Piecewise-linear motion script; positions clamp at the ends."""

    obj_id: str
    kind: str
    radius: float
    waypoints: tuple[tuple[float, float, float], ...]  # (t, x, y)
    appears_at: int = 0   # scene index from which sensors can see it

    def __post_init__(self) -> None:
        if len(self.waypoints) < 1:
            raise ScenarioError(f"actor {self.obj_id}: needs waypoints")
        ts = [w[0] for w in self.waypoints]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ScenarioError(f"actor {self.obj_id}: waypoint times must increase")
        if not all(math.isfinite(c) for w in self.waypoints for c in w):
            raise ScenarioError(f"actor {self.obj_id}: non-finite waypoint")
        if self.radius <= 0:
            raise ScenarioError(f"actor {self.obj_id}: radius must be positive")
        if self.appears_at < 0:
            raise ScenarioError(f"actor {self.obj_id}: appears_at must be >= 0")

    def position(self, t: float) -> tuple[float, float]:
        ts = [w[0] for w in self.waypoints]
        xs = [w[1] for w in self.waypoints]
        ys = [w[2] for w in self.waypoints]
        return float(np.interp(t, ts, xs)), float(np.interp(t, ts, ys))

    def velocity(self, t: float) -> tuple[float, float]:
        wps = self.waypoints
        if len(wps) == 1 or t <= wps[0][0] or t >= wps[-1][0]:
            return 0.0, 0.0
        for (t0, x0, y0), (t1, x1, y1) in zip(wps, wps[1:]):
            if t0 <= t < t1:
                return (x1 - x0) / (t1 - t0), (y1 - y0) / (t1 - t0)
        return 0.0, 0.0


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    lane_centerline: tuple[tuple[float, float], ...]
    lane_half_width: float
    ego_start: tuple[float, float, float, float]   # x, y, v, theta
    cruise_speed: float
    actors: tuple[ActorScript, ...] = ()
    scenes: int = 2400
    dt: float = 1.0 / 7.5
    description: str = ""

    def __post_init__(self) -> None:
        if self.scenes < 3:
            raise ScenarioError("scenes must be at least 3")
        if self.dt <= 0 or not math.isfinite(self.dt):
            raise ScenarioError("dt must be positive and finite")
        if self.cruise_speed < 0 or not math.isfinite(self.cruise_speed):
            raise ScenarioError("cruise_speed must be non-negative")
        if len(self.lane_centerline) < 2:
            raise ScenarioError("lane centerline needs at least two points")
        x, y, v, theta = self.ego_start
        if not all(math.isfinite(c) for c in (x, y, v, theta)) or v < 0:
            raise ScenarioError("ego_start must be finite with v >= 0")
        ids = [a.obj_id for a in self.actors]
        if len(set(ids)) != len(ids):
            raise ScenarioError("actor ids must be unique")

    def lane(self) -> Lane:
        return Lane(np.asarray(self.lane_centerline), self.lane_half_width)


@dataclass(frozen=True)
class VehicleParams:
    kin: KinematicParams = KinematicParams()
    a_accel_max: float = 3.0     # m/s^2 at full throttle
    a_brake_max: float = 6.0     # m/s^2 at full brake
    steer_rate_max: float = 0.45  # rad/s of the physical steering actuator


def step(ego: VehicleState, throttle: float, brake: float, steer: float,
         vp: VehicleParams) -> tuple[VehicleState, float]:
    """One physics step; returns the new state and the applied accel."""
    kin = vp.kin
    thr = min(max(throttle, 0.0), 1.0) if math.isfinite(throttle) else 0.0
    brk = min(max(brake, 0.0), 1.0) if math.isfinite(brake) else 0.0
    str_cmd = min(max(steer, -1.0), 1.0) if math.isfinite(steer) else 0.0
    accel = thr * vp.a_accel_max - brk * vp.a_brake_max
    if ego.v <= 0.0 and accel < 0.0:
        accel = 0.0   # brakes hold a standing vehicle
    phi_target = str_cmd * kin.phi_max
    rate = (phi_target - ego.phi) / kin.dt
    rate = min(max(rate, -vp.steer_rate_max), vp.steer_rate_max)
    new = rk4_step(ego, accel, rate, kin, kin.dt)
    return new, accel


TRUTH_COLUMNS = (
    "truth.x", "truth.y", "truth.v", "truth.theta", "truth.phi",
    "truth.accel", "truth.station", "truth.offset",
)
ASSESS_COLUMNS = (
    "assess.d_safe_long", "assess.d_safe_lat", "assess.d_stop_long",
    "assess.d_stop_lat", "assess.delta_long", "assess.delta_lat", "assess.safe",
)
METRIC_COLUMNS = ("metric.cipo", "metric.lk")
TAG_COLUMNS = ("tag.registration", "tag.braking", "tag.turning")


def trace_columns() -> list[str]:
    return (["scene", "t"] + list(TRUTH_COLUMNS) + registry_names()
            + list(ASSESS_COLUMNS) + list(METRIC_COLUMNS) + list(TAG_COLUMNS))


_STR_COLUMNS = {
    "perception.camera_object_class", "perception.lidar_object_class",
    "perception.sensor_fused_obstacle_class", "perception.lane_type",
}
_INT_COLUMNS = {"scene", "assess.safe", "tag.registration", "tag.braking", "tag.turning"}


@dataclass
class Trace:
    scenario_id: str
    seed: int
    rows: list[dict]
    terminated_early: bool = False
    collision_frame: int | None = None
    meta: dict = field(default_factory=dict)

    def metrics(self) -> RunMetrics:
        return run_metrics(
            [r["metric.cipo"] for r in self.rows],
            [r["metric.lk"] for r in self.rows],
        )

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def to_bytes(self) -> bytes:
        out = io.StringIO()
        out.write(f"# scenario={self.scenario_id}\n")
        out.write(f"# seed={self.seed}\n")
        out.write(f"# terminated_early={int(self.terminated_early)}\n")
        cf = "" if self.collision_frame is None else str(self.collision_frame)
        out.write(f"# collision_frame={cf}\n")
        cols = trace_columns()
        out.write(",".join(cols) + "\n")
        for r in self.rows:
            cells = []
            for c in cols:
                v = r[c]
                if c in _STR_COLUMNS:
                    cells.append(str(v))
                elif c in _INT_COLUMNS:
                    cells.append(str(int(v)))
                else:
                    cells.append(repr(float(v)))
            out.write(",".join(cells) + "\n")
        return out.getvalue().encode()

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Trace":
        with open(path, "rb") as fh:
            text = fh.read().decode()
        lines = text.splitlines()
        meta = {}
        i = 0
        while i < len(lines) and lines[i].startswith("#"):
            key, _, val = lines[i][1:].strip().partition("=")
            meta[key.strip()] = val
            i += 1
        cols = lines[i].split(",")
        if cols != trace_columns():
            raise ScenarioError("trace header does not match the current schema")
        rows = []
        for line in lines[i + 1:]:
            if not line:
                continue
            cells = line.split(",")
            row = {}
            for c, cell in zip(cols, cells):
                if c in _STR_COLUMNS:
                    row[c] = cell
                elif c in _INT_COLUMNS:
                    row[c] = int(cell)
                else:
                    row[c] = float(cell)
            rows.append(row)
        cf = meta.get("collision_frame", "")
        return cls(
            scenario_id=meta.get("scenario", "?"),
            seed=int(meta.get("seed", "0")),
            rows=rows,
            terminated_early=bool(int(meta.get("terminated_early", "0"))),
            collision_frame=int(cf) if cf else None,
        )


def scene_objects(scenario: Scenario, k: int) -> list[WorldObject]:
    """World objects present at scene k, as the sensors would meet them."""
    t = k * scenario.dt
    objects: list[WorldObject] = []
    for a in scenario.actors:
        if k < a.appears_at:
            continue
        px, py = a.position(t)
        vx, vy = a.velocity(t)
        vx_, vy_ = (0.0, 0.0) if a.kind in ("static", "lane_boundary") else (vx, vy)
        objects.append(WorldObject(a.obj_id, a.kind, np.array([px, py]),
                                   np.array([vx_, vy_]), a.radius))
    return objects


def run(
    scenario: Scenario,
    seed: int,
    ads_cfg: AdsConfig | None = None,
    vp: VehicleParams | None = None,
    safety_cfg: SafetyConfig | None = None,
    injector=None,
    stop_after: int | None = None,
) -> Trace:
    """Simulate one run and return its trace.

    injector, when given, is called as injector(scene, name, value) for
    every registry write and returns the possibly corrupted value.
    """
    vp = vp or VehicleParams(kin=KinematicParams(dt=scenario.dt))
    if vp.kin.dt != scenario.dt:
        vp = replace(vp, kin=KinematicParams(
            wheelbase=vp.kin.wheelbase, a_max=vp.kin.a_max,
            dt=scenario.dt, phi_max=vp.kin.phi_max))
    ads_cfg = ads_cfg or AdsConfig(dt=scenario.dt, cruise_speed=scenario.cruise_speed)
    safety_cfg = safety_cfg or SafetyConfig()
    lane = scenario.lane()
    ads = Ads(ads_cfg)
    rng = np.random.default_rng(seed)

    x0, y0, v0, th0 = scenario.ego_start
    ego = VehicleState(x=x0, y=y0, v=v0, theta=th0, phi=0.0)
    accel_applied = 0.0
    rows: list[dict] = []
    terminated = False
    collision_frame = None
    n_scenes = scenario.scenes if stop_after is None else min(scenario.scenes, stop_after)

    for k in range(n_scenes):
        t = k * scenario.dt
        objects = scene_objects(scenario, k)
        frame = ads.sense(ego, accel_applied, objects, lane, rng)
        hook = None
        if injector is not None:
            def hook(name, value, _k=k):
                return injector(_k, name, value)
        cmd, ads_frame = ads.step(k, frame, hook)

        assessment = assess(ego, objects, lane, vp.kin, safety_cfg)
        station, offset, _ = lane.project(ego.x, ego.y)

        row = {"scene": k, "t": t}
        row.update({
            "truth.x": ego.x, "truth.y": ego.y, "truth.v": ego.v,
            "truth.theta": ego.theta, "truth.phi": ego.phi,
            "truth.accel": accel_applied,
            "truth.station": station, "truth.offset": offset,
        })
        row.update(ads_frame.values)
        row.update({
            "assess.d_safe_long": assessment.d_safe_long,
            "assess.d_safe_lat": assessment.d_safe_lat,
            "assess.d_stop_long": assessment.d_stop_long,
            "assess.d_stop_lat": assessment.d_stop_lat,
            "assess.delta_long": assessment.delta_long,
            "assess.delta_lat": assessment.delta_lat,
            "assess.safe": int(assessment.safe),
            "metric.cipo": assessment.d_safe_long,
            "metric.lk": abs(offset),
            "tag.registration": int(bool(ads_frame.new_tracks)),
            "tag.braking": int(float(row["control.u_brake"]) > BRAKE_TAG_MIN
                               if math.isfinite(float(row["control.u_brake"])) else 0),
            # the planner steers into a bend before the rear axle reaches
            # it, so the tag looks ahead by roughly the preview distance
            "tag.turning": int(
                abs(lane.curvature_at(station)) > TURN_TAG_CURVATURE
                or abs(lane.curvature_at(station + ego.v * 0.6)) > TURN_TAG_CURVATURE),
        })
        rows.append(row)

        if assessment.d_safe_long <= 0.0:
            terminated = True
            collision_frame = k
            break

        ego, accel_applied = step(ego, cmd.throttle, cmd.brake, cmd.steer, vp)

    return Trace(
        scenario_id=scenario.scenario_id,
        seed=seed,
        rows=rows,
        terminated_early=terminated,
        collision_frame=collision_frame,
    )


# scenario files ------------------------------------------------------

def scenario_to_json(sc: Scenario) -> str:
    doc = {
        "id": sc.scenario_id,
        "scenes": sc.scenes,
        "dt": sc.dt,
        "cruise_speed": sc.cruise_speed,
        "ego": {"x": sc.ego_start[0], "y": sc.ego_start[1],
                "v": sc.ego_start[2], "theta": sc.ego_start[3]},
        "lane": {"half_width": sc.lane_half_width,
                 "centerline": [list(p) for p in sc.lane_centerline]},
        "actors": [
            {
                "id": a.obj_id, "kind": a.kind, "radius": a.radius,
                "appears_at": a.appears_at,
                "waypoints": [list(w) for w in a.waypoints],
            }
            for a in sc.actors
        ],
        "description": sc.description,
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def scenario_from_json(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"scenario file is not valid JSON: {e}") from None
    try:
        ego = doc["ego"]
        lane = doc["lane"]
        actors = tuple(
            ActorScript(
                obj_id=a["id"], kind=a["kind"], radius=float(a["radius"]),
                waypoints=tuple(tuple(float(c) for c in w) for w in a["waypoints"]),
                appears_at=int(a.get("appears_at", 0)),
            )
            for a in doc.get("actors", [])
        )
        return Scenario(
            scenario_id=str(doc["id"]),
            scenes=int(doc.get("scenes", 2400)),
            dt=float(doc.get("dt", 1.0 / 7.5)),
            cruise_speed=float(doc["cruise_speed"]),
            ego_start=(float(ego["x"]), float(ego["y"]),
                       float(ego["v"]), float(ego["theta"])),
            lane_half_width=float(lane["half_width"]),
            lane_centerline=tuple((float(p[0]), float(p[1]))
                                  for p in lane["centerline"]),
            actors=actors,
            description=str(doc.get("description", "")),
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ScenarioError):
            raise
        raise ScenarioError(f"scenario file missing or malformed field: {e}") from None


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return scenario_from_json(fh.read())


# the scenario library ------------------------------------------------

def _arc_route(segments, step=2.0):
    """Build a polyline from straight/arc segments starting at origin."""
    pts = [(0.0, 0.0)]
    x, y, th = 0.0, 0.0, 0.0
    for kind, val in segments:
        if kind == "straight":
            n = max(1, int(val / step))
            for _ in range(n):
                x += (val / n) * math.cos(th)
                y += (val / n) * math.sin(th)
                pts.append((x, y))
        elif kind == "arc":
            radius, angle = val
            arc_len = abs(radius * angle)
            n = max(2, int(arc_len / step))
            dth = angle / n
            ds = arc_len / n
            for _ in range(n):
                th_mid = th + dth / 2.0
                x += ds * math.cos(th_mid)
                y += ds * math.sin(th_mid)
                th += dth
                pts.append((x, y))
        else:
            raise ValueError(kind)
    return tuple(pts)


def scenario_library() -> dict[str, Scenario]:
    """Six built-in analogs: three freeway, three urban."""
    lib: dict[str, Scenario] = {}
    dt = 1.0 / 7.5

    # A1: freeway lead-follow; the lead is slightly faster so the ego
    # settles at cruise with the brake untouched.
    straight = tuple((float(x), 0.0) for x in (-60.0, 3000.0))
    lib["A1"] = Scenario(
        scenario_id="A1",
        lane_centerline=straight,
        lane_half_width=1.85,
        ego_start=(0.0, 0.0, 25.0, 0.0),
        cruise_speed=25.0,
        scenes=450,
        dt=dt,
        actors=(
            ActorScript("lead", "vehicle", 0.9,
                        ((0.0, 100.0, 0.0), (80.0, 100.0 + 26.0 * 80.0, 0.0))),
        ),
        description="freeway following, faster lead, brake stays cold",
    )

    # A2: freeway cut-in; a faster vehicle overtakes and merges ahead.
    lib["A2"] = Scenario(
        scenario_id="A2",
        lane_centerline=straight,
        lane_half_width=1.85,
        ego_start=(0.0, 0.0, 28.0, 0.0),
        cruise_speed=28.0,
        scenes=450,
        dt=dt,
        actors=(
            ActorScript("lead", "vehicle", 0.9,
                        ((0.0, 150.0, 0.0), (80.0, 150.0 + 27.5 * 80.0, 0.0))),
            ActorScript("cutin", "vehicle", 0.9,
                        ((0.0, -5.0, 3.6),
                         (22.0, -5.0 + 29.5 * 22.0, 3.6),
                         (25.0, -5.0 + 29.5 * 25.0, 0.0),
                         (80.0, -5.0 + 29.5 * 80.0, 0.0))),
        ),
        description="freeway cut-in ahead of the ego",
    )

    # A3: freeway platoon of three slower vehicles.
    lib["A3"] = Scenario(
        scenario_id="A3",
        lane_centerline=straight,
        lane_half_width=1.85,
        ego_start=(0.0, 0.0, 26.0, 0.0),
        cruise_speed=27.0,
        scenes=450,
        dt=dt,
        actors=tuple(
            ActorScript(f"p{i}", "vehicle", 0.9,
                        ((0.0, 180.0 + 60.0 * i, 0.0),
                         (80.0, 180.0 + 60.0 * i + 25.5 * 80.0, 0.0)))
            for i in range(3)
        ),
        description="freeway platoon follow",
    )

    # A4: urban street, all traffic in the opposite lane; nothing ever
    # enters the ego corridor.
    urban_straight = tuple((float(x), 0.0) for x in (-40.0, 800.0))
    opposite = tuple(
        ActorScript(f"onc{i}", "vehicle", 0.9,
                    ((0.0, 150.0 + 130.0 * i, -3.8),
                     (80.0, 150.0 + 130.0 * i - 10.0 * 80.0, -3.8)))
        for i in range(4)
    )
    lib["A4"] = Scenario(
        scenario_id="A4",
        lane_centerline=urban_straight,
        lane_half_width=2.1,
        ego_start=(0.0, 0.0, 8.0, 0.0),
        cruise_speed=8.0,
        scenes=450,
        dt=dt,
        actors=opposite + (
            ActorScript("sign", "static", 0.3, ((0.0, 300.0, 3.4),)),
        ),
        description="urban street, oncoming traffic in the other lane only",
    )

    # A5: urban jogger revealed from behind a parked van just inside the
    # braking envelope, sprinting across in front of a stalled car that
    # blocks the lane.  The nominal run brakes hard through the crossing
    # and rolls to a stop behind the stalled car with room to spare.
    ped_t0 = 99 * dt   # reveal scene
    lib["A5"] = Scenario(
        scenario_id="A5",
        lane_centerline=urban_straight,
        lane_half_width=2.2,
        ego_start=(0.0, 0.0, 8.0, 0.0),
        cruise_speed=8.0,
        scenes=240,
        dt=dt,
        actors=(
            ActorScript("parked", "static", 0.6, ((0.0, 114.0, 2.9),)),
            ActorScript("ped", "pedestrian", 0.3,
                        ((ped_t0, 115.9, 0.95),
                         (ped_t0 + 2.4 / 2.2, 115.9, 0.95 - 2.4)),
                        appears_at=99),
            ActorScript("stalled", "vehicle", 0.9, ((0.0, 118.6, 0.0),)),
        ),
        description="urban jogger reveal in front of a stalled car",
    )

    # A6: blind left curve.  A jogger sprints across near the end of the
    # arc, revealed well inside the braking envelope, and a stalled car
    # blocks the lane just past the exit.  The heading-aligned corridor
    # cannot contain either until the ego is most of the way around, so
    # the hard braking lands on turn frames.
    route = _arc_route((
        ("straight", 70.0),
        ("arc", (25.0, math.pi / 2)),
        ("straight", 120.0),
    ))
    lane6 = Lane(np.asarray(route), 1.8)
    cross_s = 106.8          # crossing line, late on the arc
    jog_k0 = 102             # reveal scene, ego about 8.7 m short of it
    jog_t0 = jog_k0 * dt
    cx, cy = lane6.point_at(cross_s)
    th = lane6.heading_at(cross_s)
    nx, ny = -math.sin(th), math.cos(th)
    stall_xy = lane6.point_at(111.0)
    lib["A6"] = Scenario(
        scenario_id="A6",
        lane_centerline=route,
        lane_half_width=1.8,
        ego_start=(0.0, 0.0, 7.5, 0.0),
        cruise_speed=7.5,
        scenes=240,
        dt=dt,
        actors=(
            ActorScript("jogger", "pedestrian", 0.3,
                        ((jog_t0, cx - 1.1 * nx, cy - 1.1 * ny),
                         (jog_t0 + 2.55 / 2.2, cx + 1.45 * nx, cy + 1.45 * ny)),
                        appears_at=jog_k0),
            ActorScript("stalled", "vehicle", 0.9,
                        ((0.0, float(stall_xy[0]), float(stall_xy[1])),)),
        ),
        description="blind curve with a jogger and a stalled car at the exit",
    )
    return lib
