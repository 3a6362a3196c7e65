"""Safety potential: can the vehicle still stop inside its clear space?

Per frame the assessor measures the clear distance around the ego on two
axes and subtracts what an emergency stop would consume:

    delta = d_safe - d_stop        (per axis; safe iff both > 0)

Longitudinal d_safe is the smallest gap to any object inside the ego's
driving corridor, capped at a sensing horizon.  Lateral d_safe is the
margin to the lane boundary or to laterally adjacent objects.  Lateral
d_stop is charged as lane encroachment: how much further from the lane
center the braking arc would carry the vehicle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from faultminer.kinematics import KinematicParams, StopResult, VehicleState, emergency_stop
from faultminer.world import Lane, WorldObject

__all__ = [
    "SafetyConfig",
    "SafetyAssessment",
    "RunMetrics",
    "compute_d_safe",
    "path_encroachment",
    "assess",
    "run_metrics",
    "is_critical",
    "CIPO_HAZARD_M",
    "LK_HAZARD_M",
]

CIPO_HAZARD_M = 1.0   # m, closest in-path distance below this is a hazard
LK_HAZARD_M = 0.80    # m, lane-keeping offset above this is a hazard


@dataclass(frozen=True)
class SafetyConfig:
    horizon: float = 200.0        # m, corridor sensing range
    ego_half_width: float = 0.9   # m
    ego_radius: float = 0.9       # m, bounding circle for gap accounting
    d_safe_min: float = 1.0       # m, configured minimum clear distance
    adjacent_window: float = 3.0  # m, longitudinal span counted as "beside"


@dataclass(frozen=True)
class SafetyAssessment:
    d_safe_long: float
    d_safe_lat: float
    d_stop_long: float
    d_stop_lat: float
    delta_long: float
    delta_lat: float
    d_safe_min: float
    safe: bool


@dataclass(frozen=True)
class RunMetrics:
    min_cipo: float      # m, worst closest-in-path gap over the run
    max_lk: float        # m, worst absolute lane offset over the run
    hazard: bool
    hazard_frame: int | None


def compute_d_safe(
    ego: VehicleState,
    objects: list[WorldObject],
    lane: Lane,
    cfg: SafetyConfig,
) -> tuple[float, float]:
    """Clear distance ahead (corridor) and beside (lane frame).

    Corridor: objects whose circle overlaps the strip of the ego's width
    along the current heading; gap is center distance minus both radii.
    Lateral: lane-boundary margin, tightened by any adjacent object.
    """
    cth, sth = math.cos(ego.theta), math.sin(ego.theta)
    d_long = cfg.horizon
    lat_margins = []
    for obj in objects:
        rx = obj.position[0] - ego.x
        ry = obj.position[1] - ego.y
        lc = rx * cth + ry * sth
        tc = -rx * sth + ry * cth
        if lc > 0 and abs(tc) < cfg.ego_half_width + obj.radius:
            gap = lc - obj.radius - cfg.ego_radius
            d_long = min(d_long, gap)
        elif abs(lc) <= cfg.adjacent_window + obj.radius:
            lat_margins.append(abs(tc) - obj.radius - cfg.ego_half_width)

    _, offset, _ = lane.project(ego.x, ego.y)
    lane_margin = lane.half_width - cfg.ego_half_width - abs(offset)
    d_lat = min([lane_margin] + lat_margins) if lat_margins else lane_margin
    return min(d_long, cfg.horizon), d_lat


def path_encroachment(path: np.ndarray, lane: Lane, current_offset: float) -> float:
    """Additional lane-center offset the stop path would accumulate."""
    if len(path) == 0:
        return 0.0
    _, offsets, _ = lane.project_many(path)
    worst = float(np.max(np.abs(offsets)))
    return max(0.0, worst - abs(current_offset))


def assess(
    ego: VehicleState,
    objects: list[WorldObject],
    lane: Lane,
    kin: KinematicParams,
    cfg: SafetyConfig,
    stop: StopResult | None = None,
) -> SafetyAssessment:
    """Combine clear-space measurement with the emergency-stop cost."""
    d_safe_long, d_safe_lat = compute_d_safe(ego, objects, lane, cfg)
    if stop is None:
        stop = emergency_stop(ego, kin)
    _, offset, _ = lane.project(ego.x, ego.y)
    d_stop_long = max(stop.d_stop_long, 0.0)
    d_stop_lat = path_encroachment(stop.path, lane, offset)
    delta_long = d_safe_long - d_stop_long
    delta_lat = d_safe_lat - d_stop_lat
    return SafetyAssessment(
        d_safe_long=d_safe_long,
        d_safe_lat=d_safe_lat,
        d_stop_long=d_stop_long,
        d_stop_lat=d_stop_lat,
        delta_long=delta_long,
        delta_lat=delta_lat,
        d_safe_min=cfg.d_safe_min,
        safe=bool(delta_long > 0 and delta_lat > 0),
    )


def run_metrics(cipo_samples, lk_samples) -> RunMetrics:
    """Reduce per-frame CIPO gaps and lane offsets to run verdicts."""
    cipo = np.asarray(cipo_samples, dtype=float)
    lk = np.asarray(lk_samples, dtype=float)
    if cipo.size == 0 or lk.size == 0 or cipo.size != lk.size:
        raise ValueError("need equal, non-empty CIPO and LK sample series")
    min_cipo = float(np.min(cipo))
    max_lk = float(np.max(lk))
    bad = (cipo < CIPO_HAZARD_M) | (lk > LK_HAZARD_M)
    hazard = bool(bad.any())
    frame = int(np.argmax(bad)) if hazard else None
    return RunMetrics(min_cipo=min_cipo, max_lk=max_lk, hazard=hazard, hazard_frame=frame)


def is_critical(golden_delta_long: float, golden_delta_lat: float,
                cf_delta_long: float, cf_delta_lat: float) -> bool:
    """A (frame, fault) pair qualifies iff the golden frame was safe and
    the counterfactual is not."""
    golden_safe = golden_delta_long > 0 and golden_delta_lat > 0
    cf_unsafe = cf_delta_long <= 0 or cf_delta_lat <= 0
    return golden_safe and cf_unsafe
