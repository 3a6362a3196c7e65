"""Registry of per-frame driving-stack variables.

Every variable the stack writes each scene is declared here once, with
its value type, bounds, the fault rules that apply to it, and its
data-flow parents.  The fault engine enumerates its catalog from this
table and the temporal Bayesian network derives its topology from the
declared parent lists, so the three subsystems cannot drift apart.

Variables are named "module.variable".  The inertial.* entries carry the
physical vehicle state closing the loop; they are part of the learned
model but are not injection targets (faults corrupt what the software
stack reads and writes, not the physics).
"""
from __future__ import annotations

from dataclasses import dataclass, field

__all__ = [
    "VariableSpec",
    "REGISTRY",
    "OBSTACLE_CLASSES",
    "LANE_TYPES",
    "registry_names",
    "injectable_names",
    "get_spec",
    "numeric_columns",
    "numeric_parents_intra",
    "numeric_parents_prev",
    "encode_value",
    "check_acyclic",
]

OBSTACLE_CLASSES = ("disappear", "pedestrian", "vehicle", "cyclist")
LANE_TYPES = ("normal", "disappear")


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str                      # "bounded" | "unbounded" | "categorical"
    bounds: tuple[float, float] | None = None
    categories: tuple[str, ...] | None = None
    intra_parents: tuple[str, ...] = ()
    prev_parents: tuple[str, ...] = ()
    injectable: bool = True

    def __post_init__(self) -> None:
        if self.kind not in ("bounded", "unbounded", "categorical"):
            raise ValueError(f"bad kind for {self.name}: {self.kind}")
        if self.kind == "bounded" and self.bounds is None:
            raise ValueError(f"{self.name}: bounded variables need bounds")
        if self.kind == "categorical" and not self.categories:
            raise ValueError(f"{self.name}: categorical variables need categories")


def _v(name, kind, *, bounds=None, categories=None, intra=(), prev=(), injectable=True):
    return VariableSpec(
        name=name, kind=kind, bounds=bounds, categories=categories,
        intra_parents=tuple(intra), prev_parents=tuple(prev), injectable=injectable,
    )


# Order matters: it is the write order within a frame, and the intra-slice
# edges must always point forward through this list.
REGISTRY: tuple[VariableSpec, ...] = (
    # physical state (sensed by the stack, driven by last frame's actuation)
    _v("inertial.speed", "unbounded", injectable=False,
       prev=("inertial.speed", "actuation.throttle", "actuation.brake")),
    _v("inertial.accel", "unbounded", injectable=False,
       prev=("actuation.throttle", "actuation.brake")),
    _v("inertial.heading", "unbounded", injectable=False,
       prev=("inertial.heading", "inertial.speed", "actuation.steer")),
    # raw sensing of the closest in-path obstacle
    _v("perception.camera_object_distance", "unbounded",
       prev=("perception.sensor_fused_obstacle_distance", "inertial.speed")),
    _v("perception.camera_object_class", "categorical", categories=OBSTACLE_CLASSES,
       prev=("perception.sensor_fused_obstacle_class",)),
    _v("perception.lidar_object_distance", "unbounded",
       prev=("perception.sensor_fused_obstacle_distance", "inertial.speed")),
    _v("perception.lidar_object_class", "categorical", categories=OBSTACLE_CLASSES,
       prev=("perception.sensor_fused_obstacle_class",)),
    # fused world model
    _v("perception.sensor_fused_obstacle_distance", "unbounded",
       intra=("perception.camera_object_distance", "perception.lidar_object_distance")),
    _v("perception.sensor_fused_obstacle_class", "categorical", categories=OBSTACLE_CLASSES,
       intra=("perception.camera_object_class", "perception.lidar_object_class")),
    # lane perception
    _v("perception.lane_type", "categorical", categories=LANE_TYPES,
       prev=("perception.lane_type",)),
    _v("perception.lane_width", "bounded", bounds=(2.5, 5.0),
       prev=("perception.lane_width",)),
    _v("perception.lane_offset", "unbounded",
       prev=("perception.lane_offset", "actuation.steer")),
    _v("perception.lane_curvature", "unbounded",
       prev=("perception.lane_curvature",)),
    # planning inputs and outputs
    _v("planning.vehicle_speed", "unbounded", intra=("inertial.speed",)),
    _v("planning.vehicle_accel", "unbounded", intra=("inertial.accel",)),
    _v("planning.vehicle_heading", "unbounded", intra=("inertial.heading",)),
    _v("planning.obstacle_gap", "unbounded",
       intra=("perception.sensor_fused_obstacle_distance",)),
    _v("planning.obstacle_speed", "unbounded",
       intra=("perception.sensor_fused_obstacle_distance",),
       prev=("perception.sensor_fused_obstacle_distance",)),
    _v("planning.target_speed", "unbounded",
       intra=("planning.obstacle_gap", "planning.obstacle_speed",
              "planning.vehicle_speed", "perception.sensor_fused_obstacle_class",
              "perception.lane_curvature"),
       prev=("planning.target_speed",)),
    # raw actuation from the planner
    _v("control.u_throttle", "bounded", bounds=(0.0, 1.0),
       intra=("planning.target_speed", "planning.vehicle_speed")),
    _v("control.u_brake", "bounded", bounds=(0.0, 1.0),
       intra=("planning.target_speed", "planning.vehicle_speed", "planning.obstacle_gap")),
    _v("control.u_steer", "bounded", bounds=(-1.0, 1.0),
       intra=("perception.lane_offset", "perception.lane_curvature",
              "perception.lane_type", "planning.vehicle_heading")),
    # actuation smoothing
    _v("control.pid_measured_value", "bounded", bounds=(0.0, 1.0),
       prev=("actuation.throttle",)),
    _v("control.pid_output", "bounded", bounds=(0.0, 1.0),
       intra=("control.u_throttle", "control.pid_measured_value")),
    _v("actuation.throttle", "bounded", bounds=(0.0, 1.0),
       intra=("control.pid_output",), prev=("actuation.throttle",)),
    _v("actuation.brake", "bounded", bounds=(0.0, 1.0),
       intra=("control.u_brake",), prev=("actuation.brake",)),
    _v("actuation.steer", "bounded", bounds=(-1.0, 1.0),
       intra=("control.u_steer",), prev=("actuation.steer",)),
)

_BY_NAME = {spec.name: spec for spec in REGISTRY}
if len(_BY_NAME) != len(REGISTRY):
    raise RuntimeError("duplicate registry names")


def registry_names() -> list[str]:
    return [s.name for s in REGISTRY]


def injectable_names() -> list[str]:
    return [s.name for s in REGISTRY if s.injectable]


def get_spec(name: str) -> VariableSpec:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise KeyError(f"unknown registry variable {name!r}") from None


def check_acyclic() -> None:
    """Intra-slice edges must respect the registry write order."""
    pos = {s.name: i for i, s in enumerate(REGISTRY)}
    for spec in REGISTRY:
        for p in spec.intra_parents:
            if p not in pos:
                raise ValueError(f"{spec.name}: unknown intra parent {p}")
            if pos[p] >= pos[spec.name]:
                raise ValueError(
                    f"intra edge {p} -> {spec.name} goes against write order"
                )
        for p in spec.prev_parents:
            if p not in pos:
                raise ValueError(f"{spec.name}: unknown prev parent {p}")


check_acyclic()


def _indicator_cols(spec: VariableSpec) -> list[str]:
    return [f"{spec.name}={c}" for c in spec.categories]


def numeric_columns() -> list[str]:
    """Flat numeric view: categoricals expand to one indicator per class."""
    cols: list[str] = []
    for spec in REGISTRY:
        if spec.kind == "categorical":
            cols.extend(_indicator_cols(spec))
        else:
            cols.append(spec.name)
    return cols


def _numeric_of(name: str) -> list[str]:
    spec = _BY_NAME[name]
    if spec.kind == "categorical":
        return _indicator_cols(spec)
    return [name]


def numeric_parents_intra(col: str) -> list[str]:
    base = col.split("=")[0]
    spec = _BY_NAME[base]
    out: list[str] = []
    for p in spec.intra_parents:
        out.extend(_numeric_of(p))
    return out


def numeric_parents_prev(col: str) -> list[str]:
    base = col.split("=")[0]
    spec = _BY_NAME[base]
    out: list[str] = []
    for p in spec.prev_parents:
        out.extend(_numeric_of(p))
    return out


def encode_value(name: str, value) -> dict[str, float]:
    """Expand one registry value into its numeric column(s)."""
    spec = _BY_NAME[name]
    if spec.kind == "categorical":
        if value not in spec.categories:
            raise ValueError(f"{name}: unknown category {value!r}")
        return {f"{name}={c}": 1.0 if c == value else 0.0 for c in spec.categories}
    return {name: float(value)}
