"""Bicycle-model vehicle kinematics and the emergency-stop maneuver.

The motion model is the standard kinematic bicycle:

    dx/dt     = v cos(theta)
    dy/dt     = v sin(theta)
    dtheta/dt = v tan(phi) / L

Integration is classical fixed-step RK4.  The emergency-stop maneuver
brakes at the maximum comfortable deceleration with the steering angle
frozen, so the path is a constant-curvature arc traversed under constant
deceleration until the vehicle is at rest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "VehicleState",
    "KinematicParams",
    "StopResult",
    "wrap_angle",
    "motion_derivatives",
    "rk4_step",
    "emergency_stop",
]


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    wrapped = (theta + math.pi) % (2.0 * math.pi) - math.pi
    if wrapped == -math.pi:
        wrapped = math.pi
    return wrapped


@dataclass
class VehicleState:
    x: float = 0.0      # m
    y: float = 0.0      # m
    v: float = 0.0      # m/s, forward speed, never negative
    theta: float = 0.0  # rad, heading in the world frame
    phi: float = 0.0    # rad, front-wheel steering angle


@dataclass(frozen=True)
class KinematicParams:
    wheelbase: float = 2.7        # m
    a_max: float = 5.0            # m/s^2, max comfortable deceleration
    dt: float = 1.0 / 7.5         # s, one scene at the sensing rate
    phi_max: float = math.pi / 4  # rad, steering lock

    def __post_init__(self) -> None:
        if not (self.wheelbase > 0 and self.a_max > 0 and self.dt > 0):
            raise ValueError("wheelbase, a_max and dt must be positive")
        if not 0 < self.phi_max < math.pi / 2:
            raise ValueError("phi_max must lie in (0, pi/2)")


@dataclass(frozen=True)
class StopResult:
    """Outcome of an emergency stop from a given state.

    d_stop_long is the displacement along the initial heading,
    d_stop_lat perpendicular to it (positive to the left).  path holds
    sampled (x, y) points of the braking arc, last row at rest.
    """

    t_stop: float        # s
    d_stop_long: float   # m
    d_stop_lat: float    # m, signed
    path: np.ndarray     # (n, 2) world coordinates


def _require_finite(state: VehicleState) -> None:
    fields = (state.x, state.y, state.v, state.theta, state.phi)
    if not all(math.isfinite(f) for f in fields):
        raise ValueError(f"non-finite vehicle state: {state}")


def motion_derivatives(state: VehicleState, params: KinematicParams) -> tuple[float, float, float]:
    """Return (dx/dt, dy/dt, dtheta/dt) for the bicycle model."""
    _require_finite(state)
    v = max(state.v, 0.0)
    phi = min(max(state.phi, -params.phi_max), params.phi_max)
    return (
        v * math.cos(state.theta),
        v * math.sin(state.theta),
        v * math.tan(phi) / params.wheelbase,
    )


def rk4_step(
    state: VehicleState,
    accel: float,
    steer_rate: float,
    params: KinematicParams,
    h: float,
) -> VehicleState:
    """Advance the full state one RK4 step of size h.

    accel and steer_rate are held constant over the step.  The returned
    state has v clamped at zero (no reversing under braking) and phi
    clamped to the steering lock.
    """
    _require_finite(state)
    if not (math.isfinite(accel) and math.isfinite(steer_rate) and math.isfinite(h)):
        raise ValueError("accel, steer_rate and h must be finite")
    if h <= 0:
        raise ValueError("step size must be positive")

    L = params.wheelbase
    phi_max = params.phi_max

    def deriv(x, y, th, v, ph):
        vv = v if v > 0.0 else 0.0
        pp = min(max(ph, -phi_max), phi_max)
        return (
            vv * math.cos(th),
            vv * math.sin(th),
            vv * math.tan(pp) / L,
            accel,
            steer_rate,
        )

    s0 = (state.x, state.y, state.theta, state.v, state.phi)
    k1 = deriv(*s0)
    k2 = deriv(*(a + 0.5 * h * b for a, b in zip(s0, k1)))
    k3 = deriv(*(a + 0.5 * h * b for a, b in zip(s0, k2)))
    k4 = deriv(*(a + h * b for a, b in zip(s0, k3)))

    x, y, th, v, ph = (
        a + (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        for a, b1, b2, b3, b4 in zip(s0, k1, k2, k3, k4)
    )
    return VehicleState(
        x=x,
        y=y,
        v=max(v, 0.0),
        theta=wrap_angle(th),
        phi=min(max(ph, -phi_max), phi_max),
    )


def emergency_stop(
    initial: VehicleState,
    params: KinematicParams,
    path_samples: int = 24,
) -> StopResult:
    """Brake at a_max with frozen steering until the vehicle stops.

    Integrates (x, y, theta, v) with dv/dt = -a_max and phi frozen at
    its initial value, step h = dt/10.  The stop time v0/a_max is exact
    for constant deceleration, so the final partial step lands on v = 0
    by construction (linear event interpolation in time).
    """
    _require_finite(initial)
    if initial.v < 0:
        raise ValueError("initial speed must be non-negative")

    v0 = initial.v
    a = params.a_max
    t_stop = v0 / a
    phi0 = min(max(initial.phi, -params.phi_max), params.phi_max)
    kappa = math.tan(phi0) / params.wheelbase
    L = params.wheelbase

    if v0 == 0.0:
        pt = np.array([[initial.x, initial.y]])
        return StopResult(t_stop=0.0, d_stop_long=0.0, d_stop_lat=0.0, path=pt)

    h = params.dt / 10.0
    n_full = int(t_stop / h)
    h_last = t_stop - n_full * h
    n_steps = n_full + (1 if h_last > 1e-15 else 0)

    stride = max(1, n_steps // max(path_samples - 1, 1))

    x, y, th, v = initial.x, initial.y, initial.theta, v0
    tan_phi = math.tan(phi0)
    pts = [(x, y)]

    def rk4(x, y, th, v, hh):
        # inline 4-stage update of (x, y, theta, v); dv/dt constant
        c1, s1 = math.cos(th), math.sin(th)
        d1 = v * tan_phi / L
        v2 = max(v - 0.5 * hh * a, 0.0)
        th2 = th + 0.5 * hh * d1
        c2, s2 = math.cos(th2), math.sin(th2)
        d2 = v2 * tan_phi / L
        th3 = th + 0.5 * hh * d2
        c3, s3 = math.cos(th3), math.sin(th3)
        d3 = v2 * tan_phi / L
        v4 = max(v - hh * a, 0.0)
        th4 = th + hh * d3
        c4, s4 = math.cos(th4), math.sin(th4)
        d4 = v4 * tan_phi / L
        x += (hh / 6.0) * (v * c1 + 2.0 * v2 * (c2 + c3) + v4 * c4)
        y += (hh / 6.0) * (v * s1 + 2.0 * v2 * (s2 + s3) + v4 * s4)
        th += (hh / 6.0) * (d1 + 2.0 * (d2 + d3) + d4)
        v = max(v - hh * a, 0.0)
        return x, y, th, v

    for i in range(n_full):
        x, y, th, v = rk4(x, y, th, v, h)
        if (i + 1) % stride == 0:
            pts.append((x, y))
    if h_last > 1e-15:
        x, y, th, v = rk4(x, y, th, v, h_last)
    if pts[-1] != (x, y):
        pts.append((x, y))

    dx = x - initial.x
    dy = y - initial.y
    c0, s0 = math.cos(initial.theta), math.sin(initial.theta)
    return StopResult(
        t_stop=t_stop,
        d_stop_long=dx * c0 + dy * s0,
        d_stop_lat=-dx * s0 + dy * c0,
        path=np.asarray(pts),
    )
