"""Desk-scale fault-injection lab for a simplified autonomous driving stack.

The package couples a 2D scenario engine and layered driving stack with a
fault-injection engine and a temporal Bayesian network that mines the
(scene, fault) pairs most likely to break an otherwise safe run.
"""
from faultminer.kinematics import (
    KinematicParams,
    StopResult,
    VehicleState,
    emergency_stop,
    motion_derivatives,
    rk4_step,
)

__version__ = "0.1.0"
