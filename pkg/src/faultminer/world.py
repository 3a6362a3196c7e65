"""Road geometry and scripted world objects for the 2D scenario engine."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Lane", "WorldObject", "OBJECT_KINDS"]

OBJECT_KINDS = ("vehicle", "pedestrian", "cyclist", "static", "lane_boundary")


class Lane:
    """Ego lane described by a centerline polyline and a half width.

    Points are projected into the lane frame as (station, offset) where
    station is arc length along the centerline and offset is signed
    lateral distance, positive to the left of the travel direction.
    """

    def __init__(self, centerline, half_width: float):
        pts = np.asarray(centerline, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError("centerline must be an (n>=2, 2) array")
        if not np.isfinite(pts).all() or not (half_width > 0):
            raise ValueError("centerline and half_width must be finite and positive")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if (seg_len <= 0).any():
            raise ValueError("centerline has zero-length segments")
        self.points = pts
        self.half_width = float(half_width)
        self._seg = seg
        self._seg_len = seg_len
        self._tangent = seg / seg_len[:, None]
        self._station0 = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.length = float(self._station0[-1])

    def project(self, x: float, y: float) -> tuple[float, float, float]:
        """Project a point; returns (station, offset, lane heading)."""
        s, off, th = self.project_many(np.array([[x, y]]))
        return float(s[0]), float(off[0]), float(th[0])

    def project_many(self, pts: np.ndarray):
        """Vectorized projection of an (n, 2) array of points."""
        pts = np.asarray(pts, dtype=float)
        rel = pts[:, None, :] - self.points[None, :-1, :]          # (n, m, 2)
        t = np.einsum("nmk,mk->nm", rel, self._seg) / (self._seg_len**2)
        t = np.clip(t, 0.0, 1.0)
        foot = self.points[None, :-1, :] + t[:, :, None] * self._seg[None, :, :]
        d2 = np.sum((pts[:, None, :] - foot) ** 2, axis=2)
        idx = np.argmin(d2, axis=1)
        n = np.arange(len(pts))
        tb = t[n, idx]
        station = self._station0[idx] + tb * self._seg_len[idx]
        tang = self._tangent[idx]
        diff = pts - foot[n, idx]
        offset = -diff[:, 0] * tang[:, 1] + diff[:, 1] * tang[:, 0]
        heading = np.arctan2(tang[:, 1], tang[:, 0])
        return station, offset, heading

    def point_at(self, station: float) -> tuple[float, float]:
        s = min(max(station, 0.0), self.length)
        i = int(np.searchsorted(self._station0, s, side="right")) - 1
        i = min(max(i, 0), len(self._seg) - 1)
        t = (s - self._station0[i]) / self._seg_len[i]
        p = self.points[i] + t * self._seg[i]
        return float(p[0]), float(p[1])

    def heading_at(self, station: float) -> float:
        s = min(max(station, 0.0), self.length)
        i = int(np.searchsorted(self._station0, s, side="right")) - 1
        i = min(max(i, 0), len(self._seg) - 1)
        return float(math.atan2(self._tangent[i, 1], self._tangent[i, 0]))

    def curvature_at(self, station: float) -> float:
        """Discrete curvature from the heading change between segments."""
        s = min(max(station, 0.0), self.length)
        i = int(np.searchsorted(self._station0, s, side="right")) - 1
        i = min(max(i, 0), len(self._seg) - 1)
        if i + 1 >= len(self._seg):
            return 0.0
        th0 = math.atan2(self._tangent[i, 1], self._tangent[i, 0])
        th1 = math.atan2(self._tangent[i + 1, 1], self._tangent[i + 1, 0])
        dth = (th1 - th0 + math.pi) % (2 * math.pi) - math.pi
        ds = 0.5 * (self._seg_len[i] + self._seg_len[i + 1])
        return dth / ds


@dataclass
class WorldObject:
    """A circular object in the world; lane boundaries must be static."""

    obj_id: str
    kind: str
    position: np.ndarray                       # (2,) m
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))  # m/s
    radius: float = 0.5                        # m

    def __post_init__(self) -> None:
        if self.kind not in OBJECT_KINDS:
            raise ValueError(f"unknown object kind {self.kind!r}")
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        if self.radius <= 0 or not np.isfinite(self.position).all():
            raise ValueError("objects need a positive radius and finite position")
        if self.kind in ("static", "lane_boundary") and np.any(self.velocity != 0):
            raise ValueError(f"{self.kind} objects must have zero velocity")
