from dataclasses import dataclass
from typing import Tuple

import numpy as np


def wrap_angle(angle):
    """Wrap an angle (or array of angles) into (-pi, pi]."""
    wrapped = np.arctan2(np.sin(angle), np.cos(angle))
    wrapped = np.where(wrapped <= -np.pi, wrapped + 2.0 * np.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def cumulative_lengths(points: np.ndarray) -> np.ndarray:
    if len(points) < 2:
        return np.zeros(len(points))
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def segment_headings(points: np.ndarray) -> np.ndarray:
    delta = np.diff(points, axis=0)
    return np.arctan2(delta[:, 1], delta[:, 0])


@dataclass(frozen=True)
class Projection:
    distance: float
    arc: float
    segment: int
    lateral: float


class Polyline:
    """An ordered 2D polyline with arc-length queries.

    Single-point polylines are allowed; projection onto them is the point
    distance with arc position 0.
    """

    def __init__(self, points):
        self.points = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(self.points) == 0:
            raise ValueError("polyline needs at least one point")
        self.cumulative = cumulative_lengths(self.points)
        self.length = float(self.cumulative[-1]) if len(self.points) > 1 else 0.0

    def __len__(self) -> int:
        return len(self.points)

    def _segments(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        start = self.points[:-1]
        delta = self.points[1:] - start
        seg_len_sq = np.einsum("ij,ij->i", delta, delta)
        return start, delta, seg_len_sq

    def project(self, point, s_min: float = 0.0) -> Projection:
        """Project a point onto the polyline, restricted to arc positions >= s_min."""
        p = np.asarray(point, dtype=float)
        if len(self.points) == 1:
            offset = p - self.points[0]
            return Projection(float(np.hypot(*offset)), 0.0, 0, 0.0)
        start, delta, seg_len_sq = self._segments()
        seg_len = np.sqrt(seg_len_sq)
        safe_sq = np.where(seg_len_sq > 0, seg_len_sq, 1.0)
        t = np.einsum("ij,ij->i", p - start, delta) / safe_sq
        s_min = min(max(s_min, 0.0), self.length)
        lower = np.zeros_like(t)
        if s_min > 0.0:
            safe_len = np.where(seg_len > 0, seg_len, 1.0)
            lower = np.clip((s_min - self.cumulative[:-1]) / safe_len, 0.0, None)
        valid = self.cumulative[1:] >= s_min - 1e-12
        t = np.clip(t, lower, 1.0)
        foot = start + t[:, None] * delta
        dist = np.linalg.norm(foot - p, axis=1)
        dist = np.where(valid, dist, np.inf)
        idx = int(np.argmin(dist))
        arc = float(self.cumulative[idx] + t[idx] * seg_len[idx])
        d = delta[idx]
        cross = d[0] * (p[1] - start[idx][1]) - d[1] * (p[0] - start[idx][0])
        lateral = float(dist[idx]) if cross >= 0 else -float(dist[idx])
        return Projection(float(dist[idx]), arc, idx, lateral)

    def distances(self, points) -> np.ndarray:
        """Point-to-polyline distances for an (M, 2) array of points."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(self.points) == 1:
            return np.linalg.norm(pts - self.points[0], axis=1)
        start, delta, seg_len_sq = self._segments()
        safe_sq = np.where(seg_len_sq > 0, seg_len_sq, 1.0)
        rel = pts[:, None, :] - start[None, :, :]
        t = np.clip(np.einsum("msj,sj->ms", rel, delta) / safe_sq, 0.0, 1.0)
        foot = start[None, :, :] + t[..., None] * delta[None, :, :]
        return np.linalg.norm(foot - pts[:, None, :], axis=2).min(axis=1)

    def point_at(self, arc) -> np.ndarray:
        """Interpolated position(s) at arc length(s), clamped to the polyline."""
        arc = np.clip(np.asarray(arc, dtype=float), 0.0, self.length)
        if len(self.points) == 1:
            return np.broadcast_to(self.points[0], arc.shape + (2,)).copy()
        x = np.interp(arc, self.cumulative, self.points[:, 0])
        y = np.interp(arc, self.cumulative, self.points[:, 1])
        return np.stack([x, y], axis=-1)

    def heading_at(self, arc: float) -> float:
        if len(self.points) == 1:
            return 0.0
        headings = segment_headings(self.points)
        idx = int(np.searchsorted(self.cumulative, arc, side="right")) - 1
        idx = min(max(idx, 0), len(headings) - 1)
        return float(headings[idx])

    def slice_from(self, arc: float) -> np.ndarray:
        """Points of the polyline from arc position onwards, starting with the interpolated point."""
        arc = min(max(arc, 0.0), self.length)
        head = self.point_at(arc)
        tail = self.points[self.cumulative > arc + 1e-9]
        return np.vstack([head[None, :], tail])

    def slice_to(self, arc: float) -> np.ndarray:
        arc = min(max(arc, 0.0), self.length)
        body = self.points[self.cumulative < arc - 1e-9]
        end = self.point_at(arc)
        return np.vstack([body, end[None, :]])


def resample(points: np.ndarray, count: int) -> np.ndarray:
    """Resample a polyline to `count` points equally spaced in arc length."""
    line = Polyline(points)
    arcs = np.linspace(0.0, line.length, count)
    return line.point_at(arcs)


def heading_difference(a: float, b: float) -> float:
    return abs(wrap_angle(a - b))
