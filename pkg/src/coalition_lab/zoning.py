"""Density-first partition of target points into circular zones.

:func:`mean_shift` is the flat-window blurring variant: every point is
replaced by the mean of the current points within ``radius`` of it, all at
once, until the average displacement falls to ``shift_tolerance``.
:func:`assign_zones` calls it repeatedly on whatever points are still
unclaimed and lets each discovered centre claim every point within
``radius``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class MeanShiftConfig:
    radius: float
    shift_tolerance: float = 1e-6
    max_iterations: int = 100
    merge_tolerance: float | None = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be > 0")
        if self.shift_tolerance < 0:
            raise ValueError("shift_tolerance must be >= 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.merge_tolerance is not None and self.merge_tolerance < 0:
            raise ValueError("merge_tolerance must be >= 0")

    @property
    def merge_distance(self) -> float:
        return 1e-4 * self.radius if self.merge_tolerance is None else self.merge_tolerance


@dataclass
class ZoneSet:
    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    membership: list[list[int]] = field(default_factory=list)
    radius: float = 0.0

    def __len__(self) -> int:
        return len(self.centers)

    def zone_of(self, point_index: int) -> int:
        for z, members in enumerate(self.membership):
            if point_index in members:
                return z
        raise KeyError(point_index)


def _as_points(points) -> np.ndarray:
    return np.asarray(points, dtype=np.float64).reshape(-1, 2)


def _dedup(points: np.ndarray, tol: float) -> np.ndarray:
    kept: list[np.ndarray] = []
    for p in points:
        if not any(np.hypot(*(p - q)) <= tol for q in kept):
            kept.append(p)
    return np.array(kept).reshape(-1, 2)


def shift_once(points: np.ndarray, radius: float) -> np.ndarray:
    """Replace every point by the mean of the points within ``radius`` of it."""
    diff = points[:, None, :] - points[None, :, :]
    window = np.sum(diff * diff, axis=-1) <= radius * radius
    return (window @ points) / window.sum(axis=1, keepdims=True)


def mean_shift(points, cfg: MeanShiftConfig) -> np.ndarray:
    """Converged, de-duplicated window centres of ``points``."""
    p = _as_points(points)
    if len(p) == 0:
        raise ValueError("mean_shift needs at least one point")
    for _ in range(cfg.max_iterations):
        u = shift_once(p, cfg.radius)
        moved = np.mean(np.sqrt(np.sum((u - p) ** 2, axis=1)))
        if moved <= cfg.shift_tolerance:
            break
        p = u
    return _dedup(p, cfg.merge_distance)


def assign_zones(targets, cfg: MeanShiftConfig) -> ZoneSet:
    """Densest-first zoning: shift, claim points within ``radius``, repeat.

    Each point belongs to the first centre (in discovery order) within
    ``radius`` of it.
    """
    pts = _as_points(targets)
    remaining = list(range(len(pts)))
    centers: list[np.ndarray] = []
    membership: list[list[int]] = []
    r2 = cfg.radius * cfg.radius
    while remaining:
        found = mean_shift(pts[remaining], cfg)
        for g in found:
            if not any(np.hypot(*(g - c)) <= cfg.merge_distance for c in centers):
                centers.append(g)
                membership.append([])
        left = []
        for i in remaining:
            for z, c in enumerate(centers):
                d = pts[i] - c
                if d @ d <= r2:
                    membership[z].append(i)
                    break
            else:
                left.append(i)
        if len(left) == len(remaining):
            # guard against a stall: seed a zone on the first unclaimed point
            centers.append(pts[left[0]].copy())
            membership.append([])
            continue
        remaining = left
    keep = [z for z, m in enumerate(membership) if m]
    return ZoneSet(np.array([centers[z] for z in keep]).reshape(-1, 2),
                   [sorted(membership[z]) for z in keep], cfg.radius)


def coverage_ok(targets, zones: ZoneSet) -> bool:
    """Every point lies within the zone radius of the centre that owns it."""
    pts = _as_points(targets)
    owned = sorted(i for m in zones.membership for i in m)
    if owned != list(range(len(pts))):
        return False
    for c, members in zip(zones.centers, zones.membership):
        for i in members:
            if np.hypot(*(pts[i] - c)) > zones.radius + 1e-12:
                return False
    return True


def zone_count_lower_bound(targets, radius: float) -> int:
    """Greedy disk-cover count with disks centred on the points themselves."""
    if not radius > 0:
        raise ValueError("radius must be > 0")
    pts = _as_points(targets)
    remaining = np.ones(len(pts), dtype=bool)
    count = 0
    while remaining.any():
        idx = np.flatnonzero(remaining)
        diff = pts[idx][:, None, :] - pts[idx][None, :, :]
        cover = np.sum(diff * diff, axis=-1) <= radius * radius
        best = int(np.argmax(cover.sum(axis=1)))
        remaining[idx[cover[best]]] = False
        count += 1
    return count
