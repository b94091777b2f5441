"""Analytic obstacle field made of spheres and axis-aligned boxes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        if not np.all(np.asarray(self.hi, float) > np.asarray(self.lo, float)):
            raise ValueError("box must have positive extent on every axis")


def _sign(x):
    return np.where(x >= 0, 1.0, -1.0)


def _sphere_sdf(p: np.ndarray, s: Sphere):
    d = p - np.asarray(s.center, float)
    n = np.linalg.norm(d, axis=1)
    grad = np.zeros_like(p)
    far = n > 0
    grad[far] = d[far] / n[far, None]
    grad[~far] = (1.0, 0.0, 0.0)
    return n - s.radius, grad


def _box_sdf(p: np.ndarray, b: Box):
    lo = np.asarray(b.lo, float)
    hi = np.asarray(b.hi, float)
    c = 0.5 * (lo + hi)
    h = 0.5 * (hi - lo)
    rel = p - c
    q = np.abs(rel) - h
    qpos = np.maximum(q, 0.0)
    outside = np.linalg.norm(qpos, axis=1)
    qmax = q.max(axis=1)
    dist = outside + np.minimum(qmax, 0.0)
    grad = np.zeros_like(p)
    out = outside > 0
    grad[out] = _sign(rel[out]) * qpos[out] / outside[out, None]
    inside = ~out
    if np.any(inside):
        axis = np.argmax(q[inside], axis=1)
        rows = np.nonzero(inside)[0]
        grad[rows, axis] = _sign(rel[rows, axis])
    return dist, grad


@dataclass(frozen=True)
class ObstacleField:
    spheres: tuple = field(default_factory=tuple)
    boxes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "spheres", tuple(self.spheres))
        object.__setattr__(self, "boxes", tuple(self.boxes))

    @property
    def primitives(self) -> list:
        return list(self.spheres) + list(self.boxes)

    def __len__(self) -> int:
        return len(self.spheres) + len(self.boxes)

    def signed_distance_many(self, points):
        """Distances ``(S,)`` and gradients ``(S, 3)`` to the nearest primitive.

        Equidistant primitives resolve to the lowest index (spheres first).
        An empty field reports ``+inf`` with zero gradient.
        """
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        best = np.full(len(p), np.inf)
        grad = np.zeros_like(p)
        for prim in self.primitives:
            d, g = _sphere_sdf(p, prim) if isinstance(prim, Sphere) else _box_sdf(p, prim)
            closer = d < best
            best[closer] = d[closer]
            grad[closer] = g[closer]
        return best, grad

    def to_dict(self) -> dict:
        return {
            "spheres": [{"center": list(map(float, s.center)), "radius": float(s.radius)} for s in self.spheres],
            "boxes": [{"min": list(map(float, b.lo)), "max": list(map(float, b.hi))} for b in self.boxes],
        }


def signed_distance(field: ObstacleField, p):
    """Signed distance from one point to ``field`` and its spatial gradient."""
    d, g = field.signed_distance_many(np.asarray(p, dtype=float).reshape(1, 3))
    return float(d[0]), g[0]
