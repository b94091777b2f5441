"""Desired-formation generators.

All generators return a :class:`~pcrform.formation.FormationSpec` with ids
``0..count-1`` centered at the origin. Only ``random_3d`` is random and it is
fully determined by its seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .errors import UnsupportedCount
from .formation import FormationSpec


@dataclass(frozen=True)
class ShapeSpec:
    generator: str
    count: int
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __hash__(self):
        return hash((self.generator, self.count, tuple(sorted(self.params.items())), self.seed))


def _check(name: str, count: int, lo: int, hi: int) -> None:
    if not lo <= count <= hi:
        raise UnsupportedCount(f"{name} supports {lo}..{hi} agents, got {count}")


def _finish(P: np.ndarray, name: str) -> FormationSpec:
    P = np.asarray(P, dtype=float)
    return FormationSpec.from_array(P - P.mean(axis=0), name=name)


def cube_grid(count: int, pitch: float = 1.5) -> FormationSpec:
    """The first ``count`` nodes of an ``n x n x n`` lattice, x fastest, then y, then z."""
    _check("cube_grid", count, 4, 1000)
    n = math.ceil(round(count ** (1.0 / 3.0), 9))
    idx = np.arange(count)
    P = np.stack([idx % n, (idx // n) % n, idx // (n * n)], axis=1) * pitch
    return _finish(P, "cube_grid")


def _resample_curve(curve: np.ndarray, count: int, closed: bool = True) -> np.ndarray:
    pts = np.vstack([curve, curve[:1]]) if closed else curve
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    targets = np.arange(count) * total / (count if closed else count - 1)
    return np.stack([np.interp(targets, s, pts[:, d]) for d in range(pts.shape[1])], axis=1)


def heart_2d(count: int, spacing: float = 1.5) -> FormationSpec:
    """Planar heart outline with equal arc-length steps of about ``spacing``.

    The outline is a square standing on one corner with a semicircle on each
    upper edge, so the tip and the notch have finite angles. Sampling starts
    at the bottom tip.
    """
    _check("heart_2d", count, 6, 400)
    a = spacing * count / (2.0 + np.pi)
    h = a / np.sqrt(2.0)
    right, top, left = np.array([h, h]), np.array([0.0, 2 * h]), np.array([-h, h])
    u = np.linspace(0.0, 1.0, 1000, endpoint=False)[:, None]
    th = np.linspace(-0.25 * np.pi, 0.75 * np.pi, 1000, endpoint=False)
    arc_r = 0.5 * (right + top) + 0.5 * a * np.stack([np.cos(th), np.sin(th)], axis=1)
    arc_l = 0.5 * (top + left) + 0.5 * a * np.stack([np.cos(th + 0.5 * np.pi), np.sin(th + 0.5 * np.pi)], axis=1)
    curve = np.vstack([u * right, arc_r, arc_l, left + u * (0.0 - left)])
    P = _resample_curve(np.hstack([curve, np.zeros((len(curve), 1))]), count)
    P *= max(1.0, spacing / pdist(P).min())
    return _finish(P, "heart_2d")


def vertebral(count: int, spacing: float = 1.5) -> FormationSpec:
    """A gently S-curved column of vertebrae.

    Each vertebra contributes a body point, two transverse processes and a
    spinous process; vertebrae are stacked ``spacing`` apart along z.
    """
    _check("vertebral", count, 4, 600)
    pts = []
    k = 0
    while len(pts) < count:
        z = k * spacing
        sway = 0.5 * spacing * math.sin(math.pi * k / 6.0)
        body = np.array([0.0, sway, z])
        for off in ((0.0, 0.0), (spacing, 0.0), (-spacing, 0.0), (0.0, -spacing)):
            pts.append(body + np.array([off[0], off[1], 0.0]))
        k += 1
    return _finish(np.array(pts[:count]), "vertebral")


def random_3d(count: int, seed: int = 0, spacing: float = 1.5) -> FormationSpec:
    """Seeded points in a cube with pairwise distance at least ``0.8 * spacing``."""
    _check("random_3d", count, 4, 2000)
    rng = np.random.default_rng(seed)
    min_d = 0.8 * spacing
    side = spacing * count ** (1.0 / 3.0) * 1.3
    pts = []
    attempts = 0
    while len(pts) < count:
        cand = rng.uniform(0.0, side, size=3)
        if not pts or np.min(np.linalg.norm(np.asarray(pts) - cand, axis=1)) >= min_d:
            pts.append(cand)
        attempts += 1
        if attempts > 200 * count:
            side *= 1.1
            attempts = 0
    return _finish(np.array(pts), "random_3d")


def slender_rect(count: int = 24, length: float = 13.5, width: float = 1.5) -> FormationSpec:
    """Two parallel rows on the long edges of a ``length x width`` rectangle.

    With 24 agents each long edge holds 10 agents between the corners and each
    short edge holds its 2 corner agents.
    """
    _check("slender_rect", count, 8, 400)
    if count % 2:
        raise UnsupportedCount(f"slender_rect needs an even count, got {count}")
    xs = np.linspace(-length / 2, length / 2, count // 2)
    P = [(x, -width / 2, 0.0) for x in xs] + [(x, width / 2, 0.0) for x in xs]
    return _finish(np.array(P), "slender_rect")


def _farthest_points(cand: np.ndarray, count: int) -> np.ndarray:
    chosen = [int(np.argmax(cand[:, 2]))]
    d = np.linalg.norm(cand - cand[chosen[0]], axis=1)
    for _ in range(count - 1):
        k = int(np.argmax(d))
        chosen.append(k)
        d = np.minimum(d, np.linalg.norm(cand - cand[k], axis=1))
    return cand[chosen]


def rocket(count: int = 120, spacing: float = 1.5) -> FormationSpec:
    """Rocket silhouette: cylindrical body, conical nose and four fins.

    This is a parameterized approximation; agents are spread over a dense
    surface sampling by farthest-point selection starting at the nose tip,
    then the shape is rescaled so the closest pair is ``spacing`` apart.
    """
    _check("rocket", count, 10, 500)
    radius, body_h, nose_h, fin = 1.0, 6.0, 2.5, 1.6
    cand = []
    for z in np.linspace(0.0, body_h, 61):
        for a in np.linspace(0, 2 * np.pi, 48, endpoint=False):
            cand.append((radius * np.cos(a), radius * np.sin(a), z))
    for z in np.linspace(body_h, body_h + nose_h, 26):
        r = radius * (1.0 - (z - body_h) / nose_h)
        for a in np.linspace(0, 2 * np.pi, 48, endpoint=False):
            cand.append((r * np.cos(a), r * np.sin(a), z))
    for a in np.arange(4) * np.pi / 2 + np.pi / 4:
        u = np.array([np.cos(a), np.sin(a), 0.0])
        for rr in np.linspace(radius, radius + fin, 9):
            for z in np.linspace(-0.5, 2.0 - (rr - radius), 12):
                cand.append(tuple(rr * u + np.array([0.0, 0.0, z])))
    P = _farthest_points(np.unique(np.round(np.array(cand), 9), axis=0), count)
    P *= spacing / pdist(P).min()
    return _finish(P, "rocket")


GENERATORS = {
    "cube_grid": cube_grid,
    "heart_2d": heart_2d,
    "vertebral": vertebral,
    "random_3d": random_3d,
    "slender_rect": slender_rect,
    "rocket": rocket,
}


def generate_shape(spec: ShapeSpec) -> FormationSpec:
    """Dispatch on ``spec.generator`` with ``spec.params`` as keyword arguments."""
    if spec.generator not in GENERATORS:
        raise ValueError(f"unknown shape generator {spec.generator!r}")
    kwargs = dict(spec.params)
    if spec.generator == "random_3d":
        kwargs.setdefault("seed", spec.seed)
    return GENERATORS[spec.generator](spec.count, **kwargs)


def min_spacing(formation: FormationSpec) -> float:
    """Smallest pairwise distance between desired positions."""
    P = formation.positions()
    d, _ = cKDTree(P).query(P, k=2)
    return float(d[:, 1].min())
