"""Sim(3) transforms, closed-form weighted alignment and per-point influence.

Points are plain ``numpy`` arrays: a single point has shape ``(3,)`` and a
cloud has shape ``(N, 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateConfiguration,
    LengthMismatch,
    NonPositiveScale,
    TooFewPoints,
)

ORTHO_TOL = 1e-9
MIN_SCALE = 1e-9
COLLINEAR_RATIO = 1e-9


def as_cloud(points) -> np.ndarray:
    cloud = np.asarray(points, dtype=float)
    if cloud.ndim == 1:
        cloud = cloud.reshape(1, 3)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {cloud.shape}")
    return cloud


@dataclass(frozen=True, eq=False)
class Sim3Transform:
    """Similarity transform ``p -> scale * rotation @ p + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float).reshape(3, 3)
        trans = np.array(self.translation, dtype=float).reshape(3)
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        object.__setattr__(self, "scale", float(self.scale))
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise ValueError("transform has non-finite entries")
        if not self.scale > 0:
            raise NonPositiveScale(f"scale must be positive, got {self.scale}")

    @classmethod
    def identity(cls) -> "Sim3Transform":
        return cls()

    def is_valid(self, tol: float = ORTHO_TOL) -> bool:
        r = self.rotation
        return (
            np.abs(r.T @ r - np.eye(3)).max() <= tol
            and abs(np.linalg.det(r) - 1.0) <= tol
            and self.scale > 0
        )

    def apply(self, points) -> np.ndarray:
        return apply(self, points)

    def inverse(self) -> "Sim3Transform":
        return inverse(self)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m

    def allclose(self, other: "Sim3Transform", atol: float = 1e-9) -> bool:
        return (
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
            and abs(self.scale - other.scale) <= atol
        )

    def __repr__(self) -> str:
        return (
            f"Sim3Transform(scale={self.scale:.6g}, "
            f"translation={np.array2string(self.translation, precision=4)}, "
            f"rotation={np.array2string(self.rotation, precision=4)})"
        )


@dataclass(frozen=True)
class InfluenceSummary:
    """Per-point diagonal blocks of the registration information matrix."""

    scale_info: float
    rotation_info: float
    translation_info: np.ndarray = field(default_factory=lambda: np.eye(3))


def apply(T: Sim3Transform, points) -> np.ndarray:
    """Map one point ``(3,)`` or a cloud ``(N, 3)`` through ``T``."""
    p = np.asarray(points, dtype=float)
    return T.scale * (p @ T.rotation.T) + T.translation


def compose(A: Sim3Transform, B: Sim3Transform) -> Sim3Transform:
    """Transform equivalent to applying ``B`` first, then ``A``."""
    return Sim3Transform(
        rotation=A.rotation @ B.rotation,
        translation=A.scale * (A.rotation @ B.translation) + A.translation,
        scale=A.scale * B.scale,
    )


def inverse(T: Sim3Transform) -> Sim3Transform:
    rt = T.rotation.T
    return Sim3Transform(
        rotation=rt,
        translation=-(rt @ T.translation) / T.scale,
        scale=1.0 / T.scale,
    )


def rotation_from_axis_angle(omega) -> np.ndarray:
    """Rodrigues formula; ``omega`` is axis * angle in radians."""
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    if theta < 1e-12:
        k = np.array(
            [[0.0, -omega[2], omega[1]], [omega[2], 0.0, -omega[0]], [-omega[1], omega[0], 0.0]]
        )
        return np.eye(3) + k
    axis = omega / theta
    k = np.array(
        [[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]]
    )
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def rotation_angle(R: np.ndarray) -> float:
    """Rotation angle of ``R`` in radians."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_sim3(
    rng: np.random.Generator,
    scale_range: tuple[float, float] = (0.5, 2.0),
    translation_scale: float = 10.0,
) -> Sim3Transform:
    return Sim3Transform(
        rotation=random_rotation(rng),
        translation=rng.uniform(-translation_scale, translation_scale, size=3),
        scale=rng.uniform(*scale_range),
    )


def check_non_collinear(cloud: np.ndarray, weights: Optional[np.ndarray] = None) -> None:
    """Raise ``DegenerateConfiguration`` if the (weighted) cloud spans < 2 dims."""
    if weights is None:
        weights = np.full(len(cloud), 1.0 / len(cloud))
    mu = weights @ cloud
    centered = (cloud - mu) * np.sqrt(weights)[:, None]
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] <= 0.0 or sv[1] < COLLINEAR_RATIO * sv[0]:
        raise DegenerateConfiguration("source points are coincident or collinear")


def align_closed_form(
    src,
    dst,
    weights: Optional[Sequence[float]] = None,
    scale_bounds: Optional[tuple[float, float]] = None,
) -> Sim3Transform:
    """Weighted least-squares Sim(3) fit mapping ``src`` onto ``dst``.

    Minimizes ``sum_i w_i * ||dst_i - (s R src_i + t)||^2`` with ``det(R) = +1``
    and ``s > 0``. When the best orthogonal fit is a reflection the sign of the
    weakest singular direction is flipped.

    Parameters
    ----------
    src, dst : array_like, shape (N, 3)
        Corresponding point sets, ``N >= 3``.
    weights : array_like, shape (N,), optional
        Non-negative weights with a positive sum. Uniform when omitted.
    scale_bounds : (float, float), optional
        Clamp for the recovered scale. Disabled by default.

    Raises
    ------
    TooFewPoints
        Fewer than three pairs.
    DegenerateConfiguration
        ``src`` is collinear or coincident.
    NonPositiveScale
        The recovered scale collapsed to ``<= 1e-9``.
    """
    src = as_cloud(src)
    dst = as_cloud(dst)
    if len(src) != len(dst):
        raise LengthMismatch(f"{len(src)} source vs {len(dst)} target points")
    if len(src) < 3:
        raise TooFewPoints(f"need at least 3 correspondences, got {len(src)}")

    if weights is None:
        w = np.full(len(src), 1.0 / len(src))
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(src),) or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite, non-negative, one per pair")
        total = w.sum()
        if total <= 0:
            raise ValueError("weights must have a positive sum")
        w = w / total

    mu_s = w @ src
    mu_d = w @ dst
    xs = src - mu_s
    yd = dst - mu_d

    sv_src = np.linalg.svd(xs * np.sqrt(w)[:, None], compute_uv=False)
    if sv_src[0] <= 0.0 or sv_src[1] < COLLINEAR_RATIO * sv_src[0]:
        raise DegenerateConfiguration("source points are coincident or collinear")

    cov = (yd * w[:, None]).T @ xs
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = (U * S) @ Vt
    var_s = float(np.sum(w * np.einsum("ij,ij->i", xs, xs)))
    s = float(D @ S) / var_s
    if not s > MIN_SCALE:
        raise NonPositiveScale(f"recovered scale {s:.3g} is not positive")
    if scale_bounds is not None:
        s = float(np.clip(s, *scale_bounds))
    t = mu_d - s * (R @ mu_s)
    return Sim3Transform(rotation=R, translation=t, scale=s)


def residuals(T: Sim3Transform, src, dst) -> np.ndarray:
    """Per-pair residual norms ``||dst_i - T(src_i)||``, order preserved."""
    src = as_cloud(src)
    dst = as_cloud(dst)
    if len(src) != len(dst):
        raise LengthMismatch(f"{len(src)} source vs {len(dst)} target points")
    diff = dst - apply(T, src)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def influence(p_centered, scale: float) -> InfluenceSummary:
    """Information carried by one centroid-relative point about scale and rotation.

    The scale block is ``||p'||^2``, the rotation block ``scale^2 ||p'||^2``;
    the translation block is the identity regardless of the point.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    p = np.asarray(p_centered, dtype=float).reshape(3)
    sq = float(p @ p)
    return InfluenceSummary(scale_info=sq, rotation_info=scale * scale * sq)
