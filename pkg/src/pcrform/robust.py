"""RANSAC Sim(3) registration over id-matched correspondences."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DegenerateConfiguration,
    InvalidRatio,
    LengthMismatch,
    NoConsensus,
    NonPositiveScale,
    TooFewPoints,
)
from . import _kernels
from .geometry import Sim3Transform, align_closed_form, as_cloud, residuals

DEGENERATE_DRAW_FACTOR = 10


@dataclass(frozen=True)
class RansacConfig:
    inlier_threshold: float = 0.15
    confidence: float = 0.99
    max_iterations: int = 1000
    min_sample_size: int = 3
    rng_seed: int = 0
    scale_bounds: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.min_sample_size < 3:
            raise ValueError("min_sample_size must be >= 3")


@dataclass(frozen=True, eq=False)
class RobustRegistration:
    """Result of :func:`ransac_register`.

    ``inlier_mask`` is recomputed under the returned transform, so every
    flagged pair is within the threshold. ``fit_mask`` is the set the final
    refit actually used; the two differ only when the polish pass moved a
    borderline pair across the threshold.
    """

    transform: Sim3Transform
    inlier_mask: np.ndarray
    iterations_used: int
    inlier_residual_rms: float
    fit_mask: np.ndarray = field(default=None)
    best_count_history: tuple = ()

    @property
    def inlier_count(self) -> int:
        return int(self.inlier_mask.sum())


def required_iterations(confidence: float, inlier_ratio: float, sample_size: int) -> int:
    """Hypotheses needed to draw one all-inlier sample with ``confidence``."""
    if not 0.0 < confidence < 1.0:
        raise InvalidRatio(f"confidence {confidence} outside (0, 1)")
    if not 0.0 < inlier_ratio <= 1.0:
        raise InvalidRatio(f"inlier ratio {inlier_ratio} outside (0, 1]")
    good = inlier_ratio**sample_size
    if good >= 1.0:
        return 1
    denom = math.log1p(-good)
    if denom == 0.0:
        return 2**31 - 1
    return max(1, math.ceil(math.log1p(-confidence) / denom))


def _fit(src, dst, mask, cfg: RansacConfig) -> Sim3Transform:
    return align_closed_form(src[mask], dst[mask], scale_bounds=cfg.scale_bounds)


def refit_inliers(src, dst, mask, cfg: Optional[RansacConfig] = None) -> Sim3Transform:
    """Least-squares polish restricted to the pairs selected by ``mask``."""
    cfg = cfg or RansacConfig()
    src = as_cloud(src)
    dst = as_cloud(dst)
    mask = np.asarray(mask, dtype=bool)
    if mask.sum() < cfg.min_sample_size:
        raise DegenerateConfiguration(
            f"mask selects {int(mask.sum())} pairs, need {cfg.min_sample_size}"
        )
    return _fit(src, dst, mask, cfg)


def _score(res: np.ndarray, threshold: float):
    mask = res <= threshold
    count = int(mask.sum())
    rms = float(np.sqrt(np.mean(res[mask] ** 2))) if count else math.inf
    return mask, count, rms


def _hypotheses_reference(src, dst, cfg: RansacConfig):
    n = len(src)
    m = cfg.min_sample_size
    rng = np.random.default_rng(cfg.rng_seed)
    tau = cfg.inlier_threshold
    best_mask = None
    best_count = -1
    best_rms = math.inf
    history = []
    iterations = 0
    draws = 0
    budget = cfg.max_iterations
    max_draws = DEGENERATE_DRAW_FACTOR * cfg.max_iterations

    while iterations < budget and draws < max_draws:
        draws += 1
        idx = rng.choice(n, size=m, replace=False)
        try:
            hyp = align_closed_form(src[idx], dst[idx], scale_bounds=cfg.scale_bounds)
        except (DegenerateConfiguration, NonPositiveScale):
            continue
        iterations += 1
        mask, count, rms = _score(residuals(hyp, src, dst), tau)
        if count > best_count or (count == best_count and rms < best_rms):
            best_mask, best_count, best_rms = mask, count, rms
            if count >= m:
                adaptive = required_iterations(cfg.confidence, count / n, m)
                budget = min(cfg.max_iterations, adaptive)
        history.append(best_count)
    return best_mask, best_count, iterations, history


def _hypotheses_compiled(src, dst, cfg: RansacConfig):
    mask, count, _, iterations, history, any_fit = _kernels.ransac_loop(
        np.ascontiguousarray(src), np.ascontiguousarray(dst),
        float(cfg.inlier_threshold), float(cfg.confidence), int(cfg.max_iterations),
        int(cfg.min_sample_size), int(cfg.rng_seed) & 0xFFFFFFFF,
        DEGENERATE_DRAW_FACTOR * int(cfg.max_iterations),
    )
    if not any_fit:
        return None, -1, int(iterations), []
    return mask, int(count), int(iterations), history.tolist()


def ransac_register(
    src, dst, cfg: Optional[RansacConfig] = None, backend: str = "compiled"
) -> RobustRegistration:
    """Robust Sim(3) fit of ``src -> dst`` with known correspondences.

    Minimal samples of ``cfg.min_sample_size`` indices are fitted in closed
    form and scored by inlier count (ties: lower inlier RMS, then earlier).
    The loop stops at the adaptive iteration bound, capped by
    ``cfg.max_iterations``. Degenerate samples are redrawn without spending
    budget, up to ``10 * max_iterations`` draws in total. The winner is refit
    on its consensus set, re-classified once and refit again if the set moved.

    ``backend`` selects the compiled hypothesis loop or the numpy reference
    loop. They follow the same rules but draw from different random streams,
    so individual results differ while both are deterministic per seed. The
    reference loop is always used when ``cfg.scale_bounds`` is set.
    """
    cfg = cfg or RansacConfig()
    src = as_cloud(src)
    dst = as_cloud(dst)
    if len(src) != len(dst):
        raise LengthMismatch(f"{len(src)} source vs {len(dst)} target points")
    n = len(src)
    m = cfg.min_sample_size
    if n < m:
        raise TooFewPoints(f"need at least {m} correspondences, got {n}")

    if backend == "compiled" and cfg.scale_bounds is None:
        best_mask, best_count, iterations, history = _hypotheses_compiled(src, dst, cfg)
    elif backend in ("compiled", "reference"):
        best_mask, best_count, iterations, history = _hypotheses_reference(src, dst, cfg)
    else:
        raise ValueError(f"unknown backend {backend!r}")

    if best_mask is None:
        raise DegenerateConfiguration("every minimal sample was degenerate")
    if best_count < m:
        raise NoConsensus(f"best hypothesis has {best_count} inliers, need {m}")

    tau = cfg.inlier_threshold
    fit_mask = best_mask
    transform = _fit(src, dst, fit_mask, cfg)
    mask, count, rms = _score(residuals(transform, src, dst), tau)
    if count >= m and not np.array_equal(mask, fit_mask):
        try:
            second = _fit(src, dst, mask, cfg)
        except (DegenerateConfiguration, NonPositiveScale):
            second = None
        if second is not None:
            m2, c2, r2 = _score(residuals(second, src, dst), tau)
            if c2 >= m:
                transform, fit_mask = second, mask
                mask, count, rms = m2, c2, r2
    if count < m:
        # polish lost consensus; fall back to the raw hypothesis set
        transform = _fit(src, dst, best_mask, cfg)
        mask, count, rms = _score(residuals(transform, src, dst), tau)
        fit_mask = best_mask
        if count < m:
            raise NoConsensus("consensus collapsed during refit")

    return RobustRegistration(
        transform=transform,
        inlier_mask=mask,
        iterations_used=iterations,
        inlier_residual_rms=rms,
        fit_mask=fit_mask,
        best_count_history=tuple(history),
    )
