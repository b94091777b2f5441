"""Optimal formation position sequences from peer trajectories, and formation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import (
    DegenerateConfiguration,
    EmptyPeerSet,
    NoConsensus,
    NonConvergence,
    NonPositiveScale,
    PcrformError,
    RegistrationFailed,
    TooFewPoints,
)
from .geometry import (
    Sim3Transform,
    align_closed_form,
    apply,
    as_cloud,
    check_non_collinear,
    inverse,
    rotation_from_axis_angle,
)
from .robust import RansacConfig, ransac_register
from .trajectory import PolyTrajectory


@dataclass(frozen=True, eq=False)
class FormationSpec:
    """Desired formation: agent id -> desired position."""

    desired: Mapping[int, np.ndarray]
    name: str = "formation"

    def __post_init__(self):
        desired = {int(k): np.array(v, dtype=float).reshape(3) for k, v in self.desired.items()}
        if len(desired) < 3:
            raise ValueError("a formation needs at least 3 agents")
        object.__setattr__(self, "desired", desired)
        check_non_collinear(self.positions())

    @property
    def ids(self) -> list[int]:
        return sorted(self.desired)

    def __len__(self) -> int:
        return len(self.desired)

    def positions(self, ids: Optional[Sequence[int]] = None) -> np.ndarray:
        ids = self.ids if ids is None else ids
        return np.array([self.desired[i] for i in ids])

    @classmethod
    def from_array(cls, positions, name: str = "formation", ids: Optional[Sequence[int]] = None):
        positions = np.asarray(positions, dtype=float)
        ids = range(len(positions)) if ids is None else ids
        return cls({int(i): p for i, p in zip(ids, positions)}, name)


@dataclass(frozen=True, eq=False)
class PositionFrame:
    timestamp_index: int
    positions: Mapping[int, np.ndarray]
    time: float = 0.0

    @property
    def ids(self) -> list[int]:
        return sorted(self.positions)

    def array(self, ids: Optional[Sequence[int]] = None) -> np.ndarray:
        ids = self.ids if ids is None else ids
        return np.array([self.positions[i] for i in ids]).reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class OFPS:
    """Optimal formation positions of one agent over the planning horizon.

    ``transforms[m]`` is the fitted map from world (current peer positions)
    into the desired formation frame; ``points[m]`` is the agent's own desired
    position pulled back through it.
    """

    agent_id: int
    points: np.ndarray
    transforms: list
    inlier_masks: list
    times: np.ndarray = field(default=None)
    peer_ids: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def inlier_fraction(self) -> float:
        fr = [m.mean() for m in self.inlier_masks if len(m)]
        return float(np.mean(fr)) if fr else float("nan")


def sample_peer_frames(
    peer_trajectories: Mapping[int, PolyTrajectory],
    t0: float,
    horizon: float,
    M_c: int,
) -> list[PositionFrame]:
    """Peer positions at ``M_c + 1`` uniform timestamps over ``[t0, t0 + horizon]``.

    Trajectories that end (or begin) inside the window are held at their
    boundary position.
    """
    if not peer_trajectories:
        raise EmptyPeerSet("no peer trajectories to sample")
    if M_c < 1:
        raise ValueError("M_c must be >= 1")
    times = t0 + horizon * np.arange(M_c + 1) / M_c
    ids = sorted(peer_trajectories)
    per_peer = {i: peer_trajectories[i].eval_many(times) for i in ids}
    return [
        PositionFrame(m, {i: per_peer[i][m] for i in ids}, float(times[m]))
        for m in range(M_c + 1)
    ]


def _frame_seed(seed: int, m: int) -> int:
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, m]).generate_state(1)[0])


def compute_ofps(
    agent_id: int,
    spec: FormationSpec,
    frames: Sequence[PositionFrame],
    cfg: Optional[RansacConfig] = None,
) -> OFPS:
    """Register each frame of peer positions to the desired formation with RANSAC.

    Peers are matched to desired positions by id. The own formation point at
    frame ``m`` is ``inverse(T_m)(desired[agent_id])`` where ``T_m`` maps
    current positions onto desired ones; this keeps the identity case exact.

    Raises
    ------
    RegistrationFailed
        A frame had too few peers or no consensus; ``frame_index`` names it.
    """
    cfg = cfg or RansacConfig()
    own = spec.desired[agent_id]
    need = max(3, cfg.min_sample_size)
    points, transforms, masks, peer_ids = [], [], [], []
    for frame in frames:
        m = frame.timestamp_index
        ids = [i for i in frame.ids if i != agent_id and i in spec.desired]
        if len(ids) < need:
            raise RegistrationFailed(m, f"{len(ids)} peers, need {need}")
        src = frame.array(ids)
        dst = spec.positions(ids)
        frame_cfg = RansacConfig(
            inlier_threshold=cfg.inlier_threshold,
            confidence=cfg.confidence,
            max_iterations=cfg.max_iterations,
            min_sample_size=cfg.min_sample_size,
            rng_seed=_frame_seed(cfg.rng_seed, m),
            scale_bounds=cfg.scale_bounds,
        )
        try:
            reg = ransac_register(src, dst, frame_cfg)
        except (NoConsensus, DegenerateConfiguration, NonPositiveScale, TooFewPoints) as exc:
            raise RegistrationFailed(m, str(exc)) from exc
        transforms.append(reg.transform)
        points.append(ofp_from_transform(reg.transform, own))
        masks.append(reg.inlier_mask)
        peer_ids.append(ids)
    return OFPS(
        agent_id=agent_id,
        points=np.array(points).reshape(-1, 3),
        transforms=transforms,
        inlier_masks=masks,
        times=np.array([f.time for f in frames]),
        peer_ids=peer_ids,
    )


def ofp_from_transform(T: Sim3Transform, own_desired) -> np.ndarray:
    """World-frame formation point for a current->desired fit."""
    return apply(inverse(T), own_desired)


def ofp_printed_direction(T: Sim3Transform, own_desired) -> np.ndarray:
    """The forward mapping ``s R p_des + t``; kept for convention comparisons only."""
    return apply(T, own_desired)


# --- formation error -----------------------------------------------------


def _unsquared_cost(src, dst, T: Sim3Transform) -> float:
    d = dst - apply(T, src)
    return float(np.sqrt(np.einsum("ij,ij->i", d, d)).sum())


def _perturb(T: Sim3Transform, x: np.ndarray, pivot: np.ndarray) -> Sim3Transform:
    """Rotate/scale about ``pivot`` (in the target frame) then translate."""
    R = rotation_from_axis_angle(x[0:3])
    s = np.exp(x[6])
    rot = R @ T.rotation
    scale = T.scale * s
    trans = s * (R @ (T.translation - pivot)) + pivot + x[3:6]
    return Sim3Transform(rot, trans, scale)


def _irls_unsquared(src, dst, T: Sim3Transform, iters: int = 50, eps: float = 1e-9) -> Sim3Transform:
    best, best_cost = T, _unsquared_cost(src, dst, T)
    for _ in range(iters):
        d = dst - apply(best, src)
        r = np.sqrt(np.einsum("ij,ij->i", d, d))
        w = 1.0 / np.maximum(r, eps)
        try:
            cand = align_closed_form(src, dst, weights=w)
        except PcrformError:
            break
        c = _unsquared_cost(src, dst, cand)
        if c >= best_cost - 1e-15 * max(best_cost, 1.0):
            if c < best_cost:
                best, best_cost = cand, c
            break
        best, best_cost = cand, c
    return best


def _pattern_polish(src, dst, T: Sim3Transform, start: float = 1e-3, stop: float = 1e-6) -> tuple[Sim3Transform, float]:
    pivot = dst.mean(axis=0)
    cost = _unsquared_cost(src, dst, T)
    step = start
    for _ in range(2000):
        improved = False
        for k in range(7):
            for sgn in (1.0, -1.0):
                x = np.zeros(7)
                x[k] = sgn * step
                cand = _perturb(T, x, pivot)
                c = _unsquared_cost(src, dst, cand)
                if c < cost:
                    T, cost, improved = cand, c, True
                    break
        if not improved:
            step *= 0.5
            if step < stop:
                break
    return T, cost


def align_unsquared(src, dst, backend: str = "compiled") -> tuple[Sim3Transform, float]:
    """Sim(3) minimizing the sum of unsquared residual norms (local, warm-started).

    Starts from the least-squares fit, runs reweighted closed-form fits and
    finishes with a coordinate pattern search. ``backend="reference"`` runs
    the same steps in numpy.
    """
    src = as_cloud(src)
    dst = as_cloud(dst)
    T = align_closed_form(src, dst)
    if backend == "reference":
        T = _irls_unsquared(src, dst, T)
        return _pattern_polish(src, dst, T)
    if backend != "compiled":
        raise ValueError(f"unknown backend {backend!r}")
    R, t, s, cost = _kernels.unsquared_align(
        np.ascontiguousarray(src), np.ascontiguousarray(dst),
        np.array(T.rotation), np.array(T.translation), float(T.scale), 50, 1e-3, 1e-6,
    )
    return Sim3Transform(R, t, float(s)), float(cost)


def formation_error(actual: Mapping[int, np.ndarray], spec: FormationSpec) -> float:
    """Mean per-agent residual after the best Sim(3) alignment of ``actual`` onto ``spec``.

    Residuals are unsquared Euclidean norms. Agents in ``actual`` may be a
    subset of the formation (at least 3).
    """
    ids = sorted(i for i in actual if i in spec.desired)
    if len(ids) < 3:
        raise DegenerateConfiguration("formation error needs at least 3 agents")
    src = np.array([actual[i] for i in ids], dtype=float)
    dst = spec.positions(ids)
    _, cost = align_unsquared(src, dst)
    return cost / len(ids)


# --- exact OFP oracle ----------------------------------------------------


def _squared_cost(src, dst, T: Sim3Transform) -> float:
    d = dst - apply(T, src)
    return float(np.einsum("ij,ij->", d, d))


def ofp_joint_cost(agent_id: int, spec: FormationSpec, frame: PositionFrame, own_position) -> float:
    """Full-cloud squared registration cost with the agent placed at ``own_position``."""
    ids = [i for i in frame.ids if i != agent_id]
    src = np.vstack([frame.array(ids), np.asarray(own_position, dtype=float).reshape(1, 3)])
    dst = np.vstack([spec.positions(ids), spec.desired[agent_id].reshape(1, 3)])
    T = align_closed_form(src, dst)
    return _squared_cost(src, dst, T)


def ofp_exact_oracle(
    agent_id: int,
    spec: FormationSpec,
    frame: PositionFrame,
    own_guess,
    peer_mask: Optional[Sequence[bool]] = None,
    tol: float = 1e-10,
    max_rounds: int = 100,
) -> np.ndarray:
    """Exact optimal formation point by alternating minimization.

    Alternates a full-cloud fit that includes the agent's own pair with the
    exact pre-image of its desired position under that fit. ``peer_mask``
    optionally restricts the peers (in sorted-id order) to a subset.
    """
    ids = [i for i in frame.ids if i != agent_id]
    if peer_mask is not None:
        ids = [i for i, keep in zip(ids, peer_mask) if keep]
    src_peers = frame.array(ids)
    dst = np.vstack([spec.positions(ids), spec.desired[agent_id].reshape(1, 3)])
    own_des = spec.desired[agent_id]
    p = np.asarray(own_guess, dtype=float).reshape(3)
    for _ in range(max_rounds):
        T = align_closed_form(np.vstack([src_peers, p]), dst)
        nxt = apply(inverse(T), own_des)
        if np.linalg.norm(nxt - p) <= tol:
            return nxt
        p = nxt
    raise NonConvergence(f"oracle did not reach a fixed point in {max_rounds} rounds")


# --- Laplacian baseline --------------------------------------------------


def normalized_laplacian(positions) -> np.ndarray:
    """Normalized Laplacian of the complete graph weighted by squared distances."""
    P = np.asarray(positions, dtype=float)
    diff = P[:, None, :] - P[None, :, :]
    W = np.einsum("ijk,ijk->ij", diff, diff)
    deg = W.sum(axis=1)
    if np.any(deg <= 0):
        raise DegenerateConfiguration("coincident formation has zero-degree vertices")
    inv_sqrt = 1.0 / np.sqrt(deg)
    L = np.diag(deg) - W
    return inv_sqrt[:, None] * L * inv_sqrt[None, :]


def laplacian_error_baseline(actual: Mapping[int, np.ndarray], spec: FormationSpec) -> float:
    """Frobenius distance between normalized Laplacians of actual and desired formations."""
    ids = sorted(i for i in actual if i in spec.desired)
    if len(ids) < 3:
        raise DegenerateConfiguration("baseline needs at least 3 agents")
    La = normalized_laplacian(np.array([actual[i] for i in ids]))
    Ld = normalized_laplacian(spec.positions(ids))
    return float(np.linalg.norm(La - Ld))


# --- elongation probe ----------------------------------------------------


def axis_deformations(spec: FormationSpec, magnitude: float, movers: int = 4) -> tuple[dict, dict]:
    """Equal-size short-axis pinch and long-axis stretch of an elongated formation.

    The pinch moves the ``movers`` agents nearest the middle of the long axis
    toward the long axis by ``magnitude``; the stretch moves the ``movers``
    agents at the two ends outward along the long axis by the same amount.
    Axes are the principal directions of the desired positions.
    """
    ids = spec.ids
    P = spec.positions(ids)
    c = P.mean(axis=0)
    _, _, Vt = np.linalg.svd(P - c)
    long_ax, short_ax = Vt[0], Vt[1]
    along = (P - c) @ long_ax
    across = (P - c) @ short_ax
    pinch = {i: p.copy() for i, p in zip(ids, P)}
    stretch = {i: p.copy() for i, p in zip(ids, P)}
    for k in np.argsort(np.abs(along), kind="stable")[:movers]:
        pinch[ids[k]] -= magnitude * np.sign(across[k]) * short_ax
    for k in np.argsort(-np.abs(along), kind="stable")[:movers]:
        stretch[ids[k]] += magnitude * np.sign(along[k]) * long_ax
    return pinch, stretch


def short_axis_sensitivity(spec: FormationSpec, metric, magnitude: float = 0.2) -> float:
    """``metric(pinch) / metric(stretch)`` for :func:`axis_deformations`."""
    pinch, stretch = axis_deformations(spec, magnitude)
    return float(metric(pinch, spec) / metric(stretch, spec))
