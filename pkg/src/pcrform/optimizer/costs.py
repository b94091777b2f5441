"""Cost terms on a piecewise trajectory with gradients w.r.t. coefficients and durations.

Every term returns a :class:`CostGrad` whose ``grad_coeffs`` has the shape of
``traj.coeffs`` and whose ``grad_T`` holds the *explicit* dependence on the
piece durations (local sample times and absolute time shifts). Passing both
through :func:`pcrform.trajectory.map_gradients` gives gradients on waypoints
and durations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import TimestampOutOfDomain
from ..trajectory import (
    DOMAIN_EPS,
    ConstraintSamples,
    PolyTrajectory,
    TrajectoryStack,
    _jerk_gram,
    basis,
    basis_all,
)


@dataclass
class CostGrad:
    value: float
    grad_coeffs: np.ndarray
    grad_T: np.ndarray

    @classmethod
    def zero(cls, traj: PolyTrajectory) -> "CostGrad":
        return cls(0.0, np.zeros_like(traj.coeffs), np.zeros(traj.num_pieces))

    def __add__(self, other: "CostGrad") -> "CostGrad":
        return CostGrad(
            self.value + other.value,
            self.grad_coeffs + other.grad_coeffs,
            self.grad_T + other.grad_T,
        )


def _hinge3(x: np.ndarray):
    """``max(0, x)^3`` and its derivative."""
    xp = np.maximum(x, 0.0)
    return xp**3, 3.0 * xp**2


def _pull_back_samples(
    traj: PolyTrajectory,
    samples: ConstraintSamples,
    g_pos: Optional[np.ndarray] = None,
    g_vel: Optional[np.ndarray] = None,
    g_acc: Optional[np.ndarray] = None,
    g_time: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Chain per-sample state gradients onto coefficients and durations.

    ``g_time`` is the derivative w.r.t. the absolute sample time with the own
    state held fixed (e.g. through a peer trajectory).
    """
    frac = samples.fraction
    S = len(samples)
    G = np.zeros((S, 3, 3))
    dT_local = np.zeros(S)
    for order, g, nxt in (
        (0, g_pos, samples.velocity),
        (1, g_vel, samples.acceleration),
        (2, g_acc, samples.jerk),
    ):
        if g is None:
            continue
        G[:, order] = g
        dT_local += np.einsum("sd,sd->s", g, nxt)
    contrib = np.einsum("srk,srd->skd", samples.basis[:, 0:3], G)
    grad_c = (samples.membership @ contrib.reshape(S, -1)).reshape(traj.coeffs.shape)
    grad_T = samples.membership @ (dT_local * frac)
    if g_time is not None:
        # t_s = t0 + sum_{l<i} T_l + frac * T_i
        grad_T += samples.membership @ (g_time * frac)
        per_piece = samples.membership @ g_time
        later = np.cumsum(per_piece[::-1])[::-1]
        grad_T[:-1] += later[1:]
    return grad_c, grad_T


def cost_control_effort(traj: PolyTrajectory, weight: float = 1.0, rho: float = 0.0) -> CostGrad:
    """``weight * integral ||jerk||^2 dt + rho * T_total`` in closed form."""
    T = traj.durations
    top = traj.coeffs[:, 3:6]
    Q = _jerk_gram(T)
    Qc = np.matmul(Q, top)
    value = weight * float(np.sum(top * Qc)) + rho * traj.total_duration
    grad_c = np.zeros_like(traj.coeffs)
    grad_c[:, 3:6] = 2.0 * weight * Qc
    jerk_end = np.matmul(basis(T, 3)[:, None, :], traj.coeffs)[:, 0]
    grad_T = weight * np.sum(jerk_end * jerk_end, axis=1) + rho
    return CostGrad(value, grad_c, grad_T)


def cost_formation(
    traj: PolyTrajectory,
    ofps_points,
    ofps_times,
    weight: float = 1.0,
    clamp: bool = False,
) -> CostGrad:
    """Squared tracking error to the formation points at their absolute timestamps.

    With ``clamp`` times past the trajectory end use its final state instead of
    raising ``TimestampOutOfDomain``.
    """
    pts = np.asarray(ofps_points, dtype=float).reshape(-1, 3)
    times = np.asarray(ofps_times, dtype=float).reshape(-1)
    M = traj.num_pieces
    rel = times - traj.start_time
    total = traj.total_duration
    if np.any(rel < -DOMAIN_EPS) or (not clamp and np.any(rel > total + DOMAIN_EPS)):
        raise TimestampOutOfDomain("formation timestamps outside the trajectory domain")
    rel = np.clip(rel, 0.0, None)
    beyond = rel >= total
    piece = np.searchsorted(traj.knots, rel, side="right") - 1
    piece = np.where(beyond, M - 1, np.clip(piece, 0, M - 1))
    tau = np.where(beyond, traj.durations[M - 1], rel - traj.knots[piece])
    B = basis_all(tau)[:, 0:2]
    states = np.matmul(B, traj.coeffs[piece])
    pos, vel = states[:, 0], states[:, 1]
    diff = pos - pts
    value = weight * float(np.sum(diff * diff))
    g = 2.0 * weight * diff
    onehot = (piece[None, :] == np.arange(M)[:, None]).astype(float)
    contrib = B[:, 0, :, None] * g[:, None, :]
    grad_c = (onehot @ contrib.reshape(len(g), -1)).reshape(traj.coeffs.shape)
    gv = np.sum(g * vel, axis=1)
    # inside: tau = rel - sum_{l<i} T_l ; beyond the end: tau = T_last
    per_piece = onehot @ np.where(beyond, 0.0, gv)
    later = np.cumsum(per_piece[::-1])[::-1]
    grad_T = np.zeros(M)
    grad_T[:-1] -= later[1:]
    grad_T[M - 1] += gv[beyond].sum()
    return CostGrad(value, grad_c, grad_T)


def cost_obstacle(
    traj: PolyTrajectory,
    samples: ConstraintSamples,
    field,
    d_safe: float = 0.5,
    weight: float = 1.0,
) -> CostGrad:
    """``weight * sum max(0, d_safe - sdf(p))^3`` over the constraint samples."""
    if field is None or len(samples) == 0:
        return CostGrad.zero(traj)
    dist, grad = field.signed_distance_many(samples.position)
    val, dval = _hinge3(d_safe - dist)
    if not np.any(val > 0):
        return CostGrad.zero(traj)
    g_pos = -(weight * dval)[:, None] * grad
    gc, gT = _pull_back_samples(traj, samples, g_pos=g_pos)
    return CostGrad(weight * float(val.sum()), gc, gT)


def cost_swarm(
    traj: PolyTrajectory,
    samples: ConstraintSamples,
    peers: Optional[TrajectoryStack],
    clearance: float = 0.6,
    weight: float = 1.0,
) -> CostGrad:
    """Cubic hinge on ``clearance - ||p(t) - p_peer(t)||`` at time-aligned samples.

    Peer trajectories are fixed; only the own trajectory receives gradient,
    including the shift of the absolute sample times with the durations.
    """
    if peers is None or peers.count == 0 or len(samples) == 0:
        return CostGrad.zero(traj)
    states = peers.eval_states(samples.t, (0, 1))
    pp = states[0]
    diff = samples.position[None, :, :] - pp
    dist = np.sqrt(np.einsum("psd,psd->ps", diff, diff))
    val, dval = _hinge3(clearance - dist)
    if not np.any(val > 0):
        return CostGrad.zero(traj)
    unit = diff / np.maximum(dist, 1e-12)[:, :, None]
    coef = (weight * dval)[:, :, None] * unit
    g_pos = -coef.sum(axis=0)
    pv = states[1]
    g_time = np.einsum("psd,psd->s", coef, pv)
    gc, gT = _pull_back_samples(traj, samples, g_pos=g_pos, g_time=g_time)
    return CostGrad(weight * float(val.sum()), gc, gT)


def cost_dynamics(
    traj: PolyTrajectory,
    samples: ConstraintSamples,
    v_max: float,
    a_max: float,
    weight: float = 1.0,
) -> CostGrad:
    """Cubic hinges on ``||v||^2 - v_max^2`` and ``||a||^2 - a_max^2``."""
    v = samples.velocity
    a = samples.acceleration
    vv, dv = _hinge3(np.einsum("sd,sd->s", v, v) - v_max**2)
    aa, da = _hinge3(np.einsum("sd,sd->s", a, a) - a_max**2)
    value = weight * float(vv.sum() + aa.sum())
    if value == 0.0:
        return CostGrad.zero(traj)
    g_vel = (2.0 * weight * dv)[:, None] * v
    g_acc = (2.0 * weight * da)[:, None] * a
    gc, gT = _pull_back_samples(traj, samples, g_vel=g_vel, g_acc=g_acc)
    return CostGrad(value, gc, gT)
