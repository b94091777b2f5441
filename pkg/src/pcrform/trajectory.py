"""Piecewise quintic minimum-jerk trajectories parameterized by waypoints and durations.

A trajectory with ``M`` pieces is fully determined by ``M - 1`` interior
waypoints, the piece durations and the boundary states (position, velocity,
acceleration) at both ends. Coefficients come from one linear solve whose LU
factorization is kept on the trajectory so that gradients with respect to the
coefficients can be pulled back onto waypoints and durations.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from math import factorial
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg

from .errors import OutOfDomain, SingularSystem, StaleCache

DEGREE = 5
NCOEF = DEGREE + 1
MIN_DURATION = 1e-4
DOMAIN_EPS = 1e-9

SERIAL_MAGIC = b"PTRJ"
SERIAL_VERSION = 1
_HEADER = struct.Struct("<4sHId")

# _FALLING[r, k] = k! / (k - r)!  (zero when k < r)
_FALLING = np.array(
    [[factorial(k) // factorial(k - r) if k >= r else 0 for k in range(NCOEF)] for r in range(NCOEF + 1)],
    dtype=float,
)
_POW_IDX = np.array([[max(k - r, 0) for k in range(NCOEF)] for r in range(NCOEF + 1)])
_EXPONENTS = np.arange(NCOEF, dtype=float)


def basis(tau, order: int = 0) -> np.ndarray:
    """Derivative of the monomial basis ``[1, t, ..., t^5]`` at ``tau``.

    Returns shape ``tau.shape + (6,)``. Orders above 5 give zeros.
    """
    tau = np.asarray(tau, dtype=float)
    if order > DEGREE:
        return np.zeros(tau.shape + (NCOEF,))
    powers = tau[..., None] ** _EXPONENTS
    return _FALLING[order] * powers[..., _POW_IDX[order]]


def basis_all(tau) -> np.ndarray:
    """Basis derivatives of orders 0..6 at once, shape ``tau.shape + (7, 6)``."""
    tau = np.asarray(tau, dtype=float)
    powers = tau[..., None] ** _EXPONENTS
    return _FALLING * powers[..., _POW_IDX]


@dataclass(frozen=True)
class BoundaryState:
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    acceleration: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("position", "velocity", "acceleration"):
            v = np.array(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"boundary {name} is not finite")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.stack([self.position, self.velocity, self.acceleration])


class _MincoSolve:
    """LU factorization of the coefficient system for one duration vector."""

    def __init__(self, durations: np.ndarray):
        self.durations = durations.copy()
        self.M = len(durations)
        A = _system_matrix(durations)
        with np.errstate(all="ignore"):
            lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
        diag = np.abs(np.diag(lu))
        if not np.all(np.isfinite(diag)) or diag.min() <= 1e-14 * max(diag.max(), 1.0):
            raise SingularSystem("coefficient system is singular for these durations")
        self.lu_piv = (lu, piv)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.lu_solve(self.lu_piv, rhs, check_finite=False)

    def solve_adjoint(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.lu_solve(self.lu_piv, rhs, trans=1, check_finite=False)


def _system_matrix(T: np.ndarray) -> np.ndarray:
    M = len(T)
    n = NCOEF * M
    A = np.zeros((n, n))
    B_end = basis_all(T)
    B0 = basis_all(0.0)
    A[0:3, 0:NCOEF] = B0[0:3]
    for i in range(M - 1):
        row = 3 + 6 * i
        ci = NCOEF * i
        A[row, ci:ci + NCOEF] = B_end[i, 0]
        A[row + 1:row + 6, ci:ci + NCOEF] = B_end[i, 0:5]
        A[row + 1:row + 6, ci + NCOEF:ci + 2 * NCOEF] = -B0[0:5]
    A[n - 3:, n - NCOEF:] = B_end[M - 1, 0:3]
    return A


@dataclass(frozen=True, eq=False)
class PolyTrajectory:
    """Piecewise degree-5 polynomial in 3-D.

    ``coeffs[i, k]`` is the ``t^k`` coefficient row of piece ``i`` in local
    time ``[0, durations[i]]``. Piece ``i`` owns ``[t_{i-1}, t_i)``; the last
    piece also owns its end point.
    """

    coeffs: np.ndarray
    durations: np.ndarray
    start_time: float = 0.0
    waypoints: Optional[np.ndarray] = None
    boundary: Optional[tuple] = None
    _solve: Optional[_MincoSolve] = field(default=None, repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        d = np.array(self.durations, dtype=float).reshape(-1)
        if c.ndim != 3 or c.shape[1:] != (NCOEF, 3) or c.shape[0] != len(d):
            raise ValueError(f"coeffs must be (M, 6, 3) matching durations, got {c.shape}")
        if len(d) == 0 or np.any(~(d > 0)):
            raise ValueError("durations must be positive")
        c.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "durations", d)
        object.__setattr__(self, "start_time", float(self.start_time))
        object.__setattr__(self, "_knots", np.concatenate([[0.0], np.cumsum(d)]))

    @property
    def num_pieces(self) -> int:
        return len(self.durations)

    @property
    def total_duration(self) -> float:
        return float(self._knots[-1])

    @property
    def end_time(self) -> float:
        return self.start_time + self.total_duration

    @property
    def knots(self) -> np.ndarray:
        """Piece boundaries relative to ``start_time``."""
        return self._knots

    def locate(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Piece index and local time for absolute times ``t`` (no domain check)."""
        rel = np.asarray(t, dtype=float) - self.start_time
        idx = np.searchsorted(self._knots, rel, side="right") - 1
        idx = np.clip(idx, 0, self.num_pieces - 1)
        return idx, rel - self._knots[idx]

    def eval(self, t: float, order: int = 0) -> np.ndarray:
        if t < self.start_time - DOMAIN_EPS or t > self.end_time + DOMAIN_EPS:
            raise OutOfDomain(
                f"t={t} outside [{self.start_time}, {self.end_time}]"
            )
        t = min(max(t, self.start_time), self.end_time)
        idx, tau = self.locate(t)
        return basis(tau, order) @ self.coeffs[idx]

    def eval_piece(self, piece: int, tau, order: int = 0) -> np.ndarray:
        return basis(tau, order) @ self.coeffs[piece]

    def eval_many(self, ts, order: int = 0, clamp: bool = True) -> np.ndarray:
        """Vectorized evaluation; times outside the domain are clamped when ``clamp``."""
        ts = np.asarray(ts, dtype=float)
        if clamp:
            ts = np.clip(ts, self.start_time, self.end_time)
        elif ts.size and (ts.min() < self.start_time - DOMAIN_EPS or ts.max() > self.end_time + DOMAIN_EPS):
            raise OutOfDomain("evaluation times outside trajectory domain")
        idx, tau = self.locate(ts)
        return np.einsum("...k,...kd->...d", basis(tau, order), self.coeffs[idx])

    def eval_clamped(self, t: float, order: int = 0) -> np.ndarray:
        """Like :meth:`eval` but holds the end states outside the domain."""
        if t >= self.end_time:
            if order == 0:
                return self.eval(self.end_time, 0)
            return np.zeros(3)
        if t <= self.start_time:
            if order == 0:
                return self.eval(self.start_time, 0)
            return np.zeros(3)
        return self.eval(t, order)

    def jerk_integral(self) -> float:
        return float(sum(_jerk_energy(self.coeffs[i], self.durations[i]) for i in range(self.num_pieces)))

    def shifted(self, start_time: float) -> "PolyTrajectory":
        return PolyTrajectory(self.coeffs, self.durations, start_time)

    # --- serialization -------------------------------------------------
    def to_bytes(self) -> bytes:
        header = _HEADER.pack(SERIAL_MAGIC, SERIAL_VERSION, self.num_pieces, self.start_time)
        return (
            header
            + self.durations.astype("<f8").tobytes()
            + self.coeffs.astype("<f8").tobytes()
        )

    @classmethod
    def from_bytes(cls, payload: bytes) -> "PolyTrajectory":
        magic, version, M, start = _HEADER.unpack_from(payload, 0)
        if magic != SERIAL_MAGIC:
            raise ValueError("not a serialized trajectory")
        if version != SERIAL_VERSION:
            raise ValueError(f"unsupported trajectory format version {version}")
        off = _HEADER.size
        expected = off + 8 * M + 8 * M * NCOEF * 3
        if len(payload) != expected:
            raise ValueError(f"payload length {len(payload)} != expected {expected}")
        durations = np.frombuffer(payload, dtype="<f8", count=M, offset=off)
        coeffs = np.frombuffer(payload, dtype="<f8", count=M * NCOEF * 3, offset=off + 8 * M)
        return cls(coeffs.reshape(M, NCOEF, 3).astype(float), durations.astype(float), start)

    @classmethod
    def stationary(cls, position, start_time: float = 0.0, duration: float = 1.0) -> "PolyTrajectory":
        c = np.zeros((1, NCOEF, 3))
        c[0, 0] = np.asarray(position, dtype=float)
        return cls(c, [duration], start_time)


def _jerk_energy(c: np.ndarray, T: float) -> float:
    Q = _jerk_gram(T)
    top = c[3:6]
    return float(np.einsum("ad,ab,bd->", top, Q, top))


def _jerk_gram(T):
    """Gram matrix of the jerk basis over ``[0, T]``; vectorizes over ``T``."""
    T = np.asarray(T, dtype=float)
    powers = T[..., None] ** np.arange(1, 6)
    return powers[..., _GRAM_IDX] * _GRAM_COEF


_GRAM_COEF = np.array([[36.0, 72.0, 120.0], [72.0, 192.0, 360.0], [120.0, 360.0, 720.0]])
_GRAM_IDX = np.array([[0, 1, 2], [1, 2, 3], [2, 3, 4]])


def _as_durations(times) -> np.ndarray:
    T = np.asarray(times, dtype=float).reshape(-1)
    if T.size == 0:
        raise ValueError("at least one piece is required")
    if not np.all(np.isfinite(T)) or np.any(T < MIN_DURATION):
        raise SingularSystem(f"piece durations must be >= {MIN_DURATION} s")
    return T


def minco_map(
    waypoints,
    times: Union[Sequence[float], np.ndarray],
    p0: BoundaryState,
    pf: BoundaryState,
    start_time: float = 0.0,
    solve: Optional[_MincoSolve] = None,
) -> PolyTrajectory:
    """Unique minimum-jerk quintic spline through ``waypoints`` with durations ``times``.

    ``waypoints`` has shape ``(M - 1, 3)`` for ``M = len(times)`` pieces. The
    result is C^4 at every joint and matches ``p0``/``pf`` in position,
    velocity and acceleration. A cached factorization may be passed in
    ``solve`` when the durations are unchanged.
    """
    T = _as_durations(times)
    M = len(T)
    q = np.asarray(waypoints, dtype=float).reshape(-1, 3)
    if len(q) != M - 1:
        raise ValueError(f"{M} pieces need {M - 1} waypoints, got {len(q)}")
    if solve is None or solve.M != M or not np.array_equal(solve.durations, T):
        solve = _MincoSolve(T)
    b = np.zeros((NCOEF * M, 3))
    b[0:3] = p0.as_array()
    for i in range(M - 1):
        b[3 + 6 * i] = q[i]
    b[-3:] = pf.as_array()
    C = solve.solve(b)
    return PolyTrajectory(
        C.reshape(M, NCOEF, 3),
        T,
        start_time,
        waypoints=q.copy(),
        boundary=(p0, pf),
        _solve=solve,
    )


def map_gradients(traj: PolyTrajectory, grad_coeffs, grad_T_direct=None):
    """Pull ``dJ/dcoeffs`` (plus any explicit ``dJ/dT``) back onto waypoints and durations.

    Returns ``(grad_q, grad_T)`` with shapes ``(M - 1, 3)`` and ``(M,)``.
    """
    solve = traj._solve
    if solve is None or not np.array_equal(solve.durations, traj.durations):
        raise StaleCache("trajectory was not produced by minco_map with these durations")
    M = traj.num_pieces
    gc = np.asarray(grad_coeffs, dtype=float).reshape(NCOEF * M, 3)
    G = solve.solve_adjoint(gc)
    grad_T = np.zeros(M) if grad_T_direct is None else np.array(grad_T_direct, dtype=float).reshape(M)
    grad_q = G[3:3 + 6 * (M - 1):6].copy()

    # d/dT_i of rows evaluating piece i at its end is the next derivative there
    ends = np.einsum("mrk,mkd->mrd", basis_all(traj.durations), traj.coeffs)
    if M > 1:
        Gj = G[3:3 + 6 * (M - 1)].reshape(M - 1, 6, 3)
        grad_T[:-1] -= np.einsum("md,md->m", Gj[:, 0], ends[:-1, 1])
        grad_T[:-1] -= np.einsum("mkd,mkd->m", Gj[:, 1:6], ends[:-1, 1:6])
    grad_T[M - 1] -= np.einsum("rd,rd->", G[-3:], ends[M - 1, 1:4])
    return grad_q, grad_T


@dataclass(frozen=True, eq=False)
class ConstraintSamples:
    """Uniform per-piece samples; arrays are indexed by flat sample number."""

    piece: np.ndarray
    fraction: np.ndarray
    t: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    jerk: np.ndarray
    basis: np.ndarray = field(default=None, repr=False)
    membership: np.ndarray = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.t)

    def rows(self):
        for k in range(len(self)):
            yield (self.t[k], self.position[k], self.velocity[k], self.acceleration[k], self.jerk[k])


def sample_constraint_points(traj: PolyTrajectory, kappa: Union[int, Sequence[int]] = 8) -> ConstraintSamples:
    """Samples at local times ``(j / kappa_i) * T_i`` for ``j = 0 .. kappa_i - 1``.

    ``kappa`` is one count for all pieces or a per-piece sequence.
    """
    M = traj.num_pieces
    kap = np.full(M, kappa, dtype=int) if np.isscalar(kappa) else np.asarray(kappa, dtype=int)
    if kap.shape != (M,) or np.any(kap < 1):
        raise ValueError("kappa must be >= 1 for every piece")
    piece = np.repeat(np.arange(M), kap)
    fraction = np.concatenate([np.arange(k) / k for k in kap])
    tau = fraction * traj.durations[piece]
    t = traj.start_time + traj.knots[piece] + tau
    B = basis_all(tau)
    states = np.einsum("srk,skd->srd", B[:, 0:4], traj.coeffs[piece])
    membership = (piece[None, :] == np.arange(M)[:, None]).astype(float)
    return ConstraintSamples(
        piece, fraction, t,
        states[:, 0], states[:, 1], states[:, 2], states[:, 3],
        basis=B, membership=membership,
    )


class TrajectoryStack:
    """Vectorized clamped evaluation of many trajectories at shared times."""

    def __init__(self, trajectories: Sequence[PolyTrajectory]):
        self.count = len(trajectories)
        kmax = max((tr.num_pieces for tr in trajectories), default=1)
        self.coeffs = np.zeros((self.count, kmax, NCOEF, 3))
        self.knots = np.full((self.count, kmax + 1), np.inf)
        self.start = np.zeros(self.count)
        self.end = np.zeros(self.count)
        self.npieces = np.zeros(self.count, dtype=int)
        for p, tr in enumerate(trajectories):
            M = tr.num_pieces
            self.coeffs[p, :M] = tr.coeffs
            self.knots[p, : M + 1] = tr.knots
            self.start[p] = tr.start_time
            self.end[p] = tr.end_time
            self.npieces[p] = M

    def eval(self, ts, order: int = 0) -> np.ndarray:
        """Returns shape ``(count, len(ts), 3)``; derivatives vanish outside each domain."""
        return self.eval_states(ts, (order,))[order]

    def eval_states(self, ts, orders=(0, 1)) -> dict:
        """Several derivative orders sharing one piece lookup."""
        ts = np.asarray(ts, dtype=float)
        if self.count == 0:
            return {r: np.zeros((0, len(ts), 3)) for r in orders}
        rel = ts[None, :] - self.start[:, None]
        dur = (self.end - self.start)[:, None]
        outside = (rel < 0) | (rel > dur)
        rel = np.clip(rel, 0.0, dur)
        inner = self.knots[:, 1:-1]
        idx = (rel[:, :, None] >= inner[:, None, :]).sum(axis=2)
        idx = np.minimum(idx, (self.npieces - 1)[:, None])
        local = rel - np.take_along_axis(self.knots, idx, axis=1)
        C = self.coeffs[np.arange(self.count)[:, None], idx]
        powers = local[..., None] ** _EXPONENTS
        out = {}
        for r in orders:
            if r > DEGREE:
                out[r] = np.zeros(local.shape + (3,))
                continue
            b = _FALLING[r] * powers[..., _POW_IDX[r]]
            v = np.einsum("psk,pskd->psd", b, C)
            if r > 0:
                v[outside] = 0.0
            out[r] = v
        return out
