"""Penalty-transcribed trajectory optimization over waypoints and log-durations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import _kernels
from ..errors import NonFiniteCost, PcrformError
from ..trajectory import (
    MIN_DURATION,
    BoundaryState,
    PolyTrajectory,
    TrajectoryStack,
    map_gradients,
    minco_map,
    sample_constraint_points,
)
from .costs import (
    CostGrad,
    cost_control_effort,
    cost_dynamics,
    cost_formation,
    cost_obstacle,
    cost_swarm,
)
from .lbfgs import LbfgsSettings, minimize_lbfgs


@dataclass(frozen=True)
class PlannerWeights:
    formation: float = 300.0
    effort: float = 80.0
    time: float = 80.0
    collision: float = 10000.0
    swarm: float = 10000.0
    dynamics: float = 100.0
    rho: Optional[float] = None

    def __post_init__(self):
        for name in ("formation", "effort", "time", "collision", "swarm", "dynamics"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be non-negative")
        if self.rho is not None and self.rho < 0:
            raise ValueError("rho must be non-negative")

    @property
    def time_regularization(self) -> float:
        return self.time if self.rho is None else self.rho


@dataclass(frozen=True)
class DynamicLimits:
    v_max: float = 2.0
    a_max: float = 4.0

    def __post_init__(self):
        if not (self.v_max > 0 and self.a_max > 0):
            raise ValueError("dynamic limits must be positive")


@dataclass
class PlanningProblem:
    start: BoundaryState
    goal: BoundaryState
    start_time: float = 0.0
    pieces: int = 5
    horizon: float = 3.0
    ofps_points: Optional[np.ndarray] = None
    ofps_times: Optional[np.ndarray] = None
    peers: Optional[TrajectoryStack] = None
    obstacles: object = None
    weights: PlannerWeights = field(default_factory=PlannerWeights)
    limits: DynamicLimits = field(default_factory=DynamicLimits)
    kappa: int = 8
    obstacle_clearance: float = 0.5
    swarm_clearance: float = 0.6


@dataclass
class OptimizeReport:
    iterations: int
    evaluations: int
    termination: str
    cost: float
    breakdown: dict
    cost_history: list
    line_search_failed: bool = False

    @property
    def converged(self) -> bool:
        return self.termination in ("gradient", "cost_change")


def time_map(tau) -> np.ndarray:
    """Unconstrained log-durations to positive durations."""
    return np.exp(np.asarray(tau, dtype=float))


def time_map_inverse(T) -> np.ndarray:
    return np.log(np.asarray(T, dtype=float))


def evaluate_costs(problem: PlanningProblem, traj: PolyTrajectory) -> dict:
    """Weighted cost terms at a fixed trajectory, keyed by term name."""
    w = problem.weights
    samples = sample_constraint_points(traj, problem.kappa)
    terms = {
        "effort": cost_control_effort(traj, weight=w.effort),
        "time": CostGrad(
            w.time_regularization * traj.total_duration,
            np.zeros_like(traj.coeffs),
            np.full(traj.num_pieces, w.time_regularization),
        ),
        "obstacle": cost_obstacle(
            traj, samples, problem.obstacles, problem.obstacle_clearance, w.collision
        ),
        "swarm": cost_swarm(traj, samples, problem.peers, problem.swarm_clearance, w.swarm),
        "dynamics": cost_dynamics(
            traj, samples, problem.limits.v_max, problem.limits.a_max, w.dynamics
        ),
    }
    if problem.ofps_points is not None and len(problem.ofps_points):
        terms["formation"] = cost_formation(
            traj, problem.ofps_points, problem.ofps_times, weight=w.formation, clamp=True
        )
    else:
        terms["formation"] = CostGrad.zero(traj)
    return terms


class _Objective:
    """Total cost as a function of ``x = [waypoints.ravel(), log_durations]``.

    This is the numpy reference path built from the individual cost terms.
    """

    def __init__(self, problem: PlanningProblem):
        self.problem = problem
        self.M = problem.pieces
        self._solve = None

    def unpack(self, x):
        nq = 3 * (self.M - 1)
        return x[:nq].reshape(self.M - 1, 3), x[nq:]

    def trajectory(self, x) -> PolyTrajectory:
        q, tau = self.unpack(x)
        traj = minco_map(
            q, time_map(tau), self.problem.start, self.problem.goal,
            start_time=self.problem.start_time, solve=self._solve,
        )
        self._solve = traj._solve
        return traj

    def __call__(self, x):
        try:
            traj = self.trajectory(x)
        except PcrformError:
            return math.inf, np.zeros_like(x)
        terms = evaluate_costs(self.problem, traj)
        total = CostGrad.zero(traj)
        for t in terms.values():
            total = total + t
        gq, gT = map_gradients(traj, total.grad_coeffs, total.grad_T)
        T = traj.durations
        grad = np.concatenate([gq.ravel(), gT * T])
        if not math.isfinite(total.value) or not np.all(np.isfinite(grad)):
            return math.inf, np.zeros_like(x)
        return total.value, grad


class _CompiledObjective(_Objective):
    """Same objective as :class:`_Objective` evaluated by one compiled kernel."""

    def __init__(self, problem: PlanningProblem):
        super().__init__(problem)
        p = problem
        w = p.weights
        self._p0 = p.start.as_array()
        self._pf = p.goal.as_array()
        if p.ofps_points is not None and len(p.ofps_points):
            self._pts = np.ascontiguousarray(np.asarray(p.ofps_points, float).reshape(-1, 3))
            self._times = np.ascontiguousarray(np.asarray(p.ofps_times, float).reshape(-1))
        else:
            self._pts = np.zeros((0, 3))
            self._times = np.zeros(0)
        self._weights = np.array(
            [w.formation, w.effort, w.time_regularization, w.collision, w.swarm, w.dynamics]
        )
        self._limits = np.array([p.limits.v_max, p.limits.a_max], dtype=float)
        self._clear = np.array([p.obstacle_clearance, p.swarm_clearance], dtype=float)
        self._obstacles = _obstacle_arrays(p.obstacles)
        stack = p.peers if p.peers is not None else TrajectoryStack([])
        self._peers = (
            np.ascontiguousarray(stack.coeffs),
            np.ascontiguousarray(stack.knots),
            np.ascontiguousarray(stack.start),
            np.ascontiguousarray(stack.end),
            np.ascontiguousarray(stack.npieces.astype(np.int64)),
        )

    def evaluate(self, x):
        q, tau = self.unpack(np.asarray(x, dtype=float))
        T = time_map(tau)
        if np.any(~np.isfinite(T)) or np.any(T < MIN_DURATION):
            return math.inf, None, None, None
        value, gq, gT, terms, _, ok = _kernels.trajectory_objective(
            np.ascontiguousarray(q), T, self._p0, self._pf, float(self.problem.start_time),
            int(self.problem.kappa), self._pts, self._times,
            self._weights, self._limits, self._clear, *self._obstacles, *self._peers,
        )
        if not ok:
            return math.inf, None, None, None
        return value, gq, gT * T, terms

    def __call__(self, x):
        value, gq, gtau, _ = self.evaluate(x)
        if gq is None or not math.isfinite(value):
            return math.inf, np.zeros_like(x)
        grad = np.concatenate([gq.ravel(), gtau])
        if not np.all(np.isfinite(grad)):
            return math.inf, np.zeros_like(x)
        return value, grad


def _obstacle_arrays(field_):
    """Sphere centers/radii and box corners as contiguous arrays for the kernel."""
    spheres = getattr(field_, "spheres", ()) if field_ is not None else ()
    boxes = getattr(field_, "boxes", ()) if field_ is not None else ()
    if field_ is not None and not hasattr(field_, "spheres"):
        raise TypeError("compiled backend needs an ObstacleField; use backend='reference'")
    sc = np.array([s.center for s in spheres], dtype=float).reshape(-1, 3)
    sr = np.array([s.radius for s in spheres], dtype=float).reshape(-1)
    lo = np.array([b.lo for b in boxes], dtype=float).reshape(-1, 3)
    hi = np.array([b.hi for b in boxes], dtype=float).reshape(-1, 3)
    return sc, sr, lo, hi


OBJECTIVE_BACKENDS = {"compiled": _CompiledObjective, "reference": _Objective}


def straight_line_guess(problem: PlanningProblem):
    """Waypoints on the segment between the boundary positions, equal durations."""
    M = problem.pieces
    a = problem.start.position
    b = problem.goal.position
    fr = np.arange(1, M) / M
    q = a[None, :] + fr[:, None] * (b - a)[None, :]
    T = np.full(M, problem.horizon / M)
    return q, T


def pack(q, T) -> np.ndarray:
    return np.concatenate([np.asarray(q, dtype=float).ravel(), time_map_inverse(T)])


def optimize(
    problem: PlanningProblem,
    initial_guess=None,
    settings: Optional[LbfgsSettings] = None,
    backend: str = "compiled",
) -> tuple[PolyTrajectory, OptimizeReport]:
    """Solve the penalized planning problem with L-BFGS.

    ``initial_guess`` is ``(waypoints, durations)``; a straight-line seed is
    used when omitted. A line-search failure is not raised: the best iterate is
    returned and the report is flagged. ``backend`` picks the compiled kernel
    or the numpy reference objective; both compute the same function.
    """
    if problem.pieces < 1:
        raise ValueError("at least one piece is required")
    if backend not in OBJECTIVE_BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    q0, T0 = initial_guess if initial_guess is not None else straight_line_guess(problem)
    obj = OBJECTIVE_BACKENDS[backend](problem)
    x0 = pack(q0, T0)
    f0, _ = obj(x0)
    if not math.isfinite(f0):
        raise NonFiniteCost("cost is not finite at the initial guess")
    res = minimize_lbfgs(obj, x0, settings)
    traj = obj.trajectory(res.x)
    terms = evaluate_costs(problem, traj)
    breakdown = {k: v.value for k, v in terms.items()}
    report = OptimizeReport(
        iterations=res.iterations,
        evaluations=res.evaluations,
        termination=res.reason,
        cost=float(sum(breakdown.values())),
        breakdown=breakdown,
        cost_history=res.cost_history,
        line_search_failed=res.line_search_failed,
    )
    return traj, report


def solution_guess(traj: PolyTrajectory):
    """``(waypoints, durations)`` of a trajectory produced by :func:`optimize`."""
    if traj.waypoints is None:
        raise ValueError("trajectory carries no waypoint parameterization")
    return traj.waypoints.copy(), traj.durations.copy()
