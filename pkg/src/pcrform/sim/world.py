"""Fixed-step asynchronous swarm simulation.

A single coordinator advances time. Agents replan on their own schedule
(fixed period with per-agent phase offsets) against an immutable snapshot of
the trajectories they have received; results of one tick are committed in
agent-id order and broadcast on the bus.
"""

from __future__ import annotations

import logging
import math
import time as _time
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.spatial.distance import pdist

from .. import _kernels
from ..errors import (
    InsufficientPeers,
    NonFiniteCost,
    PcrformError,
    RegistrationFailed,
    SimulationDiverged,
    UnknownAgent,
)
from ..formation import OFPS, FormationSpec, compute_ofps, formation_error, sample_peer_frames
from ..optimizer import (
    DynamicLimits,
    LbfgsSettings,
    OptimizeReport,
    PlannerWeights,
    PlanningProblem,
    optimize,
)
from ..robust import RansacConfig
from ..trajectory import BoundaryState, PolyTrajectory, TrajectoryStack
from .agents import AgentState, AgentStatus, OutlierPolicy
from .bus import BroadcastBus
from .metrics import MetricsLog
from .obstacles import ObstacleField

log = logging.getLogger(__name__)

DIVERGENCE_RADIUS = 1e5
_EPS = 1e-9


@dataclass(frozen=True)
class SimSettings:
    """Simulation and planner parameters shared by every agent."""

    dt: float = 0.05
    duration: float = 30.0
    replan_period: float = 0.5
    latency: float = 0.0
    metrics_period: float = 0.1
    horizon: float = 3.0
    pieces: int = 5
    ofps_frames: int = 15
    kappa: int = 8
    cruise_speed: float = 1.0
    obstacle_clearance: float = 0.5
    swarm_clearance: float = 0.6
    weights: PlannerWeights = field(default_factory=PlannerWeights)
    limits: DynamicLimits = field(default_factory=DynamicLimits)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    lbfgs: LbfgsSettings = field(default_factory=lambda: LbfgsSettings(max_iterations=100))
    record_timing: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("dt", "duration", "replan_period", "metrics_period", "horizon", "cruise_speed"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.latency < 0:
            raise ValueError("latency must be non-negative")
        if self.pieces < 1 or self.ofps_frames < 1 or self.kappa < 1:
            raise ValueError("pieces, ofps_frames and kappa must be >= 1")

    @property
    def peer_radius(self) -> float:
        """Peers farther than this cannot come within clearance over one horizon."""
        return 2.0 * self.limits.v_max * self.horizon + self.swarm_clearance


@dataclass(frozen=True, eq=False)
class Snapshot:
    """What one agent sees when it starts a replan."""

    time: float
    spec: FormationSpec
    peers: Mapping[int, PolyTrajectory]
    obstacles: Optional[ObstacleField]
    settings: SimSettings


@dataclass(frozen=True, eq=False)
class ReplanResult:
    agent_id: int
    trajectory: PolyTrajectory
    ofps: Optional[OFPS]
    report: Optional[OptimizeReport]
    duration: float
    flags: tuple = ()


@dataclass
class World:
    spec: FormationSpec
    agents: dict
    settings: SimSettings
    obstacles: Optional[ObstacleField] = None
    bus: BroadcastBus = None
    time: float = 0.0
    steps: int = 0
    known: dict = field(default_factory=dict)
    policy: Optional[OutlierPolicy] = None
    metrics: MetricsLog = field(default_factory=MetricsLog)
    rng: np.random.Generator = None
    next_metric: float = 0.0

    def __post_init__(self):
        if self.bus is None:
            self.bus = BroadcastBus(latency=self.settings.latency)
        if self.rng is None:
            self.rng = np.random.default_rng(np.random.SeedSequence([self.settings.seed, 7]))

    @property
    def ids(self) -> list[int]:
        return sorted(self.agents)

    def positions(self, normal_only: bool = False) -> dict:
        return {
            i: a.position.copy()
            for i, a in sorted(self.agents.items())
            if not normal_only or a.is_normal
        }

    def view_of(self, agent: AgentState) -> dict:
        """Peer trajectories currently known to ``agent``."""
        table = agent.view if agent.view is not None else self.known
        return {
            j: tr for j, tr in table.items()
            if j != agent.id and self.bus.accepts(agent.id, j)
        }

    def snapshot_for(self, agent: AgentState) -> Snapshot:
        return Snapshot(self.time, self.spec, self.view_of(agent), self.obstacles, self.settings)

    def broadcast(self, agent: AgentState) -> None:
        self.bus.publish(agent.id, agent.trajectory.to_bytes(), self.time)

    def lose_link(self, agent_id: int) -> None:
        """Cut ``agent_id`` off the bus: nobody hears it and it hears nobody new."""
        if agent_id not in self.agents:
            raise UnknownAgent(f"agent {agent_id} is not in the swarm")
        agent = self.agents[agent_id]
        agent.status = AgentStatus.COMM_LOST
        agent.view = dict(self.view_of(agent))
        for j in self.agents:
            if j != agent_id:
                self.bus.drop_link(j, agent_id)


def build_world(
    spec: FormationSpec,
    starts: Mapping[int, np.ndarray],
    goals: Mapping[int, np.ndarray],
    settings: Optional[SimSettings] = None,
    obstacles: Optional[ObstacleField] = None,
) -> World:
    """Agents at rest at ``starts``; each broadcasts a hold trajectory at t = 0."""
    settings = settings or SimSettings()
    _kernels.warmup()
    ids = sorted(spec.ids)
    if set(starts) != set(ids) or set(goals) != set(ids):
        raise UnknownAgent("starts and goals must cover exactly the formation ids")
    agents = {}
    for k, i in enumerate(ids):
        p = np.asarray(starts[i], dtype=float).reshape(3).copy()
        agents[i] = AgentState(
            id=i,
            position=p,
            goal=np.asarray(goals[i], dtype=float).reshape(3).copy(),
            trajectory=PolyTrajectory.stationary(p, 0.0, settings.horizon),
            next_replan=settings.replan_period * (k + 1) / len(ids),
        )
    world = World(spec=spec, agents=agents, settings=settings, obstacles=obstacles,
                  next_metric=settings.metrics_period)
    for i in ids:
        world.broadcast(agents[i])
        world.known[i] = agents[i].trajectory
    return world


def inject_outliers(world: World, policy: OutlierPolicy) -> World:
    """Mark ``policy.affected`` as abnormal from ``policy.onset`` on."""
    unknown = [i for i in policy.affected if i not in world.agents]
    if unknown:
        raise UnknownAgent(f"agents {unknown} are not in the swarm")
    if not policy.affected:
        return world
    world.policy = policy
    return world


def _is_outlier_now(world: World, agent: AgentState) -> bool:
    p = world.policy
    return p is not None and agent.id in p.affected and world.time >= p.onset - _EPS


def local_target(
    position: np.ndarray,
    goal: np.ndarray,
    settings: SimSettings,
    obstacles: Optional[ObstacleField] = None,
) -> BoundaryState:
    """Terminal state for one horizon: toward the goal at cruise speed.

    A goal within reach becomes a rest state. Targets inside the obstacle
    margin are pushed out along the distance gradient.
    """
    d = goal - position
    dist = float(np.linalg.norm(d))
    reach = settings.cruise_speed * settings.horizon
    if dist <= reach:
        target, vel = goal.copy(), np.zeros(3)
    else:
        u = d / dist
        target = position + reach * u
        # slow down over the last horizon so the goal is approached gently
        vel = settings.cruise_speed * u * min(1.0, (dist - reach) / reach)
    if obstacles is not None and len(obstacles):
        margin = settings.obstacle_clearance + 0.3
        for _ in range(8):
            sd, g = obstacles.signed_distance_many(target[None, :])
            if sd[0] >= margin:
                break
            target = target + (margin - sd[0]) * g[0]
    return BoundaryState(target, vel, np.zeros(3))


def _start_state(agent: AgentState) -> BoundaryState:
    return BoundaryState(agent.position.copy(), agent.velocity.copy(), agent.acceleration.copy())


def _nearby_peers(snapshot: Snapshot, position: np.ndarray) -> list[PolyTrajectory]:
    r = snapshot.settings.peer_radius
    out = []
    for j in sorted(snapshot.peers):
        tr = snapshot.peers[j]
        if np.linalg.norm(tr.eval_clamped(snapshot.time) - position) <= r:
            out.append(tr)
    return out


def _reuse_ofps(previous: OFPS, t0: float) -> tuple[np.ndarray, np.ndarray]:
    """Hold-last-valid: keep the still-future part of a previous sequence."""
    keep = previous.times >= t0
    if not np.any(keep):
        return previous.points[-1:].copy(), np.array([t0])
    return previous.points[keep], previous.times[keep]


def replan_agent(agent: AgentState, snapshot: Snapshot) -> ReplanResult:
    """Peer frames, then OFPS, then optimization, for one agent at ``snapshot.time``.

    Raises
    ------
    InsufficientPeers
        Fewer known peers than the registration needs.
    """
    s = snapshot.settings
    t0 = snapshot.time
    wall = _time.perf_counter()
    peers = {j: tr for j, tr in snapshot.peers.items() if j in snapshot.spec.desired}
    need = max(3, s.ransac.min_sample_size)
    if len(peers) < need:
        raise InsufficientPeers(f"agent {agent.id} knows {len(peers)} peers, needs {need}")

    flags = []
    frames = sample_peer_frames(peers, t0, s.horizon, s.ofps_frames)
    ransac = RansacConfig(
        inlier_threshold=s.ransac.inlier_threshold,
        confidence=s.ransac.confidence,
        max_iterations=s.ransac.max_iterations,
        min_sample_size=s.ransac.min_sample_size,
        rng_seed=(s.ransac.rng_seed + 7919 * agent.id + int(round(t0 * 1000))) & 0x7FFFFFFF,
        scale_bounds=s.ransac.scale_bounds,
    )
    ofps = None
    try:
        ofps = compute_ofps(agent.id, snapshot.spec, frames, ransac)
        pts, times = ofps.points, ofps.times
    except RegistrationFailed as exc:
        flags.append(f"registration_failed:{exc.frame_index}")
        if isinstance(agent.last_ofps, OFPS):
            pts, times = _reuse_ofps(agent.last_ofps, t0)
        else:
            pts, times = None, None

    start = _start_state(agent)
    goal = local_target(agent.position, agent.goal, s, snapshot.obstacles)
    problem = PlanningProblem(
        start=start,
        goal=goal,
        start_time=t0,
        pieces=s.pieces,
        horizon=s.horizon,
        ofps_points=pts,
        ofps_times=times,
        peers=TrajectoryStack(_nearby_peers(snapshot, agent.position)),
        obstacles=snapshot.obstacles,
        weights=s.weights,
        limits=s.limits,
        kappa=s.kappa,
        obstacle_clearance=s.obstacle_clearance,
        swarm_clearance=s.swarm_clearance,
    )
    try:
        traj, report = optimize(problem, settings=s.lbfgs)
    except (NonFiniteCost, PcrformError) as exc:
        flags.append(f"optimizer_failed:{type(exc).__name__}")
        traj, report = PolyTrajectory.stationary(agent.position, t0, s.horizon), None
    return ReplanResult(
        agent_id=agent.id,
        trajectory=traj,
        ofps=ofps,
        report=report,
        duration=_time.perf_counter() - wall,
        flags=tuple(flags),
    )


def _advance(world: World, dt: float) -> None:
    t = world.time
    for i in world.ids:
        a = world.agents[i]
        if _is_outlier_now(world, a):
            if a.status != AgentStatus.OUTLIER:
                a.status = AgentStatus.OUTLIER
            step = world.policy.displacement(world.rng, dt)
            a.position = a.position + step
            a.velocity = step / dt
            a.acceleration = np.zeros(3)
            continue
        tr = a.trajectory
        a.position = tr.eval_clamped(t, 0)
        if t > tr.end_time + _EPS:
            a.velocity = np.zeros(3)
            a.acceleration = np.zeros(3)
        else:
            a.velocity = tr.eval_clamped(t, 1)
            a.acceleration = tr.eval_clamped(t, 2)


def _deliver(world: World) -> None:
    for msg in world.bus.deliver(world.time):
        world.known[msg.sender] = PolyTrajectory.from_bytes(msg.payload)


def _commit(world: World, agent: AgentState, result: ReplanResult) -> None:
    m = world.metrics
    m.replans += 1
    m.replan_durations.append(result.duration)
    agent.trajectory = result.trajectory
    agent.last_replan_time = world.time
    agent.last_replan_wall = result.duration
    agent.holding = False
    agent.flags = list(result.flags)
    if result.ofps is not None:
        agent.last_ofps = result.ofps
        agent.inlier_fraction = result.ofps.inlier_fraction
    if any(f.startswith("registration_failed") for f in result.flags):
        m.registration_failures += 1
    if any(f.startswith("optimizer_failed") for f in result.flags):
        m.optimizer_failures += 1
    if result.report is not None and result.report.converged:
        m.converged_replans += 1
    if agent.status != AgentStatus.COMM_LOST:
        world.broadcast(agent)


def _hold(world: World, agent: AgentState) -> None:
    world.metrics.insufficient_peers += 1
    agent.trajectory = PolyTrajectory.stationary(agent.position, world.time, world.settings.horizon)
    agent.holding = True
    agent.flags = ["insufficient_peers"]
    if agent.status != AgentStatus.COMM_LOST:
        world.broadcast(agent)


def _replan_due(world: World) -> None:
    t = world.time
    period = world.settings.replan_period
    due = [i for i in world.ids if world.agents[i].next_replan <= t + _EPS]
    results = {}
    for i in due:
        a = world.agents[i]
        if a.status == AgentStatus.OUTLIER:
            continue
        try:
            results[i] = replan_agent(a, world.snapshot_for(a))
        except InsufficientPeers:
            results[i] = None
    for i in due:
        a = world.agents[i]
        while a.next_replan <= t + _EPS:
            a.next_replan += period
        if a.status == AgentStatus.OUTLIER:
            a.trajectory = PolyTrajectory.stationary(a.position, t, world.settings.horizon)
            world.broadcast(a)
        elif results[i] is None:
            _hold(world, a)
        else:
            _commit(world, a, results[i])


def record_metrics(world: World) -> None:
    pos_all = world.positions()
    pos_norm = world.positions(normal_only=True)
    e_all = formation_error(pos_all, world.spec)
    e_norm = formation_error(pos_norm, world.spec) if len(pos_norm) >= 3 else float("nan")
    P = np.array(list(pos_all.values()))
    min_pair = float(pdist(P).min()) if len(P) > 1 else float("inf")
    if world.obstacles is not None and len(world.obstacles):
        clearance = float(world.obstacles.signed_distance_many(P)[0].min())
    else:
        clearance = float("inf")
    fr = [a.inlier_fraction for a in world.agents.values() if a.is_normal and not math.isnan(a.inlier_fraction)]
    if world.settings.record_timing:
        t_mean, t_std = world.metrics.timing_stats()
    else:
        t_mean = t_std = float("nan")
    world.metrics.append(
        time=world.time,
        e_dist_all=e_all,
        e_dist_normal=e_norm,
        t_opt_mean=t_mean,
        t_opt_std=t_std,
        min_pair_dist=min_pair,
        min_obs_clearance=clearance,
        inlier_fraction_mean=float(np.mean(fr)) if fr else float("nan"),
    )


def step(world: World, dt: Optional[float] = None) -> World:
    """Advance the world by ``dt`` (default: the configured step), in place."""
    dt = world.settings.dt if dt is None else float(dt)
    if not dt > 0:
        raise ValueError("dt must be positive")
    world.steps += 1
    # snap to a fine grid so repeated steps of 0.05 s land on 0.1, 0.2, ... exactly
    world.time = round(world.time + dt, 12)
    if not world.agents:
        return world
    _advance(world, dt)
    _deliver(world)
    _replan_due(world)
    for a in world.agents.values():
        if not np.all(np.isfinite(a.position)) or np.linalg.norm(a.position) > DIVERGENCE_RADIUS:
            raise SimulationDiverged(f"agent {a.id} left the domain at t={world.time:.3f}")
    if world.time >= world.next_metric - _EPS:
        record_metrics(world)
        while world.next_metric <= world.time + _EPS:
            world.next_metric += world.settings.metrics_period
    return world


def run(world: World, until: Optional[float] = None) -> World:
    """Step until ``until`` (default: the configured duration)."""
    until = world.settings.duration if until is None else until
    n = int(round((until - world.time) / world.settings.dt))
    for _ in range(max(n, 0)):
        step(world)
    return world
