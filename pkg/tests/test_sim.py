import dataclasses

import numpy as np
import pytest

from pcrform.errors import InsufficientPeers, SimulationDiverged, UnknownAgent
from pcrform.formation import compute_ofps, formation_error, sample_peer_frames
from pcrform.geometry import random_sim3, apply
from pcrform.robust import RansacConfig
from pcrform.shapes import cube_grid
from pcrform.sim import (
    METRIC_COLUMNS,
    AgentStatus,
    Box,
    BroadcastBus,
    MetricsLog,
    ObstacleField,
    OutlierPolicy,
    SimSettings,
    Sphere,
    World,
    build_world,
    inject_outliers,
    local_target,
    replan_agent,
    run,
    signed_distance,
    step,
)
from pcrform.trajectory import BoundaryState, PolyTrajectory, minco_map


def small_world(n=8, settings=None, offset=(0.0, 0.0, 0.0), noise=0.0, seed=0, obstacles=None):
    spec = cube_grid(n)
    rng = np.random.default_rng(seed)
    starts = {i: p + np.asarray(offset) + noise * rng.standard_normal(3) for i, p in spec.desired.items()}
    goals = {i: p + np.asarray(offset) for i, p in spec.desired.items()}
    return build_world(spec, starts, goals, settings or SimSettings(duration=3.0), obstacles)


# --- bus ----------------------------------------------------------------------


def test_bus_latency_and_per_sender_order():
    bus = BroadcastBus(latency=0.1)
    bus.publish(1, b"a", 0.0)
    bus.publish(2, b"x", 0.02)
    bus.publish(1, b"b", 0.05)
    assert bus.deliver(0.09) == []
    got = bus.deliver(0.2)
    assert [(m.sender, m.payload) for m in got] == [(1, b"a"), (2, b"x"), (1, b"b")]
    assert len(bus) == 0


def test_bus_same_time_keeps_publish_order():
    bus = BroadcastBus()
    for k in range(5):
        bus.publish(k % 2, bytes([k]), 1.0)
    assert [m.payload[0] for m in bus.deliver(1.0)] == [0, 1, 2, 3, 4]


def test_bus_drop_policy():
    bus = BroadcastBus()
    bus.drop_link(3, 1)
    assert not bus.accepts(3, 1)
    assert bus.accepts(3, 2) and bus.accepts(1, 3)
    with pytest.raises(ValueError):
        BroadcastBus(latency=-1.0)


# --- obstacles ----------------------------------------------------------------


def test_sphere_signed_distance_examples():
    field = ObstacleField(spheres=(Sphere((0.0, 0.0, 0.0), 1.0),))
    d, g = signed_distance(field, [0, 0, 0])
    assert d == -1.0 and np.array_equal(g, [1.0, 0.0, 0.0])
    d, g = signed_distance(field, [0, 2, 0])
    assert d == pytest.approx(1.0) and np.allclose(g, [0, 1, 0])


def test_tie_break_lowest_index():
    field = ObstacleField(spheres=(Sphere((-2.0, 0, 0), 1.0), Sphere((2.0, 0, 0), 1.0)))
    d, g = signed_distance(field, [0, 0, 0])
    assert d == pytest.approx(1.0)
    assert np.allclose(g, [1.0, 0, 0])  # gradient of the first sphere


def test_empty_field_is_far():
    d, g = signed_distance(ObstacleField(), [1, 2, 3])
    assert d == np.inf and np.array_equal(g, np.zeros(3))


def _sample_sphere_surface(s, n=200000, rng=None):
    v = rng.standard_normal((n, 3))
    return np.asarray(s.center) + s.radius * v / np.linalg.norm(v, axis=1)[:, None]


def _box_surface_distance(b, p, n=400):
    """Distance from ``p`` to a dense grid on each face of the box.

    On a rectangular grid the nearest node is the per-axis nearest coordinate,
    so the brute-force minimum over all nodes reduces to two 1-D searches.
    """
    lo, hi = np.asarray(b.lo, float), np.asarray(b.hi, float)
    best = np.inf
    for axis in range(3):
        u, v = [a for a in range(3) if a != axis]
        gu = np.linspace(lo[u], hi[u], n)
        gv = np.linspace(lo[v], hi[v], n)
        for val in (lo[axis], hi[axis]):
            cu = gu[np.argmin(np.abs(gu - p[u]))]
            cv = gv[np.argmin(np.abs(gv - p[v]))]
            q = np.zeros(3)
            q[axis], q[u], q[v] = val, cu, cv
            best = min(best, float(np.linalg.norm(p - q)))
    return best


def test_signed_distance_against_surface_sampling():
    rng = np.random.default_rng(0)
    sphere = Sphere((1.0, -0.5, 0.3), 0.8)
    box = Box((2.0, 1.0, -1.0), (3.5, 2.0, 0.5))
    field = ObstacleField(spheres=(sphere,), boxes=(box,))
    surf = _sample_sphere_surface(sphere, rng=rng)
    for _ in range(25):
        p = rng.uniform(-2, 5, 3)
        d, g = signed_distance(field, p)
        # sphere: brute force over dense samples, refined by projecting the nearest sample
        k = np.argmin(np.linalg.norm(surf - p, axis=1))
        d_sphere_brute = np.linalg.norm(surf - p, axis=1)[k]
        d_sphere = np.linalg.norm(p - np.asarray(sphere.center)) - sphere.radius
        assert abs(abs(d_sphere) - d_sphere_brute) < 2e-2
        d_box_surface = _box_surface_distance(box, p, n=4001)
        lo, hi = np.asarray(box.lo), np.asarray(box.hi)
        inside_box = np.all((p > lo) & (p < hi))
        d_box = -d_box_surface if inside_box else d_box_surface
        assert d == pytest.approx(min(d_sphere, d_box), abs=1e-3)
        # the gradient is a unit vector wherever the distance is differentiable
        assert np.linalg.norm(g) == pytest.approx(1.0)


def test_box_distance_matches_grid_projection_exactly():
    box = Box((0.0, 0.0, 0.0), (1.0, 2.0, 3.0))
    field = ObstacleField(boxes=(box,))
    rng = np.random.default_rng(1)
    for _ in range(50):
        p = rng.uniform(-2, 4, 3)
        # the grid includes every face point with coordinates on a 1e-3 lattice
        brute = _box_surface_distance(box, np.round(p, 3), n=6001)
        lo, hi = np.array(box.lo), np.array(box.hi)
        inside = np.all((np.round(p, 3) > lo) & (np.round(p, 3) < hi))
        d, _ = signed_distance(field, np.round(p, 3))
        assert d == pytest.approx(-brute if inside else brute, abs=1e-6)


def test_primitive_validation():
    with pytest.raises(ValueError):
        Sphere((0, 0, 0), 0.0)
    with pytest.raises(ValueError):
        Box((0, 0, 0), (1, 0, 1))


# --- agents, policies, metrics --------------------------------------------------


def test_outlier_policy_behaviors():
    rng = np.random.default_rng(0)
    assert np.array_equal(OutlierPolicy((1,), "frozen").displacement(rng, 0.05), np.zeros(3))
    drift = OutlierPolicy((1,), "constant_drift", velocity=(1.0, 0.0, 0.0)).displacement(rng, 0.5)
    assert np.allclose(drift, [0.5, 0, 0])
    with pytest.raises(ValueError):
        OutlierPolicy((1,), "teleport")


def test_metrics_log_rules():
    log = MetricsLog()
    row = {c: 0.0 for c in METRIC_COLUMNS}
    log.append(**{**row, "time": 0.1, "e_dist_normal": 1.0})
    log.append(**{**row, "time": 0.2, "e_dist_normal": 3.0, "min_obs_clearance": float("inf")})
    with pytest.raises(ValueError):
        log.append(**{**row, "time": 0.2})
    assert log.steady_state("e_dist_normal", 0.5) == 3.0
    lines = log.to_csv().splitlines()
    assert lines[0] == ",".join(METRIC_COLUMNS)
    assert lines[2].split(",")[6] == "inf"
    assert np.isnan(MetricsLog().timing_stats()[0])


# --- stepping -------------------------------------------------------------------


def test_empty_world_only_advances_time():
    spec = cube_grid(8)
    world = World(spec=spec, agents={}, settings=SimSettings())
    for _ in range(3):
        step(world, 0.1)
    assert world.time == pytest.approx(0.3)
    assert len(world.metrics) == 0 and len(world.bus) == 0
    with pytest.raises(ValueError):
        step(world, 0.0)


def test_agent_follows_known_trajectory():
    world = small_world(settings=SimSettings(replan_period=100.0))
    agent = world.agents[0]
    tr = minco_map([[1.0, 0.5, 0.0]], [1.0, 1.0], BoundaryState(agent.position), BoundaryState(agent.position + [2, 1, 0]))
    agent.trajectory = tr
    for k in range(1, 31):
        step(world)
        expect = tr.eval_clamped(k * world.settings.dt)
        assert np.allclose(agent.position, expect, atol=1e-12)


def test_frozen_outlier_stays_put():
    world = small_world(settings=SimSettings(duration=2.0), offset=(0, 0, 0), noise=0.3)
    inject_outliers(world, OutlierPolicy((2,), "frozen"))
    p = world.agents[2].position.copy()
    for _ in range(20):
        step(world)
        assert np.array_equal(world.agents[2].position, p)
    assert world.agents[2].status == AgentStatus.OUTLIER


def test_inject_unknown_and_empty():
    world = small_world()
    with pytest.raises(UnknownAgent):
        inject_outliers(world, OutlierPolicy((99,), "frozen"))
    inject_outliers(world, OutlierPolicy((), "frozen"))
    assert world.policy is None


def test_replan_at_formation_stays_on_slot():
    world = small_world(n=12)
    agent = world.agents[5]
    result = replan_agent(agent, world.snapshot_for(agent))
    tr = result.trajectory
    P = tr.eval_many(np.linspace(tr.start_time, tr.end_time, 100))
    assert np.max(np.linalg.norm(P - world.spec.desired[5], axis=1)) < 0.05
    assert result.ofps is not None and np.allclose(result.ofps.points, world.spec.desired[5], atol=1e-9)


def test_replan_needs_peers():
    world = small_world()
    agent = world.agents[0]
    snap = dataclasses.replace(world.snapshot_for(agent), peers={1: world.known[1]})
    with pytest.raises(InsufficientPeers):
        replan_agent(agent, snap)


def test_displaced_agent_error_monotone():
    settings = SimSettings(duration=5.0)
    world = small_world(n=12, settings=settings)
    world.agents[4].position = world.agents[4].position + np.array([1.0, 0.0, 0.0])
    world.agents[4].trajectory = PolyTrajectory.stationary(world.agents[4].position, 0.0, settings.horizon)
    world.known[4] = world.agents[4].trajectory
    errors = []
    replans = 0
    while replans < 7:
        before = world.metrics.replans
        step(world)
        if world.agents[4].last_replan_time == world.time:
            errors.append(formation_error(world.positions(), world.spec))
            replans += 1
        assert world.metrics.replans >= before
    assert all(b <= a + 1e-9 for a, b in zip(errors, errors[1:]))
    assert errors[-1] < errors[0]


def test_teleported_outlier_does_not_change_ofps():
    spec = cube_grid(12)
    T = random_sim3(np.random.default_rng(2), scale_range=(1.0, 1.0))
    peers = {i: PolyTrajectory.stationary(apply(T, spec.desired[i]), 0.0, 3.0) for i in spec.ids if i != 0}
    cfg = RansacConfig(rng_seed=17)
    base = compute_ofps(0, spec, sample_peer_frames(peers, 0.0, 3.0, 15), cfg)
    peers[7] = PolyTrajectory.stationary(apply(T, spec.desired[7]) + [12.0, -3.0, 4.0], 0.0, 3.0)
    bad = compute_ofps(0, spec, sample_peer_frames(peers, 0.0, 3.0, 15), cfg)
    assert np.allclose(bad.points, base.points, atol=1e-6)


def test_run_is_deterministic():
    def go():
        settings = SimSettings(duration=2.0, record_timing=False)
        world = small_world(settings=settings, noise=0.3, seed=4)
        inject_outliers(world, OutlierPolicy((3,), "random_walk", sigma=0.5))
        run(world)
        return world.metrics.to_csv()

    a, b = go(), go()
    assert a == b
    assert len(a.splitlines()) == 21
    assert a.splitlines()[1].startswith("0.1,")


def test_metrics_cadence_and_columns():
    world = small_world(settings=SimSettings(duration=1.0))
    run(world)
    t = world.metrics.column("time")
    assert np.all(np.diff(t) > 0)
    assert np.allclose(np.diff(t), 0.1)
    assert world.metrics.replans > 0


def test_latency_delays_knowledge():
    world = small_world(settings=SimSettings(latency=0.3, replan_period=0.5))
    before = {i: world.known[i] for i in world.known}
    while world.time < 0.45:
        step(world)
    # replans started at t ~ 0.0625 have not been delivered before t ~ 0.36
    replanned = [i for i, a in world.agents.items() if a.last_replan_time > 0]
    assert replanned
    early = [i for i in replanned if world.agents[i].last_replan_time + 0.3 > world.time + 1e-9]
    for i in early:
        assert world.known[i] is before[i] or world.known[i].start_time < world.agents[i].last_replan_time


def test_comm_lost_agent_is_excluded():
    world = small_world()
    world.lose_link(3)
    assert world.agents[3].status == AgentStatus.COMM_LOST
    assert 3 not in world.view_of(world.agents[0])
    run(world, 1.0)
    assert world.known[3].start_time == 0.0  # nothing new from agent 3 reached the table
    with pytest.raises(UnknownAgent):
        world.lose_link(42)


def test_divergence_detected():
    world = small_world()
    world.agents[0].trajectory = PolyTrajectory.stationary([1e6, 0, 0], 0.0, 3.0)
    with pytest.raises(SimulationDiverged):
        step(world)


def test_local_target_rules():
    s = SimSettings()
    near = local_target(np.zeros(3), np.array([1.0, 0, 0]), s)
    assert np.allclose(near.position, [1, 0, 0]) and np.allclose(near.velocity, 0)
    far = local_target(np.zeros(3), np.array([100.0, 0, 0]), s)
    assert np.allclose(far.position, [3, 0, 0]) and np.allclose(far.velocity, [1, 0, 0])
    field = ObstacleField(spheres=(Sphere((3.0, 0.0, 0.0), 0.5),))
    pushed = local_target(np.zeros(3), np.array([100.0, 0, 0]), s, field)
    assert signed_distance(field, pushed.position)[0] >= s.obstacle_clearance


def test_settings_validation():
    with pytest.raises(ValueError):
        SimSettings(dt=0.0)
    with pytest.raises(ValueError):
        SimSettings(latency=-0.1)
    assert SimSettings().peer_radius == pytest.approx(2 * 2.0 * 3.0 + 0.6)
