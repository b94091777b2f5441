import math

import numpy as np
import pytest

from pcrform.errors import NonFiniteCost, TimestampOutOfDomain
from pcrform.optimizer import (
    DynamicLimits,
    LbfgsSettings,
    PlannerWeights,
    PlanningProblem,
    cost_control_effort,
    cost_dynamics,
    cost_formation,
    cost_obstacle,
    cost_swarm,
    evaluate_costs,
    minimize_lbfgs,
    optimize,
    pack,
    solution_guess,
    time_map,
    time_map_inverse,
)
from pcrform.optimizer.planner import _CompiledObjective, _Objective
from pcrform.sim import ObstacleField, Sphere
from pcrform.trajectory import BoundaryState, PolyTrajectory, TrajectoryStack, minco_map, sample_constraint_points

from conftest import cost_terms, random_planning_instance, rel_err, term_gradient_check


def line_traj(T=(1.0, 1.0)):
    """Constant-velocity x(t) = t from rest-free boundaries (exactly linear)."""
    total = float(np.sum(T))
    knots = np.cumsum(T)[:-1]
    q = np.stack([knots, np.zeros_like(knots), np.zeros_like(knots)], axis=1)
    return minco_map(q, T, BoundaryState([0, 0, 0], [1, 0, 0]), BoundaryState([total, 0, 0], [1, 0, 0]))


# --- individual terms ---------------------------------------------------------


def test_effort_zero_for_constant_trajectory():
    tr = minco_map(np.zeros((2, 3)), [1, 1, 1], BoundaryState(np.zeros(3)), BoundaryState(np.zeros(3)))
    assert cost_control_effort(tr).value == pytest.approx(0.0, abs=1e-20)


def test_effort_closed_form_single_piece():
    c = np.zeros((1, 6, 3))
    c[0, 3, 0] = 1.0  # x = t^3, jerk = 6
    c[0, 4, 1] = 1.0  # y = t^4, jerk = 24 t
    tr = PolyTrajectory(c, [2.0])
    expect = 36 * 2.0 + 576 * 2.0**3 / 3
    assert cost_control_effort(tr).value == pytest.approx(expect, rel=1e-10)
    assert cost_control_effort(tr, rho=0.5).value == pytest.approx(expect + 1.0, rel=1e-10)


def test_formation_zero_on_exact_tracking_and_constant_offset():
    tr = line_traj()
    times = np.linspace(0, 2, 5)
    pts = np.stack([times, 0 * times, 0 * times], axis=1)
    assert cost_formation(tr, pts, times).value == pytest.approx(0.0, abs=1e-20)
    d = np.array([0.1, -0.2, 0.3])
    assert cost_formation(tr, pts + d, times).value == pytest.approx(5 * d @ d, rel=1e-12)


def test_formation_out_of_domain():
    tr = line_traj()
    with pytest.raises(TimestampOutOfDomain):
        cost_formation(tr, np.zeros((1, 3)), [2.5])
    assert math.isfinite(cost_formation(tr, np.zeros((1, 3)), [2.5], clamp=True).value)


def test_obstacle_hinge_arithmetic():
    tr = line_traj()
    s = sample_constraint_points(tr, 1)  # samples at x = 0 and x = 1
    far = ObstacleField(spheres=(Sphere((0.0, 50.0, 0.0), 1.0),))
    assert cost_obstacle(tr, s, far, 0.5).value == 0.0
    # sample at x = 1 sits d_safe / 2 = 0.25 from the sphere surface
    near = ObstacleField(spheres=(Sphere((1.0, 1.25, 0.0), 1.0),))
    assert cost_obstacle(tr, s, near, 0.5, weight=10000.0).value == pytest.approx(10000.0 * 0.25**3)


def test_swarm_hinge_arithmetic():
    tr = line_traj()
    s = sample_constraint_points(tr, 1)
    far = TrajectoryStack([PolyTrajectory.stationary([0, 10, 0], 0.0, 2.0)])
    assert cost_swarm(tr, s, far, 0.6).value == 0.0
    near = TrajectoryStack([PolyTrajectory.stationary([1.0, 0.3, 0.0], 0.0, 2.0)])
    assert cost_swarm(tr, s, near, 0.6, weight=2.0).value == pytest.approx(2.0 * 0.3**3)


def test_dynamics_hinge_arithmetic():
    tr = line_traj()  # speed 1 everywhere, zero acceleration
    s = sample_constraint_points(tr, 2)
    assert cost_dynamics(tr, s, v_max=2.0, a_max=1.0).value == 0.0
    v_max = 1.0 / math.sqrt(2.0)  # ||v||^2 = 2 v_max^2
    assert cost_dynamics(tr, s, v_max, 1.0, weight=100.0).value == pytest.approx(100.0 * len(s) * (v_max**2) ** 3)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("name", ["effort", "formation", "obstacle", "swarm", "dynamics"])
def test_term_gradients(seed, name):
    inst = random_planning_instance(np.random.default_rng(seed))
    value, err_q, err_T = term_gradient_check(inst, cost_terms(inst)[name])
    assert value > 0
    assert err_q < 1e-4 and err_T < 1e-4


# --- time map -----------------------------------------------------------------


def test_time_map():
    assert time_map([0.0])[0] == 1.0
    tau = np.array([-2.0, 0.3, 1.7])
    assert np.allclose(time_map_inverse(time_map(tau)), tau, atol=1e-12)


def make_problem(inst, weights=None):
    return PlanningProblem(
        start=inst["p0"], goal=inst["pf"], start_time=inst["traj"].start_time, pieces=len(inst["T"]),
        horizon=float(np.sum(inst["T"])), ofps_points=inst["ofps_points"], ofps_times=inst["ofps_times"],
        peers=inst["peers"], obstacles=inst["field"], weights=weights or PlannerWeights(),
        limits=DynamicLimits(*inst["limits"]),
    )


@pytest.mark.parametrize("seed", range(5))
def test_total_gradient_in_tau(seed):
    inst = random_planning_instance(np.random.default_rng(seed))
    obj = _Objective(make_problem(inst))
    x = pack(inst["q"], inst["T"])
    _, g = obj(x)
    fd = np.array([(obj(x + e)[0] - obj(x - e)[0]) / 2e-6 for e in np.eye(len(x)) * 1e-6])
    assert rel_err(g, fd) < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_compiled_objective_matches_reference(seed):
    inst = random_planning_instance(np.random.default_rng(seed))
    problem = make_problem(inst)
    x = pack(inst["q"], inst["T"])
    f_ref, g_ref = _Objective(problem)(x)
    f_fast, g_fast = _CompiledObjective(problem)(x)
    assert f_fast == pytest.approx(f_ref, rel=1e-11)
    assert np.allclose(g_fast, g_ref, rtol=1e-9, atol=1e-9 * np.abs(g_ref).max())


# --- L-BFGS -------------------------------------------------------------------


def rosenbrock(x):
    f = 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2
    g = np.array([-400 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200 * (x[1] - x[0] ** 2)])
    return f, g


def test_lbfgs_rosenbrock():
    res = minimize_lbfgs(rosenbrock, [-1.2, 1.0], LbfgsSettings(rel_cost_tol=0.0))
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-5)
    assert res.reason == "gradient"
    assert all(b <= a for a, b in zip(res.cost_history, res.cost_history[1:]))


def test_lbfgs_rejects_nonfinite_start():
    with pytest.raises(NonFiniteCost):
        minimize_lbfgs(lambda x: (math.nan, np.zeros_like(x)), [0.0])


# --- optimize -----------------------------------------------------------------


def straight_line_problem():
    horizon = 3.0
    times = np.linspace(0.0, horizon, 16)
    pts = np.stack([times, 0 * times, 0 * times], axis=1)
    return PlanningProblem(
        start=BoundaryState([0, 0, 0], [1, 0, 0]),
        goal=BoundaryState([3, 0, 0], [1, 0, 0]),
        pieces=5, horizon=horizon, ofps_points=pts, ofps_times=times,
        weights=PlannerWeights(rho=0.0),
    )


@pytest.mark.parametrize("backend", ["compiled", "reference"])
def test_optimize_straight_line(backend):
    problem = straight_line_problem()
    traj, report = optimize(problem, backend=backend)
    assert report.breakdown["formation"] / problem.weights.formation < 1e-4
    ts = np.linspace(traj.start_time, traj.end_time, 200)
    P = traj.eval_many(ts)
    assert np.max(np.abs(P[:, 1:])) < 0.01
    assert np.all(np.diff(P[:, 0]) >= 0)


def test_optimize_refeed_is_fixed_point():
    problem = straight_line_problem()
    traj, report = optimize(problem)
    again, rep2 = optimize(problem, initial_guess=solution_guess(traj))
    assert rep2.iterations <= 2
    assert rep2.cost == pytest.approx(report.cost, abs=1e-10)


@pytest.mark.parametrize("seed", range(50))
def test_optimize_cost_history_non_increasing(seed):
    inst = random_planning_instance(np.random.default_rng(seed))
    _, report = optimize(make_problem(inst), settings=LbfgsSettings(max_iterations=60))
    hist = report.cost_history
    assert all(b <= a for a, b in zip(hist, hist[1:]))
    assert report.cost <= hist[0] + 1e-9


def test_optimize_avoids_sphere():
    problem = straight_line_problem()
    # slightly off the line: a sphere centered on it is a symmetric saddle
    problem.obstacles = ObstacleField(spheres=(Sphere((1.5, 0.1, 0.0), 0.5),))
    problem.ofps_points = None
    traj, _ = optimize(problem)
    d, _ = problem.obstacles.signed_distance_many(traj.eval_many(np.linspace(0, traj.end_time, 300)))
    assert d.min() > 0.0


def test_penalty_inactivity():
    inst = random_planning_instance(np.random.default_rng(3), active=False)
    problem = make_problem(inst)
    terms = evaluate_costs(problem, inst["traj"])
    assert terms["obstacle"].value == terms["swarm"].value == terms["dynamics"].value == 0.0
    w = problem.weights
    expect = (cost_control_effort(inst["traj"], w.effort, w.time_regularization).value
              + cost_formation(inst["traj"], inst["ofps_points"], inst["ofps_times"], w.formation, clamp=True).value)
    assert sum(t.value for t in terms.values()) == pytest.approx(expect, rel=1e-14)


def test_formation_weight_scales_linearly():
    inst = random_planning_instance(np.random.default_rng(4))
    a = evaluate_costs(make_problem(inst), inst["traj"])["formation"].value
    b = evaluate_costs(make_problem(inst, PlannerWeights(formation=600.0)), inst["traj"])["formation"].value
    assert b == 2 * a


def test_weights_validation():
    with pytest.raises(ValueError):
        PlannerWeights(formation=-1.0)
    with pytest.raises(ValueError):
        DynamicLimits(v_max=0.0)
    assert PlannerWeights().time_regularization == 80.0
    assert PlannerWeights(rho=3.0).time_regularization == 3.0


def test_optimize_rejects_unknown_backend():
    with pytest.raises(ValueError):
        optimize(straight_line_problem(), backend="gpu")
