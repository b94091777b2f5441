import numpy as np
import pytest
from numpy.polynomial import Polynomial
from scipy.linalg import null_space

from pcrform.errors import OutOfDomain, SingularSystem, StaleCache
from pcrform.trajectory import (
    NCOEF,
    BoundaryState,
    PolyTrajectory,
    TrajectoryStack,
    _system_matrix,
    basis,
    map_gradients,
    minco_map,
    sample_constraint_points,
)

from conftest import central_difference, rel_err


def random_traj(rng, M=3, start_time=0.0):
    q = rng.uniform(-2, 2, size=(M - 1, 3))
    T = rng.uniform(0.4, 1.5, size=M)
    p0 = BoundaryState(rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(3))
    pf = BoundaryState(rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(3))
    return minco_map(q, T, p0, pf, start_time=start_time), q, T, p0, pf


def test_rest_to_rest_boundaries():
    tr = minco_map(np.zeros((0, 3)), [2.0], BoundaryState([0, 0, 0]), BoundaryState([1, 0, 0]))
    assert np.allclose(tr.eval(0.0), [0, 0, 0], atol=1e-10)
    assert np.allclose(tr.eval(2.0), [1, 0, 0], atol=1e-10)
    for order in (1, 2):
        assert np.allclose(tr.eval(0.0, order), 0.0, atol=1e-10)
        assert np.allclose(tr.eval(2.0, order), 0.0, atol=1e-10)


@pytest.mark.parametrize("M", [2, 3, 7, 50])
def test_waypoint_pass_through(rng, M):
    tr, q, T, p0, pf = random_traj(rng, M)
    knots = np.cumsum(T)[:-1]
    for k, t in enumerate(knots):
        assert np.allclose(tr.eval(t), q[k], atol=1e-9)
    assert np.allclose(tr.eval(tr.end_time, 1), pf.velocity, atol=1e-8)


def test_joint_continuity(rng):
    tr, *_ = random_traj(rng, 5)
    for i in range(tr.num_pieces - 1):
        for order in range(5):
            left = tr.eval_piece(i, tr.durations[i], order)
            right = tr.eval_piece(i + 1, 0.0, order)
            assert np.allclose(left, right, atol=1e-8), (i, order)


def test_linear_system_residual(rng):
    tr, *_ = random_traj(rng, 6)
    b_from_coeffs = _system_matrix(tr.durations) @ tr.coeffs.reshape(-1, 3)
    b = np.zeros_like(b_from_coeffs)
    b[0:3] = tr.boundary[0].as_array()
    for i in range(tr.num_pieces - 1):
        b[3 + 6 * i] = tr.waypoints[i]
    b[-3:] = tr.boundary[1].as_array()
    assert np.max(np.abs(b_from_coeffs - b)) < 1e-10


def _feasibility_rows(T):
    """Constraint rows on flat coefficients (one axis): boundary states, waypoints and C^2 joints."""
    M = len(T)
    rows = []

    def row(piece, tau, order, sign=1.0):
        r = np.zeros(NCOEF * M)
        r[NCOEF * piece:NCOEF * (piece + 1)] = sign * basis(tau, order)
        return r

    for order in range(3):
        rows.append(row(0, 0.0, order))
        rows.append(row(M - 1, T[-1], order))
    for i in range(M - 1):
        rows.append(row(i, T[i], 0))
        for order in range(3):
            rows.append(row(i, T[i], order) - row(i + 1, 0.0, order))
    return np.array(rows)


def test_minimum_jerk_against_feasible_perturbations(rng):
    tr, q, T, p0, pf = random_traj(rng, 4)
    N = null_space(_feasibility_rows(T))
    J0 = tr.jerk_integral()
    for _ in range(20):
        delta = N @ rng.standard_normal((N.shape[1], 3)) * 0.05
        other = PolyTrajectory(tr.coeffs + delta.reshape(tr.coeffs.shape), T)
        assert np.allclose(other.eval(np.cumsum(T)[0]), q[0], atol=1e-9)
        assert other.jerk_integral() >= J0 - 1e-12


def test_jerk_integral_matches_polynomial_integration(rng):
    c = rng.standard_normal((1, 6, 3))
    tr = PolyTrajectory(c, [1.3])
    expect = 0.0
    for d in range(3):
        jerk = Polynomial(c[0, :, d]).deriv(3)
        expect += (jerk * jerk).integ()(1.3)
    assert tr.jerk_integral() == pytest.approx(expect, rel=1e-10)


def test_eval_domain_and_orders(rng):
    tr, q, T, p0, pf = random_traj(rng, 3, start_time=4.0)
    assert np.allclose(tr.eval(4.0), p0.position)
    assert np.array_equal(tr.eval(4.5, 6), np.zeros(3))
    with pytest.raises(OutOfDomain):
        tr.eval(3.9)
    with pytest.raises(OutOfDomain):
        tr.eval(tr.end_time + 0.1)
    knot = 4.0 + T[0]
    idx, tau = tr.locate(knot)
    assert idx == 1 and tau == pytest.approx(0.0)


def test_eval_clamped_holds_end_state(rng):
    tr, *_ = random_traj(rng, 2)
    assert np.allclose(tr.eval_clamped(tr.end_time + 5.0), tr.eval(tr.end_time))
    assert np.array_equal(tr.eval_clamped(tr.end_time + 5.0, 1), np.zeros(3))


def test_constraint_samples():
    tr = minco_map(np.array([[1.0, 0, 0]]), [1.0, 2.0], BoundaryState([0, 0, 0]), BoundaryState([2, 0, 0]))
    one = sample_constraint_points(tr, 1)
    assert np.allclose(one.t, [0.0, 1.0])
    four = sample_constraint_points(tr, 4)
    assert np.allclose(four.t, [0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5])
    for t, p, v, a, j in four.rows():
        assert np.allclose(p, tr.eval(t), atol=1e-12)
        assert np.allclose(j, tr.eval(t, 3), atol=1e-10)
    per_piece = sample_constraint_points(tr, [2, 3])
    assert len(per_piece) == 5
    with pytest.raises(ValueError):
        sample_constraint_points(tr, 0)


def test_serialization_round_trip(rng):
    tr, *_ = random_traj(rng, 4, start_time=1.25)
    back = PolyTrajectory.from_bytes(tr.to_bytes())
    assert np.array_equal(back.coeffs, tr.coeffs)
    assert np.array_equal(back.durations, tr.durations)
    assert back.start_time == tr.start_time
    assert back.to_bytes() == tr.to_bytes()
    with pytest.raises(ValueError):
        PolyTrajectory.from_bytes(b"XXXX" + tr.to_bytes()[4:])
    with pytest.raises(ValueError):
        PolyTrajectory.from_bytes(tr.to_bytes()[:-8])


def test_degenerate_durations_rejected():
    with pytest.raises(SingularSystem):
        minco_map(np.zeros((1, 3)), [1.0, 1e-6], BoundaryState([0, 0, 0]), BoundaryState([1, 0, 0]))


def test_stack_matches_individual(rng):
    trs = [random_traj(rng, M, start_time=rng.uniform(0, 1))[0] for M in (1, 3, 5)]
    stack = TrajectoryStack(trs)
    ts = np.linspace(-0.5, 6.0, 40)
    P = stack.eval(ts)
    V = stack.eval(ts, 1)
    for k, tr in enumerate(trs):
        assert np.allclose(P[k], tr.eval_many(ts), atol=1e-12)
        inside = (ts >= tr.start_time) & (ts <= tr.end_time)
        assert np.allclose(V[k][inside], tr.eval_many(ts[inside], 1), atol=1e-12)
        assert np.all(V[k][~inside] == 0.0)


def test_map_gradients_zero_input(rng):
    tr, *_ = random_traj(rng, 4)
    gq, gT = map_gradients(tr, np.zeros_like(tr.coeffs), np.arange(4.0))
    assert np.array_equal(gq, np.zeros((3, 3)))
    assert np.array_equal(gT, np.arange(4.0))


def test_map_gradients_stale_cache(rng):
    tr, *_ = random_traj(rng, 3)
    with pytest.raises(StaleCache):
        map_gradients(PolyTrajectory(tr.coeffs, tr.durations), np.zeros_like(tr.coeffs))


def _eval_cost(q, T, p0, pf, ts):
    tr = minco_map(q, T, p0, pf)
    P = tr.eval_many(ts)
    return float(np.sum(P * P)), tr


def _eval_cost_grads(tr, ts):
    """Coefficient gradient and the explicit duration term of sum ||p(t_k)||^2 at fixed absolute times."""
    idx, tau = tr.locate(ts)
    P = tr.eval_many(ts)
    V = tr.eval_many(ts, 1)
    gc = np.zeros_like(tr.coeffs)
    gT = np.zeros(tr.num_pieces)
    for k in range(len(ts)):
        gc[idx[k]] += np.outer(basis(tau[k], 0), 2 * P[k])
        # local time tau = t - sum of earlier durations
        gT[: idx[k]] -= 2 * P[k] @ V[k]
    return gc, gT


@pytest.mark.parametrize("seed", range(10))
def test_map_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    M = int(rng.integers(1, 6))
    _, q, T, p0, pf = random_traj(rng, M)
    ts = np.sort(rng.uniform(0.0, T.sum(), 7))
    # keep samples off the knots so the piece assignment is stable under the FD step
    knots = np.cumsum(T)
    ts = ts[np.min(np.abs(ts[:, None] - knots[None, :]), axis=1) > 1e-3]
    _, tr = _eval_cost(q, T, p0, pf, ts)
    gq, gT = map_gradients(tr, *_eval_cost_grads(tr, ts))
    if M > 1:
        fd_q = central_difference(lambda x: _eval_cost(x.reshape(q.shape), T, p0, pf, ts)[0], q.ravel())
        assert rel_err(gq.ravel(), fd_q) < 1e-5
    fd_T = central_difference(lambda x: _eval_cost(q, x, p0, pf, ts)[0], T)
    assert rel_err(gT, fd_T) < 1e-4
