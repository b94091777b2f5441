import numpy as np
import pytest

from pcrform.formation import FormationSpec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_cloud(rng, n, spread=5.0):
    return rng.uniform(-spread, spread, size=(n, 3))


def random_spec(rng, n, spread=None):
    spread = spread if spread is not None else 1.5 * n ** (1.0 / 3.0)
    return FormationSpec.from_array(random_cloud(rng, n, spread))


def central_difference(fun, x, h=1e-6):
    """Central finite-difference gradient of a scalar function of a flat array."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        g.flat[k] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


# --- random optimizer instances (shared with the acceptance suite) ---------------


def random_planning_instance(rng, active=True):
    """A trajectory, its (q, T, boundaries) and an environment with live penalties.

    With ``active`` the obstacles, peers and dynamic limits are placed so that
    every hinge term has samples past its threshold.
    """
    from pcrform.sim import ObstacleField, Sphere, Box
    from pcrform.trajectory import BoundaryState, TrajectoryStack, minco_map

    M = int(rng.integers(2, 6))
    start = rng.uniform(-1, 1, 3)
    goal = start + np.array([4.0, 0.0, 0.0]) + rng.uniform(-1, 1, 3)
    fr = np.arange(1, M) / M
    q = start + fr[:, None] * (goal - start) + 0.3 * rng.standard_normal((M - 1, 3))
    T = rng.uniform(0.4, 1.0, M)
    p0 = BoundaryState(start, rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3))
    pf = BoundaryState(goal, rng.uniform(-1, 1, 3), np.zeros(3))
    traj = minco_map(q, T, p0, pf, start_time=float(rng.uniform(0, 2)))
    mid = traj.eval(traj.start_time + 0.5 * traj.total_duration)
    if active:
        field = ObstacleField(
            spheres=(Sphere(tuple(mid + rng.uniform(-0.3, 0.3, 3)), 0.4),),
            boxes=(Box(tuple(goal + [-0.9, 0.2, -0.3]), tuple(goal + [-0.3, 0.8, 0.3])),),
        )
        peers = []
        for _ in range(2):
            t_pk = traj.start_time + rng.uniform(0.2, 0.8) * traj.total_duration
            pk = traj.eval(t_pk) + rng.uniform(-0.3, 0.3, 3)
            peer_q = np.array([pk + rng.uniform(-0.2, 0.2, 3)])
            peers.append(minco_map(peer_q, [t_pk - traj.start_time, 2.0], BoundaryState(pk + [0, 1.5, 0]),
                                   BoundaryState(pk - [0, 1.5, 0]), start_time=traj.start_time))
        stack = TrajectoryStack(peers)
        limits = (0.6, 1.0)
    else:
        field, stack, limits = None, None, (50.0, 100.0)
    n_f = 6
    times = traj.start_time + np.linspace(0.0, 1.2 * traj.total_duration, n_f)
    pts = np.array([traj.eval_clamped(t) for t in times]) + 0.4 * rng.standard_normal((n_f, 3))
    return dict(traj=traj, q=q, T=T, p0=p0, pf=pf, field=field, peers=stack, limits=limits,
                ofps_points=pts, ofps_times=times)


def term_gradient_check(inst, term, h=1e-6):
    """Relative errors of the mapped (q, T) gradient of one cost term against central differences."""
    from pcrform.trajectory import map_gradients, minco_map

    q, T, p0, pf, t0 = inst["q"], inst["T"], inst["p0"], inst["pf"], inst["traj"].start_time

    def value(qq, TT):
        return term(minco_map(qq, TT, p0, pf, start_time=t0)).value

    cg = term(inst["traj"])
    gq, gT = map_gradients(inst["traj"], cg.grad_coeffs, cg.grad_T)
    fd_q = central_difference(lambda x: value(x.reshape(q.shape), T), q.ravel(), h)
    fd_T = central_difference(lambda x: value(q, x), T, h)
    scale = max(np.linalg.norm(fd_q), np.linalg.norm(fd_T), 1e-6)
    err_q = float(np.linalg.norm(gq.ravel() - fd_q) / scale)
    err_T = float(np.linalg.norm(gT - fd_T) / scale)
    return cg.value, err_q, err_T


def cost_terms(inst, kappa=8):
    """The five optimizer penalty/cost terms as functions of a trajectory."""
    from pcrform.optimizer import cost_control_effort, cost_dynamics, cost_formation, cost_obstacle, cost_swarm
    from pcrform.trajectory import sample_constraint_points

    v_max, a_max = inst["limits"]
    return {
        "effort": lambda tr: cost_control_effort(tr, weight=1.0, rho=0.7),
        "formation": lambda tr: cost_formation(tr, inst["ofps_points"], inst["ofps_times"], clamp=True),
        "obstacle": lambda tr: cost_obstacle(tr, sample_constraint_points(tr, kappa), inst["field"], 0.5),
        "swarm": lambda tr: cost_swarm(tr, sample_constraint_points(tr, kappa), inst["peers"], 0.6),
        "dynamics": lambda tr: cost_dynamics(tr, sample_constraint_points(tr, kappa), v_max, a_max),
    }


# --- acceptance report ------------------------------------------------------------

ACCEPTANCE_LINES: dict = {}


def report_criterion(number: int, ok: bool, detail: str) -> str:
    """Record and print the one-line verdict of an acceptance criterion."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
