"""Limited-memory BFGS with a strong-Wolfe line search."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import NonFiniteCost

FunGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class LbfgsSettings:
    memory: int = 8
    c1: float = 1e-4
    c2: float = 0.9
    grad_tol: float = 1e-5
    rel_cost_tol: float = 1e-8
    max_iterations: int = 500
    max_line_search: int = 30


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    iterations: int
    evaluations: int
    reason: str
    cost_history: list = field(default_factory=list)

    @property
    def line_search_failed(self) -> bool:
        return self.reason == "line_search_failure"


class _LineSearchFailed(Exception):
    pass


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating two points with slopes; None if ill-posed."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / denom


def strong_wolfe(fun: FunGrad, x, f0, g0, d, step0, s: LbfgsSettings):
    """Bracketing + zoom line search (Nocedal & Wright, Alg. 3.5/3.6).

    Returns ``(step, f, g, evaluations)``.
    """
    dg0 = float(g0 @ d)
    if dg0 >= 0:
        raise _LineSearchFailed("not a descent direction")
    evals = 0

    def phi(a):
        nonlocal evals
        evals += 1
        f, g = fun(x + a * d)
        return f, g, float(g @ d)

    a_prev, f_prev, dg_prev = 0.0, f0, dg0
    a = step0
    for i in range(s.max_line_search):
        fa, ga, dga = phi(a)
        if not math.isfinite(fa) or fa > f0 + s.c1 * a * dg0 or (i > 0 and fa >= f_prev):
            return _zoom(phi, f0, dg0, a_prev, f_prev, dg_prev, a, fa, dga, s, evals)
        if abs(dga) <= -s.c2 * dg0:
            return a, fa, ga, evals
        if dga >= 0:
            return _zoom(phi, f0, dg0, a, fa, dga, a_prev, f_prev, dg_prev, s, evals)
        a_prev, f_prev, dg_prev = a, fa, dga
        a = a * 2.0
    raise _LineSearchFailed("bracketing did not terminate")


def _zoom(phi, f0, dg0, lo, flo, dglo, hi, fhi, dghi, s: LbfgsSettings, evals0):
    evals = evals0
    best = None
    for _ in range(s.max_line_search):
        a = None
        if math.isfinite(fhi):
            a = _cubic_min(lo, flo, dglo, hi, fhi, dghi)
        width = abs(hi - lo)
        if a is None or not (min(lo, hi) + 0.1 * width <= a <= max(lo, hi) - 0.1 * width):
            a = 0.5 * (lo + hi)
        fa, ga, dga = phi(a)
        evals += 1
        if not math.isfinite(fa) or fa > f0 + s.c1 * a * dg0 or fa >= flo:
            hi, fhi, dghi = a, fa, dga
        else:
            if abs(dga) <= -s.c2 * dg0:
                return a, fa, ga, evals
            if best is None or fa < best[1]:
                best = (a, fa, ga)
            if dga * (hi - lo) >= 0:
                hi, fhi, dghi = lo, flo, dglo
            lo, flo, dglo = a, fa, dga
        if abs(hi - lo) < 1e-14 * max(1.0, abs(lo)):
            break
    if best is not None and best[1] < f0:
        # sufficient decrease holds; curvature could not be met within budget
        return best[0], best[1], best[2], evals
    raise _LineSearchFailed("zoom failed")


def minimize_lbfgs(fun: FunGrad, x0, settings: LbfgsSettings | None = None) -> LbfgsResult:
    """Minimize ``fun`` (returning value and gradient) from ``x0``.

    Stops on gradient 2-norm below ``grad_tol``, relative cost change below
    ``rel_cost_tol`` or ``max_iterations``. A failed line search keeps the
    best iterate and reports ``reason='line_search_failure'``.
    """
    s = settings or LbfgsSettings()
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    evaluations = 1
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteCost("cost or gradient is not finite at the initial guess")
    history = [f]
    mem: deque = deque(maxlen=s.memory)
    reason = "max_iterations"
    it = 0
    while it < s.max_iterations:
        if np.linalg.norm(g) < s.grad_tol:
            reason = "gradient"
            break
        d = -_two_loop(g, mem)
        if float(g @ d) >= 0:
            mem.clear()
            d = -g
        step0 = 1.0 if mem else min(1.0, 1.0 / max(np.linalg.norm(g), 1e-12))
        try:
            a, f_new, g_new, ne = strong_wolfe(fun, x, f, g, d, step0, s)
        except _LineSearchFailed:
            if mem:
                mem.clear()
                continue
            reason = "line_search_failure"
            break
        evaluations += ne
        it += 1
        x_new = x + a * d
        sk = x_new - x
        yk = g_new - g
        sy = float(sk @ yk)
        if sy > 1e-12 * float(np.linalg.norm(sk) * np.linalg.norm(yk)):
            mem.append((sk, yk, 1.0 / sy))
        change = abs(f - f_new)
        x, f_old, f, g = x_new, f, f_new, g_new
        history.append(f)
        if change <= s.rel_cost_tol * max(abs(f_old), abs(f), 1.0):
            reason = "cost_change"
            break
    return LbfgsResult(x, f, g, it, evaluations, reason, history)


def _two_loop(g: np.ndarray, mem) -> np.ndarray:
    q = g.copy()
    alphas = []
    for sk, yk, rho in reversed(mem):
        a = rho * float(sk @ q)
        alphas.append(a)
        q -= a * yk
    if mem:
        sk, yk, _ = mem[-1]
        q *= float(sk @ yk) / float(yk @ yk)
    for (sk, yk, rho), a in zip(mem, reversed(alphas)):
        b = rho * float(yk @ q)
        q += (a - b) * sk
    return q
