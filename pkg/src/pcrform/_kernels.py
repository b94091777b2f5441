"""Compiled inner loops for the hot paths.

These mirror the reference numpy implementations in ``geometry``,
``formation`` and ``optimizer.costs`` and are checked against them in the test
suite. Nothing here validates inputs; callers do.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

COLLINEAR_RATIO = 1e-9
MIN_SCALE = 1e-9
SINGULAR_PIVOT = 1e-14

# falling factorials k!/(k-r)! for r = 0..6, k = 0..5
_FALL = np.zeros((7, 6))
for _r in range(7):
    for _k in range(_r, 6):
        _v = 1.0
        for _j in range(_k - _r + 1, _k + 1):
            _v *= _j
        _FALL[_r, _k] = _v


# --- Sim(3) -------------------------------------------------------------------


@njit(cache=True)
def umeyama(src, dst, w):
    """Weighted closed-form Sim(3); ``w`` must sum to one.

    Returns ``(R, t, s, status)`` with status 0 ok, 1 degenerate source,
    2 non-positive scale.
    """
    n = src.shape[0]
    mu_s = np.zeros(3)
    mu_d = np.zeros(3)
    for i in range(n):
        for d in range(3):
            mu_s[d] += w[i] * src[i, d]
            mu_d[d] += w[i] * dst[i, d]
    cov = np.zeros((3, 3))
    css = np.zeros((3, 3))
    var_s = 0.0
    for i in range(n):
        for a in range(3):
            xa = src[i, a] - mu_s[a]
            var_s += w[i] * xa * xa
            for b in range(3):
                xb = src[i, b] - mu_s[b]
                css[a, b] += w[i] * xa * xb
                cov[a, b] += w[i] * (dst[i, a] - mu_d[a]) * xb
    R = np.eye(3)
    t = np.zeros(3)
    ev = np.linalg.eigvalsh(css)
    # singular values of the weighted centered cloud are sqrt of these
    l0 = math.sqrt(max(ev[2], 0.0))
    l1 = math.sqrt(max(ev[1], 0.0))
    if l0 <= 0.0 or l1 < COLLINEAR_RATIO * l0:
        return R, t, 0.0, 1
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0.0:
        S[2] = -1.0
    for a in range(3):
        for b in range(3):
            acc = 0.0
            for k in range(3):
                acc += U[a, k] * S[k] * Vt[k, b]
            R[a, b] = acc
    s = (D[0] * S[0] + D[1] * S[1] + D[2] * S[2]) / var_s
    if not s > MIN_SCALE:
        return R, t, s, 2
    for a in range(3):
        acc = 0.0
        for b in range(3):
            acc += R[a, b] * mu_s[b]
        t[a] = mu_d[a] - s * acc
    return R, t, s, 0


@njit(cache=True)
def residual_norms(src, dst, R, t, s):
    n = src.shape[0]
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for a in range(3):
            v = s * (R[a, 0] * src[i, 0] + R[a, 1] * src[i, 1] + R[a, 2] * src[i, 2]) + t[a]
            e = dst[i, a] - v
            acc += e * e
        out[i] = math.sqrt(acc)
    return out


@njit(cache=True)
def _required_iterations(confidence, ratio, m):
    good = ratio**m
    if good >= 1.0:
        return 1
    denom = math.log1p(-good)
    if denom == 0.0:
        return 2147483647
    k = math.ceil(math.log1p(-confidence) / denom)
    return max(1, int(k))


@njit(cache=True)
def ransac_loop(src, dst, tau, confidence, max_iterations, m, seed, max_draws):
    """Hypothesize-and-score loop; returns best mask, count, rms, iterations, history."""
    np.random.seed(seed)
    n = src.shape[0]
    perm = np.arange(n)
    w = np.full(m, 1.0 / m)
    ss = np.empty((m, 3))
    dd = np.empty((m, 3))
    best_mask = np.zeros(n, dtype=np.bool_)
    best_count = -1
    best_rms = np.inf
    history = np.empty(max_iterations, dtype=np.int64)
    iterations = 0
    draws = 0
    budget = max_iterations
    any_fit = False
    while iterations < budget and draws < max_draws:
        draws += 1
        for k in range(m):
            j = k + np.random.randint(0, n - k)
            tmp = perm[k]
            perm[k] = perm[j]
            perm[j] = tmp
            for a in range(3):
                ss[k, a] = src[perm[k], a]
                dd[k, a] = dst[perm[k], a]
        R, t, s, status = umeyama(ss, dd, w)
        if status != 0:
            continue
        any_fit = True
        res = residual_norms(src, dst, R, t, s)
        count = 0
        sq = 0.0
        for i in range(n):
            if res[i] <= tau:
                count += 1
                sq += res[i] * res[i]
        rms = math.sqrt(sq / count) if count > 0 else np.inf
        if count > best_count or (count == best_count and rms < best_rms):
            best_count = count
            best_rms = rms
            for i in range(n):
                best_mask[i] = res[i] <= tau
            if count >= m:
                adaptive = _required_iterations(confidence, count / n, m)
                budget = min(max_iterations, adaptive)
        history[iterations] = best_count
        iterations += 1
    return best_mask, best_count, best_rms, iterations, history[:iterations], any_fit


# --- unsquared alignment --------------------------------------------------------


@njit(cache=True)
def _sum_norms(src, dst, R, t, s):
    return residual_norms(src, dst, R, t, s).sum()


@njit(cache=True)
def _axis_angle(wx, wy, wz):
    th = math.sqrt(wx * wx + wy * wy + wz * wz)
    K = np.zeros((3, 3))
    if th < 1e-12:
        K[0, 1] = -wz
        K[0, 2] = wy
        K[1, 0] = wz
        K[1, 2] = -wx
        K[2, 0] = -wy
        K[2, 1] = wx
        return np.eye(3) + K
    ax, ay, az = wx / th, wy / th, wz / th
    K[0, 1] = -az
    K[0, 2] = ay
    K[1, 0] = az
    K[1, 2] = -ax
    K[2, 0] = -ay
    K[2, 1] = ax
    return np.eye(3) + math.sin(th) * K + (1.0 - math.cos(th)) * (K @ K)


@njit(cache=True)
def unsquared_align(src, dst, R, t, s, irls_iters, step_start, step_stop):
    """Reweighted closed-form fits then a coordinate pattern search on sum of norms."""
    n = src.shape[0]
    cost = _sum_norms(src, dst, R, t, s)
    w = np.empty(n)
    for _ in range(irls_iters):
        res = residual_norms(src, dst, R, t, s)
        tot = 0.0
        for i in range(n):
            w[i] = 1.0 / max(res[i], 1e-9)
            tot += w[i]
        for i in range(n):
            w[i] /= tot
        R2, t2, s2, status = umeyama(src, dst, w)
        if status != 0:
            break
        c2 = _sum_norms(src, dst, R2, t2, s2)
        if c2 >= cost - 1e-15 * max(cost, 1.0):
            if c2 < cost:
                R, t, s, cost = R2, t2, s2, c2
            break
        R, t, s, cost = R2, t2, s2, c2

    pivot = np.zeros(3)
    for i in range(n):
        for a in range(3):
            pivot[a] += dst[i, a] / n
    step = step_start
    x = np.zeros(7)
    for _ in range(2000):
        improved = False
        for k in range(7):
            for sgn in (1.0, -1.0):
                for j in range(7):
                    x[j] = 0.0
                x[k] = sgn * step
                Rd = _axis_angle(x[0], x[1], x[2])
                es = math.exp(x[6])
                R2 = Rd @ R
                s2 = s * es
                t2 = es * (Rd @ (t - pivot)) + pivot
                t2[0] += x[3]
                t2[1] += x[4]
                t2[2] += x[5]
                c2 = _sum_norms(src, dst, R2, t2, s2)
                if c2 < cost:
                    R, t, s, cost = R2, t2, s2, c2
                    improved = True
                    break
        if not improved:
            step *= 0.5
            if step < step_stop:
                break
    return R, t, s, cost


# --- trajectory objective ---------------------------------------------------


@njit(cache=True)
def _basis_row(tau, r, out):
    for k in range(6):
        if k < r:
            out[k] = 0.0
        else:
            out[k] = _FALL[r, k] * tau ** (k - r)


@njit(cache=True)
def _eval(C, piece, tau, r, out):
    b = np.empty(6)
    _basis_row(tau, r, b)
    for d in range(3):
        acc = 0.0
        for k in range(6):
            acc += b[k] * C[piece, k, d]
        out[d] = acc


@njit(cache=True)
def system_matrix(T):
    M = T.shape[0]
    n = 6 * M
    A = np.zeros((n, n))
    b = np.empty(6)
    for r in range(3):
        _basis_row(0.0, r, b)
        for k in range(6):
            A[r, k] = b[k]
    for i in range(M - 1):
        row = 3 + 6 * i
        ci = 6 * i
        _basis_row(T[i], 0, b)
        for k in range(6):
            A[row, ci + k] = b[k]
        for r in range(5):
            _basis_row(T[i], r, b)
            for k in range(6):
                A[row + 1 + r, ci + k] = b[k]
            _basis_row(0.0, r, b)
            for k in range(6):
                A[row + 1 + r, ci + 6 + k] = -b[k]
    last = 6 * (M - 1)
    for r in range(3):
        _basis_row(T[M - 1], r, b)
        for k in range(6):
            A[n - 3 + r, last + k] = b[k]
    return A


@njit(cache=True)
def lu_factor(A):
    """Dense LU with partial pivoting: ``A[perm] = L U`` (unit lower L)."""
    n = A.shape[0]
    LU = A.copy()
    perm = np.arange(n)
    for k in range(n):
        p = k
        big = abs(LU[k, k])
        for i in range(k + 1, n):
            if abs(LU[i, k]) > big:
                big = abs(LU[i, k])
                p = i
        if big == 0.0:
            return LU, perm, False
        if p != k:
            for j in range(n):
                tmp = LU[k, j]
                LU[k, j] = LU[p, j]
                LU[p, j] = tmp
            tp = perm[k]
            perm[k] = perm[p]
            perm[p] = tp
        piv = LU[k, k]
        for i in range(k + 1, n):
            f = LU[i, k] / piv
            LU[i, k] = f
            if f != 0.0:
                for j in range(k + 1, n):
                    LU[i, j] -= f * LU[k, j]
    # same singularity test as the reference factorization
    dmin = np.inf
    dmax = 0.0
    for k in range(n):
        d = abs(LU[k, k])
        if not np.isfinite(d):
            return LU, perm, False
        dmin = min(dmin, d)
        dmax = max(dmax, d)
    return LU, perm, dmin > SINGULAR_PIVOT * max(dmax, 1.0)


@njit(cache=True)
def lu_solve(LU, perm, b):
    n = LU.shape[0]
    m = b.shape[1]
    x = np.empty((n, m))
    for i in range(n):
        for c in range(m):
            x[i, c] = b[perm[i], c]
    for i in range(n):
        for j in range(i):
            f = LU[i, j]
            if f != 0.0:
                for c in range(m):
                    x[i, c] -= f * x[j, c]
    for i in range(n - 1, -1, -1):
        for j in range(i + 1, n):
            f = LU[i, j]
            if f != 0.0:
                for c in range(m):
                    x[i, c] -= f * x[j, c]
        for c in range(m):
            x[i, c] /= LU[i, i]
    return x


@njit(cache=True)
def lu_solve_transposed(LU, perm, g):
    """Solve ``A^T x = g`` given ``A[perm] = L U``."""
    n = LU.shape[0]
    m = g.shape[1]
    z = g.copy()
    for i in range(n):
        for j in range(i):
            f = LU[j, i]
            if f != 0.0:
                for c in range(m):
                    z[i, c] -= f * z[j, c]
        for c in range(m):
            z[i, c] /= LU[i, i]
    for i in range(n - 1, -1, -1):
        for j in range(i + 1, n):
            f = LU[j, i]
            if f != 0.0:
                for c in range(m):
                    z[i, c] -= f * z[j, c]
    x = np.empty((n, m))
    for i in range(n):
        for c in range(m):
            x[perm[i], c] = z[i, c]
    return x


@njit(cache=True)
def _sdf(p, sph_c, sph_r, box_lo, box_hi, grad):
    best = np.inf
    g = np.zeros(3)
    for k in range(sph_c.shape[0]):
        dx = p[0] - sph_c[k, 0]
        dy = p[1] - sph_c[k, 1]
        dz = p[2] - sph_c[k, 2]
        nrm = math.sqrt(dx * dx + dy * dy + dz * dz)
        d = nrm - sph_r[k]
        if d < best:
            best = d
            if nrm > 0.0:
                g[0] = dx / nrm
                g[1] = dy / nrm
                g[2] = dz / nrm
            else:
                g[0] = 1.0
                g[1] = 0.0
                g[2] = 0.0
    q = np.empty(3)
    rel = np.empty(3)
    for k in range(box_lo.shape[0]):
        outside = 0.0
        qmax = -np.inf
        amax = 0
        for a in range(3):
            c = 0.5 * (box_lo[k, a] + box_hi[k, a])
            h = 0.5 * (box_hi[k, a] - box_lo[k, a])
            rel[a] = p[a] - c
            q[a] = abs(rel[a]) - h
            if q[a] > 0.0:
                outside += q[a] * q[a]
            if q[a] > qmax:
                qmax = q[a]
                amax = a
        outside = math.sqrt(outside)
        d = outside + min(qmax, 0.0)
        if d < best:
            best = d
            if outside > 0.0:
                for a in range(3):
                    sgn = 1.0 if rel[a] >= 0.0 else -1.0
                    g[a] = sgn * max(q[a], 0.0) / outside
            else:
                for a in range(3):
                    g[a] = 0.0
                g[amax] = 1.0 if rel[amax] >= 0.0 else -1.0
    for a in range(3):
        grad[a] = g[a]
    return best


@njit(cache=True)
def _peer_state(pc, pk, pstart, pend, pn, p, t, pos, vel):
    rel = t - pstart[p]
    dur = pend[p] - pstart[p]
    outside = rel < 0.0 or rel > dur
    if rel < 0.0:
        rel = 0.0
    if rel > dur:
        rel = dur
    idx = 0
    for k in range(1, pn[p]):
        if rel >= pk[p, k]:
            idx = k
    tau = rel - pk[p, idx]
    b = np.empty(6)
    _basis_row(tau, 0, b)
    for d in range(3):
        acc = 0.0
        for k in range(6):
            acc += b[k] * pc[p, idx, k, d]
        pos[d] = acc
    if outside:
        vel[0] = 0.0
        vel[1] = 0.0
        vel[2] = 0.0
    else:
        _basis_row(tau, 1, b)
        for d in range(3):
            acc = 0.0
            for k in range(6):
                acc += b[k] * pc[p, idx, k, d]
            vel[d] = acc


@njit(cache=True)
def trajectory_objective(
    q, T, p0, pf, t0, kappa,
    ofps_pts, ofps_t,
    weights, limits, clear,
    sph_c, sph_r, box_lo, box_hi,
    pc, pk, pstart, pend, pn,
):
    """Total penalized cost with gradients on waypoints and durations.

    ``weights`` = (formation, effort, rho, collision, swarm, dynamics);
    ``limits`` = (v_max, a_max); ``clear`` = (obstacle, swarm) clearances.
    Returns ``(value, grad_q, grad_T, terms, coeffs, ok)`` where ``terms``
    follows the order effort, time, obstacle, swarm, dynamics, formation.
    """
    M = T.shape[0]
    n = 6 * M
    terms = np.zeros(6)
    A = system_matrix(T)
    LU, perm, ok = lu_factor(A)
    grad_q = np.zeros((max(M - 1, 0), 3))
    grad_T = np.zeros(M)
    Cflat = np.zeros((n, 3))
    if not ok:
        return np.inf, grad_q, grad_T, terms, Cflat.reshape(M, 6, 3), False
    rhs = np.zeros((n, 3))
    for r in range(3):
        for d in range(3):
            rhs[r, d] = p0[r, d]
            rhs[n - 3 + r, d] = pf[r, d]
    for i in range(M - 1):
        for d in range(3):
            rhs[3 + 6 * i, d] = q[i, d]
    Cflat = lu_solve(LU, perm, rhs)
    C = Cflat.reshape(M, 6, 3)
    gC = np.zeros((M, 6, 3))
    knots = np.zeros(M + 1)
    for i in range(M):
        knots[i + 1] = knots[i] + T[i]
    total = knots[M]

    w_f, w_e, rho, w_c, w_s, w_d = weights[0], weights[1], weights[2], weights[3], weights[4], weights[5]
    vmax2 = limits[0] * limits[0]
    amax2 = limits[1] * limits[1]
    d_obs = clear[0]
    d_sw = clear[1]

    # control effort and time
    for i in range(M):
        Ti = T[i]
        G = np.empty((3, 3))
        G[0, 0] = 36 * Ti
        G[0, 1] = 72 * Ti**2
        G[0, 2] = 120 * Ti**3
        G[1, 1] = 192 * Ti**3
        G[1, 2] = 360 * Ti**4
        G[2, 2] = 720 * Ti**5
        G[1, 0] = G[0, 1]
        G[2, 0] = G[0, 2]
        G[2, 1] = G[1, 2]
        for d in range(3):
            for a in range(3):
                acc = 0.0
                for b in range(3):
                    acc += G[a, b] * C[i, 3 + b, d]
                terms[0] += w_e * C[i, 3 + a, d] * acc
                gC[i, 3 + a, d] += 2.0 * w_e * acc
        jerk = np.empty(3)
        _eval(C, i, Ti, 3, jerk)
        grad_T[i] += w_e * (jerk[0] ** 2 + jerk[1] ** 2 + jerk[2] ** 2) + rho
    terms[1] = rho * total

    # constraint samples
    pos = np.empty(3)
    vel = np.empty(3)
    acc3 = np.empty(3)
    jrk = np.empty(3)
    gpos = np.empty(3)
    gvel = np.empty(3)
    gacc = np.empty(3)
    sgrad = np.empty(3)
    ppos = np.empty(3)
    pvel = np.empty(3)
    b = np.empty(6)
    n_peers = pc.shape[0]
    has_obs = sph_c.shape[0] + box_lo.shape[0] > 0
    for i in range(M):
        for j in range(kappa):
            frac = j / kappa
            tau = frac * T[i]
            tabs = t0 + knots[i] + tau
            _eval(C, i, tau, 0, pos)
            _eval(C, i, tau, 1, vel)
            _eval(C, i, tau, 2, acc3)
            _eval(C, i, tau, 3, jrk)
            for d in range(3):
                gpos[d] = 0.0
                gvel[d] = 0.0
                gacc[d] = 0.0
            gtime = 0.0
            if has_obs:
                dist = _sdf(pos, sph_c, sph_r, box_lo, box_hi, sgrad)
                viol = d_obs - dist
                if viol > 0.0:
                    terms[2] += w_c * viol**3
                    for d in range(3):
                        gpos[d] -= 3.0 * w_c * viol * viol * sgrad[d]
            for p in range(n_peers):
                _peer_state(pc, pk, pstart, pend, pn, p, tabs, ppos, pvel)
                dx = pos[0] - ppos[0]
                dy = pos[1] - ppos[1]
                dz = pos[2] - ppos[2]
                dist = math.sqrt(dx * dx + dy * dy + dz * dz)
                viol = d_sw - dist
                if viol > 0.0:
                    terms[3] += w_s * viol**3
                    inv = 1.0 / max(dist, 1e-12)
                    cf = 3.0 * w_s * viol * viol * inv
                    gpos[0] -= cf * dx
                    gpos[1] -= cf * dy
                    gpos[2] -= cf * dz
                    gtime += cf * (dx * pvel[0] + dy * pvel[1] + dz * pvel[2])
            vv = vel[0] ** 2 + vel[1] ** 2 + vel[2] ** 2 - vmax2
            if vv > 0.0:
                terms[4] += w_d * vv**3
                for d in range(3):
                    gvel[d] += 6.0 * w_d * vv * vv * vel[d]
            aa = acc3[0] ** 2 + acc3[1] ** 2 + acc3[2] ** 2 - amax2
            if aa > 0.0:
                terms[4] += w_d * aa**3
                for d in range(3):
                    gacc[d] += 6.0 * w_d * aa * aa * acc3[d]
            dT = 0.0
            for d in range(3):
                dT += gpos[d] * vel[d] + gvel[d] * acc3[d] + gacc[d] * jrk[d]
            grad_T[i] += frac * (dT + gtime)
            for l in range(i):
                grad_T[l] += gtime
            for r in range(3):
                gr = gpos if r == 0 else (gvel if r == 1 else gacc)
                if gr[0] == 0.0 and gr[1] == 0.0 and gr[2] == 0.0:
                    continue
                _basis_row(tau, r, b)
                for k in range(r, 6):
                    for d in range(3):
                        gC[i, k, d] += b[k] * gr[d]

    # formation tracking
    for s_ in range(ofps_pts.shape[0]):
        rel = ofps_t[s_] - t0
        if rel < 0.0:
            rel = 0.0
        beyond = rel >= total
        if beyond:
            piece = M - 1
            tau = T[M - 1]
        else:
            piece = 0
            for k in range(1, M):
                if rel >= knots[k]:
                    piece = k
            tau = rel - knots[piece]
        _eval(C, piece, tau, 0, pos)
        _eval(C, piece, tau, 1, vel)
        _basis_row(tau, 0, b)
        gv = 0.0
        for d in range(3):
            diff = pos[d] - ofps_pts[s_, d]
            terms[5] += w_f * diff * diff
            g = 2.0 * w_f * diff
            gv += g * vel[d]
            for k in range(6):
                gC[piece, k, d] += b[k] * g
        if beyond:
            grad_T[M - 1] += gv
        else:
            for l in range(piece):
                grad_T[l] -= gv

    value = 0.0
    for k in range(6):
        value += terms[k]

    # adjoint pull-back onto waypoints and durations
    Gadj = lu_solve_transposed(LU, perm, gC.reshape(n, 3))
    for i in range(M - 1):
        for d in range(3):
            grad_q[i, d] = Gadj[3 + 6 * i, d]
    end = np.empty(3)
    for i in range(M - 1):
        row = 3 + 6 * i
        _eval(C, i, T[i], 1, end)
        for d in range(3):
            grad_T[i] -= Gadj[row, d] * end[d]
        for k in range(5):
            _eval(C, i, T[i], k + 1, end)
            for d in range(3):
                grad_T[i] -= Gadj[row + 1 + k, d] * end[d]
    for r in range(3):
        _eval(C, M - 1, T[M - 1], r + 1, end)
        for d in range(3):
            grad_T[M - 1] -= Gadj[n - 3 + r, d] * end[d]
    return value, grad_q, grad_T, terms, C, True


def warmup() -> None:
    """Load or compile every kernel so later calls carry no dispatch cost."""
    rng = np.random.default_rng(0)
    src = rng.normal(size=(6, 3))
    dst = src + 0.01 * rng.normal(size=(6, 3))
    R, t, s, _ = umeyama(src, dst, np.full(6, 1.0 / 6))
    unsquared_align(src, dst, R, t, s, 1, 1e-3, 5e-4)
    ransac_loop(src, dst, 0.15, 0.99, 5, 3, 0, 50)
    T = np.ones(2)
    z3 = np.zeros((3, 3))
    trajectory_objective(
        np.zeros((1, 3)), T, z3, z3, 0.0, 2,
        np.zeros((1, 3)), np.zeros(1),
        np.ones(6), np.ones(2), np.ones(2),
        np.zeros((1, 3)), np.ones(1), np.zeros((1, 3)), np.ones((1, 3)),
        np.zeros((1, 1, 6, 3)), np.zeros((1, 2)), np.zeros(1), np.ones(1), np.ones(1, dtype=np.int64),
    )
