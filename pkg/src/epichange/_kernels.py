"""Compiled inner loops: truncated moment recursions, segment objective,
constrained Newton fits and the pairwise scan.

Indexing follows the series convention used throughout the package: time
``t`` is 1-based and ``X_t`` lives at ``x[t - 1]``.  Everything before
``X_1`` is treated as zero.

Family codes
------------
0  AR(1) with intercept,        theta = (a0, a1)
1  ARMA(1,1) with intercept,    theta = (a0, a1, b1)
2  ARMA(1,1) zero mean,         theta = (a1, b1)
3  ARCH(1),                     theta = (a0, a1)
4  GARCH(1,1),                  theta = (a0, a1, b1)
"""

from __future__ import annotations

import math

import numba
import numpy as np
from numba import njit, prange

# the bundled TBB is often too old; prefer layers that need no version check
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

AR1 = 0
ARMA11 = 1
ARMA11_ZERO = 2
ARCH1 = 3
GARCH11 = 4

H_FLOOR = 1e-12
# past beyond |b1|**k < exp(-MEMORY_EXPONENT) is below double rounding, even
# after the k**2 growth of the second-derivative recursions
MEMORY_EXPONENT = 55.0

# X_1 has no observed past and only seeds the recursions; the estimation
# objective starts at t = 2
FIRST_TERM = 2

MODE_MOMENTS = 0
MODE_HESS = 1
MODE_GF = 2
MODE_VALUE = 3
MODE_TERMS = 4

STATUS_OK = 0
STATUS_MAXITER = 1
STATUS_LINESEARCH = 2
STATUS_NONFINITE = 3


@njit(cache=True)
def memory_start(code, theta, lo, exact):
    """First time index whose recursion state is needed to evaluate ``lo``."""
    if exact or lo <= 1:
        return 1
    if code == AR1 or code == ARCH1:
        return lo
    b = abs(theta[theta.size - 1])
    if b < 1e-300:
        return max(1, lo - 1)
    if b >= 1.0:
        return 1
    k = math.ceil(MEMORY_EXPONENT / -math.log(b)) + 1
    if k >= lo:
        return 1
    return lo - k


@njit(inline="always")
def _accumulate(xt, f, h, df, dh, d2f, d2h, d, has_mean, has_var, mode,
                gt, g, hs, gs):
    hc = h if h > H_FLOOR else H_FLOOR
    e = xt - f
    e2h = e * e / hc
    q = e2h + math.log(hc)
    if mode == MODE_VALUE or mode == MODE_TERMS:
        return q
    a = (1.0 - e2h) / hc
    c2 = 2.0 / hc
    ce = 2.0 * e / hc
    for i in range(d):
        gi = 0.0
        if has_mean:
            gi -= ce * df[i]
        if has_var:
            gi += a * dh[i]
        gt[i] = gi
        g[i] += gi
    bb = (2.0 * e2h - 1.0) / (hc * hc)
    cx = ce / hc
    for i in range(d):
        for j in range(i, d):
            v = 0.0
            if has_mean:
                v += c2 * df[i] * df[j] - ce * d2f[i, j]
            if has_var:
                v += a * d2h[i, j] + bb * dh[i] * dh[j]
            if has_mean and has_var:
                v += cx * (df[i] * dh[j] + dh[i] * df[j])
            hs[i, j] += v
            if mode == MODE_GF:
                gs[i, j] += gt[i] * gt[j]
    return q


@njit(cache=True)
def _sweep(code, theta, x, t0, lo, hi, mode, g, hs, gs, mf, mh, mdf, mdh,
           md2f, md2h):
    """Run the family recursion from ``t0`` and accumulate over ``[lo, hi]``.

    ``mode`` selects what is collected: per-time moments (0), objective
    with score and Hessian (1), the same plus summed score outer products
    (2), objective only (3) or the individual terms into ``mf`` (4).
    Returns the summed objective.
    """
    d = theta.size
    df = np.zeros(d)
    dh = np.zeros(d)
    d2f = np.zeros((d, d))
    d2h = np.zeros((d, d))
    gt = np.zeros(d)
    total = 0.0
    has_mean = code <= ARMA11_ZERO
    has_var = code >= ARCH1
    f = 0.0
    h = 1.0

    if code == AR1 or code == ARCH1:
        a0 = theta[0]
        a1 = theta[1]
        if code == AR1:
            df[0] = 1.0
        else:
            dh[0] = 1.0
        for t in range(lo, hi + 1):
            xp = x[t - 2] if t >= 2 else 0.0
            if code == AR1:
                f = a0 + a1 * xp
                df[1] = xp
            else:
                h = a0 + a1 * xp * xp
                dh[1] = xp * xp
            k = t - lo
            if mode == MODE_MOMENTS:
                mf[k] = f
                mh[k] = h
                for i in range(d):
                    mdf[k, i] = df[i]
                    mdh[k, i] = dh[i]
                continue
            q = _accumulate(x[t - 1], f, h, df, dh, d2f, d2h, d, has_mean,
                            has_var, mode, gt, g, hs, gs)
            if mode == MODE_TERMS:
                mf[k] = q
            total += q
        return total

    if code == ARMA11 or code == ARMA11_ZERO:
        if code == ARMA11:
            a0 = theta[0]
            a1 = theta[1]
            b1 = theta[2]
        else:
            a0 = 0.0
            a1 = theta[0]
            b1 = theta[1]
        s = a1 + b1
        opb = 1.0 + b1
        c = a0 / opb
        # S_t = sum_{k=1}^{t-1} (-b1)^{k-1} X_{t-k} and its b1-derivatives
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        for t in range(t0, hi + 1):
            if t >= lo:
                f = c + s * s0
                if code == ARMA11:
                    df[0] = 1.0 / opb
                    df[1] = s0
                    df[2] = -a0 / (opb * opb) + s0 + s * s1
                    d2f[0, 2] = -1.0 / (opb * opb)
                    d2f[2, 0] = d2f[0, 2]
                    d2f[1, 2] = s1
                    d2f[2, 1] = s1
                    d2f[2, 2] = 2.0 * a0 / (opb * opb * opb) + 2.0 * s1 + s * s2
                else:
                    df[0] = s0
                    df[1] = s0 + s * s1
                    d2f[0, 1] = s1
                    d2f[1, 0] = s1
                    d2f[1, 1] = 2.0 * s1 + s * s2
                k = t - lo
                if mode == MODE_MOMENTS:
                    mf[k] = f
                    mh[k] = 1.0
                    for i in range(d):
                        mdf[k, i] = df[i]
                        for j in range(d):
                            md2f[k, i, j] = d2f[i, j]
                else:
                    q = _accumulate(x[t - 1], f, 1.0, df, dh, d2f, d2h, d,
                                    True, False, mode, gt, g, hs, gs)
                    if mode == MODE_TERMS:
                        mf[k] = q
                    total += q
            xt = x[t - 1]
            n2 = -2.0 * s1 - b1 * s2
            n1 = -s0 - b1 * s1
            s0 = xt - b1 * s0
            s1 = n1
            s2 = n2
        return total

    # GARCH(1,1): h_t = a0/(1-b1) + a1 * R_t, R_t = sum_{k>=1} b1^{k-1} X_{t-k}^2
    a0 = theta[0]
    a1 = theta[1]
    b1 = theta[2]
    omb = 1.0 - b1
    base = a0 / omb
    r0 = 0.0
    r1 = 0.0
    r2 = 0.0
    for t in range(t0, hi + 1):
        if t >= lo:
            h = base + a1 * r0
            dh[0] = 1.0 / omb
            dh[1] = r0
            dh[2] = a0 / (omb * omb) + a1 * r1
            d2h[0, 2] = 1.0 / (omb * omb)
            d2h[2, 0] = d2h[0, 2]
            d2h[1, 2] = r1
            d2h[2, 1] = r1
            d2h[2, 2] = 2.0 * a0 / (omb * omb * omb) + a1 * r2
            k = t - lo
            if mode == MODE_MOMENTS:
                mf[k] = 0.0
                mh[k] = h
                for i in range(d):
                    mdh[k, i] = dh[i]
                    for j in range(d):
                        md2h[k, i, j] = d2h[i, j]
            else:
                q = _accumulate(x[t - 1], 0.0, h, df, dh, d2f, d2h, d, False,
                                True, mode, gt, g, hs, gs)
                if mode == MODE_TERMS:
                    mf[k] = q
                total += q
        xt = x[t - 1]
        n2 = 2.0 * r1 + b1 * r2
        n1 = r0 + b1 * r1
        r0 = xt * xt + b1 * r0
        r1 = n1
        r2 = n2
    return total


@njit(cache=True)
def moment_path(code, theta, x, lo, hi):
    """Truncated moments and their theta-derivatives for ``t = lo..hi``."""
    d = theta.size
    m = hi - lo + 1
    mf = np.zeros(m)
    mh = np.ones(m)
    mdf = np.zeros((m, d))
    mdh = np.zeros((m, d))
    md2f = np.zeros((m, d, d))
    md2h = np.zeros((m, d, d))
    dummy_v = np.zeros(d)
    dummy_m = np.zeros((d, d))
    _sweep(code, theta, x, 1, lo, hi, MODE_MOMENTS, dummy_v, dummy_m, dummy_m,
           mf, mh, mdf, mdh, md2f, md2h)
    return mf, mh, mdf, mdh, md2f, md2h


@njit(cache=True)
def q_terms(code, theta, x, lo, hi):
    d = theta.size
    out = np.zeros(hi - lo + 1)
    e1 = np.zeros(1)
    e2 = np.zeros((1, d))
    e3 = np.zeros((1, d, d))
    dv = np.zeros(d)
    dm = np.zeros((d, d))
    _sweep(code, theta, x, 1, lo, hi, MODE_TERMS, dv, dm, dm, out, e1, e2, e2,
           e3, e3)
    return out


@njit(cache=True)
def objective(code, theta, x, lo, hi, mode, exact):
    """Summed objective with score/Hessian (and score outer products)."""
    d = theta.size
    g = np.zeros(d)
    hs = np.zeros((d, d))
    gs = np.zeros((d, d))
    e1 = np.zeros(1)
    e2 = np.zeros((1, d))
    e3 = np.zeros((1, d, d))
    lo = max(lo, FIRST_TERM)
    t0 = memory_start(code, theta, lo, exact)
    val = _sweep(code, theta, x, t0, lo, hi, mode, g, hs, gs, e1, e1, e2, e2,
                 e3, e3)
    for i in range(d):
        for j in range(i):
            hs[i, j] = hs[j, i]
            gs[i, j] = gs[j, i]
    return val, g, hs, gs


# Specialised objective sweeps for the fitting hot path: scalar state, no
# per-step allocation.  Each returns (value, g0, g1, g2, h00, h01, h02, h11,
# h12, h22); unused entries are zero for two-parameter families.  The
# generic _sweep above remains the reference they are tested against.

@njit(cache=True)
def _hot_ar1(theta, x, lo, hi):
    a0 = theta[0]
    a1 = theta[1]
    v = g0 = g1 = h00 = h01 = h11 = 0.0
    for t in range(lo, hi + 1):
        xp = x[t - 2] if t >= 2 else 0.0
        e = x[t - 1] - a0 - a1 * xp
        v += e * e
        g0 -= 2.0 * e
        g1 -= 2.0 * e * xp
        h00 += 2.0
        h01 += 2.0 * xp
        h11 += 2.0 * xp * xp
    return v, g0, g1, 0.0, h00, h01, 0.0, h11, 0.0, 0.0


@njit(cache=True)
def _hot_arma11(theta, x, t0, lo, hi):
    a0 = theta[0]
    a1 = theta[1]
    b1 = theta[2]
    s = a1 + b1
    opb = 1.0 + b1
    c = a0 / opb
    d0 = 1.0 / opb
    c02 = -1.0 / (opb * opb)
    c22 = 2.0 * a0 / (opb * opb * opb)
    s0 = s1 = s2 = 0.0
    v = g0 = g1 = g2 = 0.0
    h00 = h01 = h02 = h11 = h12 = h22 = 0.0
    for t in range(t0, hi + 1):
        if t >= lo:
            e = x[t - 1] - c - s * s0
            f2 = c02 * a0 + s0 + s * s1
            v += e * e
            te = 2.0 * e
            g0 -= te * d0
            g1 -= te * s0
            g2 -= te * f2
            h00 += 2.0 * d0 * d0
            h01 += 2.0 * d0 * s0
            h02 += 2.0 * d0 * f2 - te * c02
            h11 += 2.0 * s0 * s0
            h12 += 2.0 * s0 * f2 - te * s1
            h22 += 2.0 * f2 * f2 - te * (c22 + 2.0 * s1 + s * s2)
        n2 = -2.0 * s1 - b1 * s2
        n1 = -s0 - b1 * s1
        s0 = x[t - 1] - b1 * s0
        s1 = n1
        s2 = n2
    return v, g0, g1, g2, h00, h01, h02, h11, h12, h22


@njit(cache=True)
def _hot_arma11_zero(theta, x, t0, lo, hi):
    a1 = theta[0]
    b1 = theta[1]
    s = a1 + b1
    s0 = s1 = s2 = 0.0
    v = g0 = g1 = h00 = h01 = h11 = 0.0
    for t in range(t0, hi + 1):
        if t >= lo:
            e = x[t - 1] - s * s0
            f1 = s0 + s * s1
            v += e * e
            te = 2.0 * e
            g0 -= te * s0
            g1 -= te * f1
            h00 += 2.0 * s0 * s0
            h01 += 2.0 * s0 * f1 - te * s1
            h11 += 2.0 * f1 * f1 - te * (2.0 * s1 + s * s2)
        n2 = -2.0 * s1 - b1 * s2
        n1 = -s0 - b1 * s1
        s0 = x[t - 1] - b1 * s0
        s1 = n1
        s2 = n2
    return v, g0, g1, 0.0, h00, h01, 0.0, h11, 0.0, 0.0


@njit(cache=True)
def _hot_arch1(theta, x, lo, hi):
    a0 = theta[0]
    a1 = theta[1]
    v = g0 = g1 = h00 = h01 = h11 = 0.0
    for t in range(lo, hi + 1):
        xp = x[t - 2] if t >= 2 else 0.0
        x2 = xp * xp
        h = a0 + a1 * x2
        if h < H_FLOOR:
            h = H_FLOOR
        xt = x[t - 1]
        ih = 1.0 / h
        z = xt * xt * ih
        v += z + math.log(h)
        a = (1.0 - z) * ih
        bb = (2.0 * z - 1.0) * ih * ih
        g0 += a
        g1 += a * x2
        h00 += bb
        h01 += bb * x2
        h11 += bb * x2 * x2
    return v, g0, g1, 0.0, h00, h01, 0.0, h11, 0.0, 0.0


@njit(cache=True)
def _hot_garch11(theta, x, t0, lo, hi):
    a0 = theta[0]
    a1 = theta[1]
    b1 = theta[2]
    omb = 1.0 - b1
    base = a0 / omb
    d0 = 1.0 / omb
    c02 = 1.0 / (omb * omb)
    c2 = a0 / (omb * omb)
    c22 = 2.0 * a0 / (omb * omb * omb)
    r0 = r1 = r2 = 0.0
    v = g0 = g1 = g2 = 0.0
    h00 = h01 = h02 = h11 = h12 = h22 = 0.0
    for t in range(t0, hi + 1):
        if t >= lo:
            h = base + a1 * r0
            if h < H_FLOOR:
                h = H_FLOOR
            xt = x[t - 1]
            ih = 1.0 / h
            z = xt * xt * ih
            v += z + math.log(h)
            a = (1.0 - z) * ih
            bb = (2.0 * z - 1.0) * ih * ih
            q2 = c2 + a1 * r1
            g0 += a * d0
            g1 += a * r0
            g2 += a * q2
            h00 += bb * d0 * d0
            h01 += bb * d0 * r0
            h02 += bb * d0 * q2 + a * c02
            h11 += bb * r0 * r0
            h12 += bb * r0 * q2 + a * r1
            h22 += bb * q2 * q2 + a * (c22 + a1 * r2)
        xt = x[t - 1]
        n2 = 2.0 * r1 + b1 * r2
        n1 = r0 + b1 * r1
        r0 = xt * xt + b1 * r0
        r1 = n1
        r2 = n2
    return v, g0, g1, g2, h00, h01, h02, h11, h12, h22


@njit(cache=True)
def hot_objective(code, theta, x, lo, hi, exact):
    """Objective, score and Hessian via the specialised sweeps."""
    lo = max(lo, FIRST_TERM)
    t0 = memory_start(code, theta, lo, exact)
    if code == AR1:
        r = _hot_ar1(theta, x, lo, hi)
    elif code == ARMA11:
        r = _hot_arma11(theta, x, t0, lo, hi)
    elif code == ARMA11_ZERO:
        r = _hot_arma11_zero(theta, x, t0, lo, hi)
    elif code == ARCH1:
        r = _hot_arch1(theta, x, lo, hi)
    else:
        r = _hot_garch11(theta, x, t0, lo, hi)
    d = theta.size
    g = np.empty(d)
    hs = np.empty((d, d))
    g[0] = r[1]
    g[1] = r[2]
    hs[0, 0] = r[4]
    hs[0, 1] = r[5]
    hs[1, 0] = r[5]
    hs[1, 1] = r[7]
    if d == 3:
        g[2] = r[3]
        hs[0, 2] = r[6]
        hs[2, 0] = r[6]
        hs[1, 2] = r[8]
        hs[2, 1] = r[8]
        hs[2, 2] = r[9]
    return r[0], g, hs


@njit(cache=True)
def _popcount(v):
    c = 0
    while v:
        c += v & 1
        v >>= 1
    return c


@njit(cache=True)
def _kkt_candidate(g, hm, amat, slack, mask, k):
    """Equality-constrained step for working set ``mask`` and its
    multipliers, or ``ok=False`` when the set is degenerate."""
    d = g.size
    m = slack.size
    kkt = np.zeros((d + k, d + k))
    rhs = np.zeros(d + k)
    kkt[:d, :d] = hm
    for j in range(d):
        rhs[j] = -g[j]
    r = 0
    for i in range(m):
        if mask & (1 << i):
            for j in range(d):
                kkt[d + r, j] = amat[i, j]
                kkt[j, d + r] = amat[i, j]
            rhs[d + r] = slack[i]
            r += 1
    if k > 1:
        aw = np.ascontiguousarray(kkt[d:, :d])
        if abs(np.linalg.det(aw @ aw.T)) < 1e-12:
            return rhs[:d], rhs[d:], False
    sol = np.linalg.solve(kkt, rhs)
    return sol[:d], sol[d:], True


@njit(cache=True)
def qp_step(g, hm, amat, slack):
    """Minimise ``g's + s'Hs/2`` subject to ``A s <= slack`` (H positive
    definite, few constraints) by enumerating working sets.

    The QP is convex, so the first working set giving a feasible step with
    non-negative multipliers is optimal; sets made of currently binding
    constraints are tried first because they are the usual answer.

    Returns the step, the norm of the Lagrangian gradient ``g + A_W' mu``
    restricted to constraints binding at the current point, and whether
    that restricted set is non-empty.
    """
    d = g.size
    m = slack.size
    s = -np.linalg.solve(hm, g)
    ok = True
    for i in range(m):
        lhs = 0.0
        for j in range(d):
            lhs += amat[i, j] * s[j]
        if lhs > slack[i] + 1e-13 * (1.0 + abs(slack[i])):
            ok = False
            break
    if ok:
        return s, math.sqrt(np.dot(g, g)), False

    binding = 0
    for i in range(m):
        if slack[i] <= 1e-9 * (1.0 + abs(slack[i])):
            binding |= 1 << i
    gscale = 1e-10 * (1.0 + np.max(np.abs(g)))
    for sweep in range(2):
        for k in range(1, d + 1):
            for mask in range(1, 1 << m):
                if _popcount(mask) != k:
                    continue
                inside = (mask & ~binding) == 0
                if inside != (sweep == 0):
                    continue
                cand, mu, good = _kkt_candidate(g, hm, amat, slack, mask, k)
                if not good:
                    continue
                for r in range(k):
                    if mu[r] < -gscale:
                        good = False
                if not good:
                    continue
                for i in range(m):
                    lhs = 0.0
                    for j in range(d):
                        lhs += amat[i, j] * cand[j]
                    if lhs > slack[i] + 1e-10 * (1.0 + abs(slack[i])):
                        good = False
                        break
                if not good:
                    continue
                lag = g.copy()
                bind = False
                r = 0
                for i in range(m):
                    if mask & (1 << i):
                        if binding & (1 << i):
                            bind = True
                            for j in range(d):
                                lag[j] += mu[r] * amat[i, j]
                        r += 1
                return cand, math.sqrt(np.dot(lag, lag)), bind

    # degenerate geometry: shrink the unconstrained step into the region
    step = 1.0
    for i in range(m):
        lhs = 0.0
        for j in range(d):
            lhs += amat[i, j] * s[j]
        if lhs > 0.0 and lhs * step > slack[i]:
            step = max(0.0, slack[i] / lhs)
    return s * step, math.sqrt(np.dot(g, g)), False


@njit(cache=True)
def _comfortably_pd(a):
    """Cholesky pivots of a unit-diagonal matrix all above 1e-8, in which
    case the eigenvalue modification below would leave it unchanged."""
    d = a.shape[0]
    low = np.zeros((d, d))
    for j in range(d):
        acc = a[j, j]
        for k in range(j):
            acc -= low[j, k] * low[j, k]
        if not acc > 1e-8:
            return False
        low[j, j] = math.sqrt(acc)
        for i in range(j + 1, d):
            acc = a[i, j]
            for k in range(j):
                acc -= low[i, k] * low[j, k]
            low[i, j] = acc / low[j, j]
    return True


@njit(cache=True)
def _modified_hessian(hs):
    """Absolute-eigenvalue modification, done on the diagonally scaled
    matrix so that badly scaled parameters keep their curvature."""
    d = hs.shape[0]
    sc = np.empty(d)
    for i in range(d):
        a = abs(hs[i, i])
        sc[i] = 1.0 / math.sqrt(a) if a > 1e-300 else 1.0
    scaled = hs * np.outer(sc, sc)
    if _comfortably_pd(scaled):
        return hs.copy()
    w, v = np.linalg.eigh(scaled)
    top = 0.0
    for i in range(w.size):
        top = max(top, abs(w[i]))
    floor = max(1e-10 * top, 1e-300)
    for i in range(w.size):
        w[i] = max(abs(w[i]), floor)
    inv = 1.0 / sc
    return ((v * w) @ v.T) * np.outer(inv, inv)


@njit(cache=True)
def newton_fit(code, x, lo, hi, theta0, amat, bvec, max_iter, grad_rel_tol):
    """Projected Newton descent for the segment objective on ``A theta <= b``.

    Returns ``(theta, value, grad_norm, status, boundary, iterations)``.
    """
    theta = theta0.copy()
    d = theta.size
    m = bvec.size
    val, g, hs = hot_objective(code, theta, x, lo, hi, False)
    status = STATUS_MAXITER
    gnorm = math.sqrt(np.dot(g, g))
    boundary = False
    it = 0
    if not math.isfinite(val):
        return theta, val, gnorm, STATUS_NONFINITE, False, 0
    slack = np.empty(m)
    trial = theta.copy()
    v_new = val
    g_new = g
    h_new = hs
    done = False
    while not done:
        for i in range(m):
            slack[i] = bvec[i] - np.dot(amat[i], theta)
            if slack[i] < 0.0:
                slack[i] = 0.0
        hm = _modified_hessian(hs)
        s, gnorm, boundary = qp_step(g, hm, amat, slack)
        if gnorm <= grad_rel_tol * max(1.0, abs(val)):
            status = STATUS_OK
            break
        if it >= max_iter:
            status = STATUS_MAXITER
            break
        slope = np.dot(g, s)
        if not slope < 0.0:
            status = STATUS_LINESEARCH
            break
        alpha = 1.0
        accepted = False
        while alpha > 1e-12:
            trial = theta + alpha * s
            v_new, g_new, h_new = hot_objective(code, trial, x, lo, hi, False)
            if math.isfinite(v_new):
                noise = 1e-13 * max(1.0, abs(val))
                if v_new <= val + 1e-4 * alpha * slope or abs(v_new - val) <= noise:
                    accepted = True
                    break
            alpha *= 0.5
        it += 1
        if not accepted:
            status = STATUS_LINESEARCH
            break
        theta = trial
        val = v_new
        g = g_new
        hs = h_new
    on_edge = False
    for i in range(m):
        if bvec[i] - np.dot(amat[i], theta) <= 1e-8 * (1.0 + abs(bvec[i])):
            on_edge = True
    return theta, val, gnorm, status, on_edge, it


@njit(cache=True)
def fit_chain(code, x, los, his, theta0, amat, bvec, max_iter, grad_rel_tol):
    """Fit a sequence of segments, warm-starting each from the previous
    successful optimum."""
    k = los.size
    d = theta0.size
    thetas = np.empty((k, d))
    status = np.empty(k, dtype=np.int64)
    cur = theta0.copy()
    for i in range(k):
        th, _, _, st, _, _ = newton_fit(code, x, los[i], his[i], cur, amat,
                                        bvec, max_iter, grad_rel_tol)
        thetas[i] = th
        status[i] = st
        if st == STATUS_OK:
            cur = th
    return thetas, status


@njit(cache=True)
def quad_pair(n, k1, k2, tl, tm, tr, sigma):
    d = tl.size
    w = (k2 - k1) / n ** 1.5
    c = np.empty(d)
    for i in range(d):
        # n - (k2 - k1) = k1 + (n - k2): grouping by differences makes the
        # contrast vanish exactly for equal estimates
        c[i] = w * (k1 * (tm[i] - tl[i]) + (n - k2) * (tm[i] - tr[i]))
    return np.dot(c, sigma @ c)


@njit(cache=True)
def row_columns(k1, v, n, stride):
    last = n - v
    first = k1 + v
    if first > last:
        return np.empty(0, dtype=np.int64)
    cnt = (last - first) // stride + 1
    extra = 1 if first + (cnt - 1) * stride != last else 0
    out = np.empty(cnt + extra, dtype=np.int64)
    for i in range(cnt):
        out[i] = first + i * stride
    if extra:
        out[cnt] = last
    return out


@njit(cache=True, parallel=True)
def scan_rows(code, x, n, v, stride, rows, row_start, left, left_ok, right,
              right_ok, sigma, amat, bvec, max_iter, grad_rel_tol, dense,
              surface, mid_status, row_best, row_arg):
    """Evaluate the quadratic form for every pair in the given rows.

    ``left[k1]`` / ``right[k2]`` hold the cached outer-segment estimates;
    each row walks ``k2`` upwards, warm-starting the middle fit from the
    previous column.  ``mid_status`` counts (fitted, failed) per row.
    """
    nrows = rows.size
    for ri in prange(nrows):
        k1 = rows[ri]
        cols = row_columns(k1, v, n, stride)
        cur = row_start[ri].copy()
        best = -1.0
        arg = -1
        nfail = 0
        for ci in range(cols.size):
            k2 = cols[ci]
            th, _, _, st, _, _ = newton_fit(code, x, k1 + 1, k2, cur, amat,
                                            bvec, max_iter, grad_rel_tol)
            if st != STATUS_OK or not left_ok[k1] or not right_ok[k2]:
                nfail += 1
                if dense:
                    surface[k1, k2] = np.nan
                continue
            cur = th
            q = quad_pair(n, k1, k2, left[k1], th, right[k2], sigma)
            if dense:
                surface[k1, k2] = q
            if q > best:
                best = q
                arg = k2
        mid_status[ri, 0] = cols.size
        mid_status[ri, 1] = nfail
        row_best[ri] = best
        row_arg[ri] = arg


@njit(cache=True)
def simulate_path(code, thetas, regime, xi):
    """Exact recursion with per-time regime index ``regime[t]`` into the rows
    of ``thetas``; state starts at zero."""
    total = xi.size
    out = np.empty(total)
    xprev = 0.0
    eprev = 0.0
    sig2 = 0.0
    for t in range(total):
        th = thetas[regime[t]]
        if code == AR1:
            xt = th[0] + th[1] * xprev + xi[t]
        elif code == ARMA11:
            xt = th[0] + th[1] * xprev + xi[t] + th[2] * eprev
        elif code == ARMA11_ZERO:
            xt = th[0] * xprev + xi[t] + th[1] * eprev
        elif code == ARCH1:
            sig2 = th[0] + th[1] * xprev * xprev
            xt = math.sqrt(sig2) * xi[t]
        else:
            sig2 = th[0] + th[1] * xprev * xprev + th[2] * sig2
            xt = math.sqrt(sig2) * xi[t]
        out[t] = xt
        xprev = xt
        eprev = xi[t]
    return out


@njit(cache=True)
def bridge_sup(incr, d):
    """Sup over grid pairs of the squared distance between bridge values.

    ``incr`` has shape (m, d) of N(0, 1/m) increments.
    """
    m = incr.shape[0]
    pts = np.zeros((m + 1, d))
    for j in range(m):
        for i in range(d):
            pts[j + 1, i] = pts[j, i] + incr[j, i]
    for j in range(m + 1):
        tau = j / m
        for i in range(d):
            pts[j, i] -= tau * pts[m, i]
    if d == 1:
        lo = pts[0, 0]
        hi = pts[0, 0]
        for j in range(m + 1):
            lo = min(lo, pts[j, 0])
            hi = max(hi, pts[j, 0])
        return (hi - lo) ** 2
    # diameter with a radius bound: |p_i - p_j| <= r_i + r_j about the centroid
    cen = np.zeros(d)
    for j in range(m + 1):
        for i in range(d):
            cen[i] += pts[j, i]
    cen /= m + 1
    rad = np.empty(m + 1)
    for j in range(m + 1):
        acc = 0.0
        for i in range(d):
            acc += (pts[j, i] - cen[i]) ** 2
        rad[j] = math.sqrt(acc)
    order = np.argsort(-rad)
    best = 0.0
    for a in range(m + 1):
        ia = order[a]
        if (2.0 * rad[ia]) ** 2 <= best:
            break
        for b in range(a + 1, m + 1):
            ib = order[b]
            if (rad[ia] + rad[ib]) ** 2 <= best:
                break
            acc = 0.0
            for i in range(d):
                acc += (pts[ia, i] - pts[ib, i]) ** 2
            if acc > best:
                best = acc
    return best


@njit(cache=True)
def bridge_sup_bruteforce(incr, d):
    m = incr.shape[0]
    pts = np.zeros((m + 1, d))
    for j in range(m):
        for i in range(d):
            pts[j + 1, i] = pts[j, i] + incr[j, i]
    for j in range(m + 1):
        tau = j / m
        for i in range(d):
            pts[j, i] -= tau * pts[m, i]
    best = 0.0
    for a in range(m + 1):
        for b in range(a + 1, m + 1):
            acc = 0.0
            for i in range(d):
                acc += (pts[a, i] - pts[b, i]) ** 2
            if acc > best:
                best = acc
    return best


@njit(cache=True)
def bridge_sup_batch(incr):
    """``incr`` of shape (R, m, d) -> R sup values."""
    r = incr.shape[0]
    d = incr.shape[2]
    out = np.empty(r)
    for k in range(r):
        out[k] = bridge_sup(incr[k], d)
    return out
