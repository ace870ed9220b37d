"""Gaussian quasi-likelihood on a segment: objective, derivatives, QMLE fits
and the information-matrix estimators used to normalise the scan."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
from numpy.typing import ArrayLike, NDArray

from epichange import _kernels as K
from epichange.models import (
    EPS_POS,
    ModelSpec,
    _as_theta,
    _check,
    as_series,
    get_model,
)

logger = logging.getLogger(__name__)

GRAD_REL_TOL = 1e-6
MAX_ITER = 200
RCOND_MIN = 1e-10


class ConfigurationError(ValueError):
    """Segment or window choice incompatible with the series length."""


@dataclass(frozen=True)
class Segment:
    """Inclusive 1-based index range ``lo..hi``.

    ``X_1`` only initialises the recursions, so a segment starting at 1
    contributes likelihood terms from ``t = 2``; ``card`` counts the
    contributing terms.
    """

    lo: int
    hi: int

    @property
    def first(self) -> int:
        return max(self.lo, K.FIRST_TERM)

    @property
    def card(self) -> int:
        return self.hi - self.first + 1

    def check(self, n: int, d: int | None = None) -> None:
        if not 1 <= self.lo <= self.hi <= n:
            raise ConfigurationError(f"segment [{self.lo}, {self.hi}] outside [1, {n}]")
        if d is not None and self.card < d + 1:
            raise ConfigurationError(
                f"segment [{self.lo}, {self.hi}] has {self.card} points; need >= {d + 1}")


def _segment(T: Segment | tuple[int, int]) -> Segment:
    return T if isinstance(T, Segment) else Segment(int(T[0]), int(T[1]))


@dataclass(frozen=True)
class SegmentFit:
    segment: Segment
    theta_hat: NDArray[np.float64]
    neg_qlik: float
    grad_norm: float
    converged: bool
    boundary: bool
    iterations: int
    G_hat: NDArray[np.float64] = field(repr=False)
    F_hat: NDArray[np.float64] = field(repr=False)

    @property
    def covariance(self) -> NDArray[np.float64]:
        """Sandwich covariance ``F^-1 G F^-1 / Card`` of the estimate."""
        finv = np.linalg.pinv(self.F_hat)
        return finv @ self.G_hat @ finv / self.segment.card

    @property
    def std_errors(self) -> NDArray[np.float64]:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


@dataclass(frozen=True)
class SandwichMatrix:
    sigma: NDArray[np.float64]
    used_segments: tuple[bool, bool, bool]
    fits: tuple[SegmentFit, SegmentFit, SegmentFit] = field(repr=False)

    @property
    def degenerate(self) -> bool:
        return not any(self.used_segments)


def q_term(model: ModelSpec | str, theta: ArrayLike, x: ArrayLike, t: int) -> float:
    """Single contribution ``(X_t - f_t)^2 / h_t + log h_t``."""
    model = get_model(model)
    th = _as_theta(model, theta)
    xs = as_series(x)
    if not 1 <= t <= xs.size:
        raise IndexError(f"t={t} outside [1, {xs.size}]")
    _check(model, th)
    return float(K.q_terms(model.code, th, xs, t, t)[0])


def q_terms(model: ModelSpec | str, theta: ArrayLike, x: ArrayLike,
            T: Segment | tuple[int, int]) -> NDArray[np.float64]:
    model = get_model(model)
    th = _as_theta(model, theta)
    xs = as_series(x)
    T = _segment(T)
    T.check(xs.size)
    _check(model, th)
    return K.q_terms(model.code, th, xs, T.lo, T.hi)


def neg_qlik(model: ModelSpec | str, theta: ArrayLike, x: ArrayLike,
             T: Segment | tuple[int, int]) -> float:
    """Sum of ``q_t`` over the segment (the quantity the QMLE minimises)."""
    T = _segment(T)
    if T.card < 1:
        return 0.0
    return float(q_terms(model, theta, x, (T.first, T.hi)).sum())


def score_hessian(model: ModelSpec | str, theta: ArrayLike, x: ArrayLike,
                  T: Segment | tuple[int, int], per_term: bool = False):
    """Exact score and Hessian of :func:`neg_qlik`.

    With ``per_term=True`` a third element, the summed outer product of the
    per-term scores, is returned as well.
    """
    model = get_model(model)
    th = _as_theta(model, theta)
    xs = as_series(x)
    T = _segment(T)
    T.check(xs.size)
    _check(model, th)
    mode = K.MODE_GF if per_term else K.MODE_HESS
    _, g, h, gs = K.objective(model.code, th, xs, T.lo, T.hi, mode, True)
    if per_term:
        return g, h, gs
    return g, h


def G_F_hat(model: ModelSpec | str, theta_hat: ArrayLike, x: ArrayLike,
            T: Segment | tuple[int, int]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Averaged score outer products and averaged Hessians of ``q_t``."""
    model = get_model(model)
    T = _segment(T)
    th = _as_theta(model, theta_hat)
    xs = as_series(x)
    T.check(xs.size)
    _check(model, th)
    return _g_f(model, th, xs, T)


def _g_f(model: ModelSpec, th, xs, T: Segment):
    _, _, h, gs = K.objective(model.code, th, xs, T.lo, T.hi, K.MODE_GF, True)
    G = gs / T.card
    F = h / T.card
    return 0.5 * (G + G.T), 0.5 * (F + F.T)


def default_init(model: ModelSpec, x: NDArray[np.float64], lo: int, hi: int
                 ) -> NDArray[np.float64]:
    """Cheap admissible starting point from segment moments."""
    lo = max(lo, K.FIRST_TERM)
    seg = x[lo - 1:hi]
    prev = x[lo - 2:hi - 1]
    if model.kind == "mean":
        if model.code == K.ARMA11_ZERO:
            den = float(prev @ prev)
            a1 = float(seg @ prev) / den if den > 0 else 0.0
            return np.array([np.clip(a1, -0.9, 0.9), 0.0])
        pc = prev - prev.mean()
        den = float(pc @ pc)
        a1 = float(pc @ (seg - seg.mean())) / den if den > 0 else 0.0
        a1 = float(np.clip(a1, -0.9, 0.9))
        a0 = float(seg.mean() - a1 * prev.mean())
        if model.code == K.AR1:
            return np.array([a0, a1])
        return np.array([a0, a1, 0.0])
    var = float(np.mean(seg * seg))
    a0 = max(0.5 * var, 10 * EPS_POS)
    if model.code == K.ARCH1:
        return np.array([a0, 0.2])
    return np.array([a0, 0.2, 0.2])


def _fallback(model: ModelSpec, xs, T: Segment, start, amat, bvec):
    """SLSQP on the same region, used when Newton's line search stalls."""
    def fun(th):
        v, g, _, _ = K.objective(model.code, th, xs, T.lo, T.hi, K.MODE_HESS, False)
        if not np.isfinite(v):
            return 1e300, np.zeros_like(th)
        return v, g

    cons = {"type": "ineq", "fun": lambda th: bvec - amat @ th,
            "jac": lambda th: -amat}
    res = scipy.optimize.minimize(fun, start, jac=True, method="SLSQP",
                                  constraints=[cons],
                                  options={"maxiter": 500, "ftol": 1e-12})
    th = np.asarray(res.x, dtype=float)
    # pull back inside after SLSQP's small constraint tolerance
    if np.any(amat @ th > bvec):
        th = start + 0.999 * _shrink(amat, bvec, start, th) * (th - start)
    return th


def _shrink(amat, bvec, a, b):
    step = 1.0
    direction = b - a
    lhs = amat @ direction
    slack = bvec - amat @ a
    for li, si in zip(lhs, slack):
        if li > 0:
            step = min(step, max(si, 0.0) / li)
    return step


def fit(model: ModelSpec | str, x: ArrayLike, T: Segment | tuple[int, int],
        init: ArrayLike | None = None, *, max_iter: int = MAX_ITER,
        grad_rel_tol: float = GRAD_REL_TOL, fallback: bool = True) -> SegmentFit:
    """Quasi-maximum-likelihood estimate on segment ``T``.

    Non-convergence is reported in the returned fit rather than raised.
    """
    model = get_model(model)
    xs = as_series(x)
    T = _segment(T)
    T.check(xs.size, model.d)
    amat, bvec = model.constraints()
    if init is None:
        start = default_init(model, xs, T.lo, T.hi)
    else:
        start = _as_theta(model, init).copy()
        _check(model, start)
    th, val, gnorm, status, edge, its = K.newton_fit(
        model.code, xs, T.lo, T.hi, start, amat, bvec, max_iter, grad_rel_tol)
    if status != K.STATUS_OK and fallback:
        logger.debug("newton status %d on %s; trying SLSQP", status, T)
        alt = _fallback(model, xs, T, th if np.all(np.isfinite(th)) else start,
                        amat, bvec)
        th2, val2, gnorm2, status2, edge2, its2 = K.newton_fit(
            model.code, xs, T.lo, T.hi, alt, amat, bvec, max_iter, grad_rel_tol)
        if status2 == K.STATUS_OK or (np.isfinite(val2) and val2 < val):
            th, val, gnorm, status, edge = th2, val2, gnorm2, status2, edge2
            its += its2
    G, F = _g_f(model, th, xs, T) if np.isfinite(val) else (
        np.full((model.d, model.d), np.nan),) * 2
    return SegmentFit(T, th, float(val), float(gnorm), status == K.STATUS_OK,
                      bool(edge), int(its), G, F)


def sandwich_term(G: NDArray[np.float64], F: NDArray[np.float64]
                  ) -> NDArray[np.float64] | None:
    """``F G^-1 F``, or ``None`` when ``G`` is numerically singular.

    Singularity means a reciprocal condition number below ``RCOND_MIN``
    after symmetric diagonal equilibration.
    """
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(F))):
        return None
    Gs = 0.5 * (G + G.T)
    diag = np.diag(Gs)
    if np.any(diag <= 0):
        return None
    # condition the correlation form so that parameter units (an intercept
    # near 1000 next to a slope near 0.3) do not read as singularity
    scale = 1.0 / np.sqrt(diag)
    s = np.linalg.svd(Gs * np.outer(scale, scale), compute_uv=False)
    if s[0] <= 0 or s[-1] / s[0] < RCOND_MIN:
        return None
    try:
        factor = scipy.linalg.cho_factor(Gs)
    except np.linalg.LinAlgError:
        return None
    term = F @ scipy.linalg.cho_solve(factor, F)
    return 0.5 * (term + term.T)


def sigma_hat(model: ModelSpec | str, x: ArrayLike, u_n: int) -> SandwichMatrix:
    """Normalising matrix averaged over the two edge windows of length
    ``u_n`` and the central remainder."""
    model = get_model(model)
    xs = as_series(x)
    n = xs.size
    if u_n < model.d + 1 or n - 2 * u_n < model.d + 1:
        raise ConfigurationError(
            f"u_n={u_n} leaves segments too short for d={model.d}, n={n}")
    segs = (Segment(1, u_n), Segment(u_n + 1, n - u_n), Segment(n - u_n + 1, n))
    fits = tuple(fit(model, xs, s) for s in segs)
    total = np.zeros((model.d, model.d))
    used = []
    for f in fits:
        term = sandwich_term(f.G_hat, f.F_hat)
        used.append(term is not None)
        if term is not None:
            total += term
    return SandwichMatrix(total / 3.0, tuple(used), fits)
