"""The epidemic scan: segment fits over all admissible break pairs, the
weighted contrast, its quadratic form and the resulting test."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterator

import numba
import numpy as np
from numpy.typing import ArrayLike, NDArray

from epichange import _kernels as K
from epichange import critvals
from epichange.models import ModelSpec, as_series, get_model
from epichange.qmle import (
    GRAD_REL_TOL,
    MAX_ITER,
    ConfigurationError,
    SandwichMatrix,
    Segment,
    SegmentFit,
    default_init,
    fit,
    sigma_hat,
)

logger = logging.getLogger(__name__)

DENSE_LIMIT = 10_000_000


class DegenerateNormalizationError(RuntimeError):
    """All three information matrices were singular, so the statistic is 0
    by construction rather than by evidence."""


class ScanError(RuntimeError):
    """Too many segment fits failed for the scan to be trusted."""


def default_windows(n: int) -> tuple[int, int]:
    """``(u_n, v_n) = (floor(log(n)^2.5), floor(log(n)^2))``."""
    if n < 30:
        raise ConfigurationError(f"n={n} too short; need n >= 30")
    ln = math.log(n)
    u, v = math.floor(ln ** 2.5), math.floor(ln ** 2)
    if n - 2 * v < v:
        raise ConfigurationError(f"no admissible pairs for n={n}, v_n={v}")
    return u, v


def scan_set(n: int, v_n: int, stride: int = 1) -> NDArray[np.int64]:
    """Admissible pairs ``v <= k1 < k2 <= n - v`` with ``k2 - k1 >= v``.

    With ``stride > 1`` rows and columns are thinned; the last column of
    every kept row is always included.  Returns an ``(m, 2)`` array in
    row-major order.
    """
    if stride < 1:
        raise ConfigurationError("stride must be >= 1")
    if n - 2 * v_n < v_n:
        raise ConfigurationError(
            f"empty scan set for n={n}, v_n={v_n}: need n - 2 v_n >= v_n")
    out = []
    for k1 in _rows(n, v_n, stride):
        for k2 in K.row_columns(k1, v_n, n, stride):
            out.append((k1, int(k2)))
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


def _rows(n: int, v: int, stride: int) -> NDArray[np.int64]:
    return np.arange(v, n - 2 * v + 1, stride, dtype=np.int64)


def scan_size(n: int, v_n: int, stride: int = 1) -> int:
    return int(sum(K.row_columns(k1, v_n, n, stride).size
                   for k1 in _rows(n, v_n, stride)))


def c_vector(n: int, k1: int, k2: int, theta_left: ArrayLike,
             theta_mid: ArrayLike, theta_right: ArrayLike) -> NDArray[np.float64]:
    """Weighted contrast of the middle estimate against the outer two.

    Written as ``k1 (tm - tl) + (n - k2) (tm - tr)``, which equals
    ``(n - (k2 - k1)) tm - k1 tl - (n - k2) tr`` and is exactly zero when
    the three estimates coincide.
    """
    tl, tm, tr = (np.asarray(a, dtype=float) for a in (theta_left, theta_mid, theta_right))
    w = (k2 - k1) / n ** 1.5
    return w * (k1 * (tm - tl) + (n - k2) * (tm - tr))


def q_pair(c: ArrayLike, sigma: ArrayLike | SandwichMatrix) -> float:
    s = sigma.sigma if isinstance(sigma, SandwichMatrix) else np.asarray(sigma, dtype=float)
    c = np.asarray(c, dtype=float)
    return float(c @ s @ c)


@dataclass(frozen=True)
class ScanConfig:
    """Tuning of the scan; ``None`` windows fall back to
    :func:`default_windows`."""

    u_n: int | None = None
    v_n: int | None = None
    alpha: float = 0.05
    stride: int = 1
    workers: int | None = None
    critical_value: float | None = None
    refit_regimes: bool = True
    max_fail_frac: float = 0.01
    max_iter: int = MAX_ITER
    grad_rel_tol: float = GRAD_REL_TOL

    def windows(self, n: int, d: int) -> tuple[int, int]:
        if self.u_n is None or self.v_n is None:
            u0, v0 = default_windows(n)
        u = self.u_n if self.u_n is not None else u0
        v = self.v_n if self.v_n is not None else v0
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if self.stride < 1:
            raise ConfigurationError("stride must be >= 1")
        if v < d + 1 or u < d + 1:
            raise ConfigurationError(f"need u_n, v_n >= d + 1 = {d + 1}; got ({u}, {v})")
        if n - 2 * v < v:
            raise ConfigurationError(f"no admissible pairs for n={n}, v_n={v}")
        if n - 2 * u < d + 1:
            raise ConfigurationError(f"u_n={u} too large for n={n}")
        return u, v


@dataclass
class ScanReport:
    model: str
    n: int
    u_n: int
    v_n: int
    stride: int
    alpha: float
    Q_n: float
    t_hat: tuple[int, int]
    critical_value: float
    reject: bool
    sigma: SandwichMatrix = field(repr=False)
    surface: NDArray[np.float64] | None = field(repr=False, default=None)
    row_max: NDArray[np.float64] | None = field(repr=False, default=None)
    regime_fits: tuple[SegmentFit, ...] = field(repr=False, default=())
    n_pairs: int = 0
    failed_pairs: int = 0
    wall_time: float = 0.0

    def iter_surface(self) -> Iterator[tuple[int, int, float]]:
        """Long-form ``(k1, k2, Q)`` over the evaluated pairs."""
        if self.surface is None:
            return
        k1s, k2s = np.nonzero(np.isfinite(self.surface))
        for a, b in zip(k1s, k2s):
            yield int(a), int(b), float(self.surface[a, b])


def _chain(model: ModelSpec, x, los, his, cfg: ScanConfig):
    amat, bvec = model.constraints()
    los = np.asarray(los, dtype=np.int64)
    his = np.asarray(his, dtype=np.int64)
    start = default_init(model, x, int(los[0]), int(his[0]))
    thetas, status = K.fit_chain(model.code, x, los, his, start, amat, bvec,
                                 cfg.max_iter, cfg.grad_rel_tol)
    ok = status == K.STATUS_OK
    for i in np.flatnonzero(~ok):
        f = fit(model, x, Segment(int(los[i]), int(his[i])),
                max_iter=cfg.max_iter, grad_rel_tol=cfg.grad_rel_tol)
        if f.converged:
            thetas[i] = f.theta_hat
            ok[i] = True
    return thetas, ok


def run_scan(model: ModelSpec | str, x: ArrayLike,
             config: ScanConfig | None = None) -> ScanReport:
    """Compute the statistic, the break estimate and the decision."""
    t_start = time.perf_counter()
    cfg = config or ScanConfig()
    model = get_model(model)
    xs = as_series(x)
    n, d = xs.size, model.d
    u, v = cfg.windows(n, d)
    sig = sigma_hat(model, xs, u)
    if sig.degenerate:
        raise DegenerateNormalizationError(
            "all three segment information matrices are singular")

    rows = _rows(n, v, cfg.stride)
    cols = np.unique(np.concatenate([K.row_columns(k1, v, n, cfg.stride) for k1 in rows]))

    left = np.zeros((n + 1, d))
    left_ok = np.zeros(n + 1, dtype=np.bool_)
    th, ok = _chain(model, xs, np.ones_like(rows), rows, cfg)
    left[rows], left_ok[rows] = th, ok

    right = np.zeros((n + 1, d))
    right_ok = np.zeros(n + 1, dtype=np.bool_)
    desc = cols[::-1]
    th, ok = _chain(model, xs, desc + 1, np.full_like(desc, n), cfg)
    right[desc], right_ok[desc] = th, ok

    row_start, _ = _chain(model, xs, rows + 1, rows + v, cfg)

    n_pairs = scan_size(n, v, cfg.stride)
    dense = n_pairs <= DENSE_LIMIT
    surface = np.full((n + 1, n + 1) if dense else (1, 1), np.nan)
    mid_status = np.zeros((rows.size, 2), dtype=np.int64)
    row_best = np.full(rows.size, -1.0)
    row_arg = np.full(rows.size, -1, dtype=np.int64)
    amat, bvec = model.constraints()
    prev_threads = numba.get_num_threads()
    if cfg.workers:
        numba.set_num_threads(min(cfg.workers, numba.config.NUMBA_NUM_THREADS))
    try:
        K.scan_rows(model.code, xs, n, v, cfg.stride, rows, row_start, left,
                    left_ok, right, right_ok, sig.sigma, amat, bvec,
                    cfg.max_iter, cfg.grad_rel_tol, dense, surface, mid_status,
                    row_best, row_arg)
    finally:
        numba.set_num_threads(prev_threads)

    failed = int(mid_status[:, 1].sum())
    if dense and failed:
        failed = _retry_failed(model, xs, n, v, cfg, rows, left, left_ok,
                               right, right_ok, sig, surface)
    if failed > cfg.max_fail_frac * n_pairs:
        raise ScanError(f"{failed} of {n_pairs} pair fits failed")

    if dense:
        flat = np.where(np.isfinite(surface), surface, -np.inf)
        idx = int(np.argmax(flat))
        k1, k2 = divmod(idx, n + 1)
        q_n = float(surface[k1, k2])
    else:
        best = np.where(row_arg >= 0, row_best, -np.inf)
        ri = int(np.argmax(best))
        k1, k2, q_n = int(rows[ri]), int(row_arg[ri]), float(row_best[ri])

    crit = cfg.critical_value
    if crit is None:
        crit = critvals.lookup(d, cfg.alpha)
    regimes: tuple[SegmentFit, ...] = ()
    if cfg.refit_regimes:
        regimes = tuple(fit(model, xs, s, max_iter=cfg.max_iter)
                        for s in (Segment(1, k1), Segment(k1 + 1, k2), Segment(k2 + 1, n)))
    row_max = None
    if not dense:
        row_max = np.full(n + 1, np.nan)
        row_max[rows] = np.where(row_arg >= 0, row_best, np.nan)
    return ScanReport(
        model=model.family, n=n, u_n=u, v_n=v, stride=cfg.stride,
        alpha=cfg.alpha, Q_n=q_n, t_hat=(int(k1), int(k2)),
        critical_value=float(crit), reject=bool(q_n > crit), sigma=sig,
        surface=surface if dense else None, row_max=row_max,
        regime_fits=regimes, n_pairs=n_pairs, failed_pairs=failed,
        wall_time=time.perf_counter() - t_start)


def _retry_failed(model, xs, n, v, cfg, rows, left, left_ok, right, right_ok,
                  sig, surface) -> int:
    """Cold refits (with the SLSQP fallback) for pairs whose warm-started
    Newton fit failed.  Returns the number still failing."""
    still = 0
    for k1 in rows:
        for k2 in K.row_columns(k1, v, n, cfg.stride):
            if np.isfinite(surface[k1, k2]):
                continue
            if not (left_ok[k1] and right_ok[k2]):
                still += 1
                continue
            f = fit(model, xs, Segment(int(k1) + 1, int(k2)),
                    max_iter=cfg.max_iter, grad_rel_tol=cfg.grad_rel_tol)
            if not f.converged:
                still += 1
                continue
            c = c_vector(n, k1, k2, left[k1], f.theta_hat, right[k2])
            surface[k1, k2] = q_pair(c, sig.sigma)
    return still


def write_heatmap(report: ScanReport, path) -> int:
    """Long-form ``k1,k2,Q`` CSV of the surface; returns the row count.

    Two leading ``#`` lines carry the critical value and the maximiser so
    a plot can draw the rejection plane without re-running the scan.
    """
    if report.surface is None:
        raise ValueError("report has no dense surface (scan too large or not kept)")
    rows = 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# critical_value={report.critical_value:.6f}\n")
        fh.write(f"# Q_n={report.Q_n:.10g} t_hat={report.t_hat[0]},{report.t_hat[1]}\n")
        fh.write("k1,k2,Q\n")
        for k1, k2, q in report.iter_surface():
            fh.write(f"{k1},{k2},{q:.10g}\n")
            rows += 1
    return rows


def read_heatmap(path) -> tuple[NDArray[np.float64], dict[str, str]]:
    """Inverse of :func:`write_heatmap`: an ``(m, 3)`` array and the
    ``key=value`` metadata from the comment lines."""
    meta: dict[str, str] = {}
    data = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                for tok in line[1:].split():
                    k, _, v = tok.partition("=")
                    meta[k] = v
            elif line and not line.startswith("k1"):
                a, b, q = line.split(",")
                data.append((float(a), float(b), float(q)))
    return np.asarray(data, dtype=float).reshape(-1, 3), meta
