"""Causal model families, their truncated conditional moments and simulation.

Each family is written as ``X_t = M(past) * xi_t + f(past)``.  The truncated
moments replace the unobserved pre-sample past by zeros, and are computed
by O(1)-per-step recursions that reproduce the zero-padded expansions
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from epichange import _kernels as K

EPS_MARGIN = 1e-3
EPS_POS = 1e-6
COEF_MAX = 0.999

Innovation = Literal["normal", "uniform"]


class DomainError(ValueError):
    """Parameter vector outside the family's admissible region."""


@dataclass(frozen=True)
class ModelSpec:
    """One of the five supported families.

    Attributes
    ----------
    family : str
        Canonical name (``ar1``, ``arma11``, ``arma11-zero``, ``arch1``,
        ``garch11``).
    code : int
        Kernel dispatch code.
    d : int
        Parameter dimension.
    kind : str
        ``mean`` (unit conditional variance) or ``variance`` (zero
        conditional mean).
    names : tuple of str
        Parameter labels in order.
    """

    family: str
    code: int
    d: int
    kind: str
    names: tuple[str, ...]

    def __str__(self) -> str:
        return self.family

    def constraints(self, r: float = 2.0, innovation_norm_r: float = 1.0
                    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Linear description ``A theta <= b`` of the closed, shrunken region.

        For variance families the stationarity bound is scaled by the
        squared ``r``-norm of the innovation.
        """
        s = innovation_norm_r ** 2
        cap = 1.0 - EPS_MARGIN
        if self.code == K.AR1:
            a = [[0.0, 1.0], [0.0, -1.0]]
            b = [cap, cap]
        elif self.code in (K.ARMA11, K.ARMA11_ZERO):
            rows = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]
            if self.code == K.ARMA11:
                rows = [[0.0, *r_] for r_ in rows]
            a = rows
            b = [cap] * 4
        elif self.code == K.ARCH1:
            a = [[-1.0, 0.0], [0.0, -1.0], [0.0, s]]
            b = [-EPS_POS, 0.0, min(cap, s * COEF_MAX)]
        else:
            a = [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0],
                 [0.0, s, s]]
            b = [-EPS_POS, 0.0, 0.0, min(cap, s * COEF_MAX)]
        return np.asarray(a, dtype=float), np.asarray(b, dtype=float)


FAMILIES: dict[str, ModelSpec] = {
    "ar1": ModelSpec("ar1", K.AR1, 2, "mean", ("a0", "a1")),
    "arma11": ModelSpec("arma11", K.ARMA11, 3, "mean", ("a0", "a1", "b1")),
    "arma11-zero": ModelSpec("arma11-zero", K.ARMA11_ZERO, 2, "mean",
                             ("a1", "b1")),
    "arch1": ModelSpec("arch1", K.ARCH1, 2, "variance", ("a0", "a1")),
    "garch11": ModelSpec("garch11", K.GARCH11, 3, "variance",
                         ("a0", "a1", "b1")),
}

_ALIASES = {
    "ar1-mean": "ar1",
    "arma11-mean": "arma11",
    "arma11_zero": "arma11-zero",
}


def get_model(name: str | ModelSpec) -> ModelSpec:
    if isinstance(name, ModelSpec):
        return name
    key = name.strip().lower()
    key = _ALIASES.get(key, key)
    try:
        return FAMILIES[key]
    except KeyError:
        raise ValueError(
            f"unknown model {name!r}; choose from {sorted(FAMILIES)}"
        ) from None


def as_series(values: ArrayLike) -> NDArray[np.float64]:
    """Validate and return a contiguous float64 copy of a series."""
    x = np.ascontiguousarray(values, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError(f"series needs at least 2 observations, got {x.size}")
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(x))[0]) + 1
        raise ValueError(f"non-finite observation at t={bad}")
    return x


def _as_theta(model: ModelSpec, theta: ArrayLike) -> NDArray[np.float64]:
    th = np.ascontiguousarray(theta, dtype=np.float64).ravel()
    if th.size != model.d:
        raise ValueError(
            f"{model.family} takes {model.d} parameters, got {th.size}")
    return th


def innovation_norm(r: float, innovation: Innovation = "normal") -> float:
    """``(E|xi|^r)^(1/r)`` for a unit-variance innovation law."""
    if innovation == "normal":
        moment = 2 ** (r / 2) * math.gamma((r + 1) / 2) / math.sqrt(math.pi)
    elif innovation == "uniform":
        moment = 3 ** (r / 2) / (r + 1)
    else:
        raise ValueError(f"unknown innovation law {innovation!r}")
    return moment ** (1.0 / r)


def constraint_violations(model: ModelSpec, theta: ArrayLike, r: float = 2.0,
                          innovation_norm_r: float | None = None,
                          closed: bool = False) -> list[str]:
    """Human-readable list of violated constraints (empty when admissible).

    ``closed=True`` accepts points on the boundary of the shrunken region,
    which is where boundary fits land.
    """
    th = _as_theta(model, theta)
    if innovation_norm_r is None:
        innovation_norm_r = innovation_norm(r)
    out = []
    if not np.all(np.isfinite(th)):
        return ["parameters must be finite"]
    cap = 1.0 - EPS_MARGIN
    if model.kind == "mean":
        if model.code == K.AR1:
            a1, b1 = th[1], 0.0
        else:
            a1, b1 = th[-2], th[-1]
        if _exceeds(abs(a1) + abs(b1), cap, closed):
            out.append(f"|a1| + |b1| = {abs(a1) + abs(b1):.6g} must be < {cap}")
    else:
        a0, a1 = th[0], th[1]
        b1 = th[2] if model.code == K.GARCH11 else 0.0
        if a0 < EPS_POS * (1 - 1e-9):
            out.append(f"a0 = {a0:.6g} must be >= {EPS_POS}")
        if a1 < -1e-12:
            out.append(f"a1 = {a1:.6g} must be >= 0")
        if b1 < -1e-12:
            out.append(f"b1 = {b1:.6g} must be >= 0")
        if _exceeds(max(a1, b1), COEF_MAX, True):
            out.append(f"coefficients must be <= {COEF_MAX}")
        lhs = innovation_norm_r ** 2 * (a1 + b1)
        if _exceeds(lhs, cap, closed):
            out.append(
                f"||xi||_{r:g}^2 * (a1 + b1) = {lhs:.6g} must be < {cap}")
    return out


def _exceeds(lhs: float, cap: float, closed: bool) -> bool:
    return lhs > cap + 1e-12 if closed else lhs >= cap


def validate_params(model: ModelSpec | str, theta: ArrayLike, r: float = 2.0,
                    innovation_norm_r: float | None = None) -> bool:
    """Whether ``theta`` lies in the family's moment region of order ``r``.

    ``innovation_norm_r`` defaults to the Gaussian ``||xi||_r``.
    """
    if r < 1:
        raise ValueError("moment order r must be >= 1")
    model = get_model(model)
    return not constraint_violations(model, theta, r, innovation_norm_r)


def _check(model: ModelSpec, theta: NDArray[np.float64], r: float = 2.0) -> None:
    bad = constraint_violations(model, theta, r, closed=True)
    if bad:
        raise DomainError(f"{model.family} theta={theta.tolist()}: " + "; ".join(bad))


def conditional_moments(model: ModelSpec | str, theta: ArrayLike,
                        x: ArrayLike, t: int) -> tuple[float, float]:
    """Truncated conditional mean and variance at time ``t`` (1-based).

    Only ``X_1 .. X_{t-1}`` enter; earlier values are taken as zero.
    """
    model = get_model(model)
    th = _as_theta(model, theta)
    xs = as_series(x)
    if not 1 <= t <= xs.size:
        raise IndexError(f"t={t} outside [1, {xs.size}]")
    _check(model, th)
    mf, mh, *_ = K.moment_path(model.code, th, xs, t, t)
    return float(mf[0]), float(mh[0])


def moment_path(model: ModelSpec | str, theta: ArrayLike, x: ArrayLike,
                lo: int = 1, hi: int | None = None):
    """Moments and derivatives for every ``t`` in ``[lo, hi]``.

    Returns ``(f, h, grad_f, grad_h, hess_f, hess_h)`` with leading axis over
    time.
    """
    model = get_model(model)
    th = _as_theta(model, theta)
    xs = as_series(x)
    hi = xs.size if hi is None else hi
    if not 1 <= lo <= hi <= xs.size:
        raise IndexError(f"[{lo}, {hi}] outside [1, {xs.size}]")
    _check(model, th)
    return K.moment_path(model.code, th, xs, lo, hi)


def moment_derivatives(model: ModelSpec | str, theta: ArrayLike, x: ArrayLike,
                       t: int):
    """``(grad_f, hess_f, grad_h, hess_h)`` of the truncated moments at ``t``."""
    model = get_model(model)
    xs = as_series(x)
    if not 1 <= t <= xs.size:
        raise IndexError(f"t={t} outside [1, {xs.size}]")
    _, _, df, dh, d2f, d2h = moment_path(model, theta, xs, t, t)
    return df[0], d2f[0], dh[0], d2h[0]


def _innovations(rng: np.random.Generator, size: int,
                 innovation: Innovation) -> NDArray[np.float64]:
    if innovation == "normal":
        return rng.standard_normal(size)
    if innovation == "uniform":
        s = math.sqrt(3.0)
        return rng.uniform(-s, s, size)
    raise ValueError(f"unknown innovation law {innovation!r}")


def simulate(model: ModelSpec | str, theta: ArrayLike, n: int,
             burn_in: int = 500, rng: np.random.Generator | int | None = None,
             innovation: Innovation = "normal") -> NDArray[np.float64]:
    """Last ``n`` values of a trajectory started from the zero state."""
    model = get_model(model)
    th = _as_theta(model, theta)
    _check(model, th)
    if burn_in < 0 or n < 1:
        raise ValueError("need n >= 1 and burn_in >= 0")
    rng = np.random.default_rng(rng)
    xi = _innovations(rng, burn_in + n, innovation)
    regime = np.zeros(burn_in + n, dtype=np.int64)
    path = K.simulate_path(model.code, th[None, :], regime, xi)
    return path[burn_in:]


@dataclass(frozen=True)
class EpidemicScenario:
    """Parameter switches from ``theta1`` to ``theta2`` on ``(t1, t2]``."""

    theta1: tuple[float, ...]
    theta2: tuple[float, ...]
    tau1: float
    tau2: float
    n: int

    @property
    def breaks(self) -> tuple[int, int]:
        return math.floor(self.n * self.tau1), math.floor(self.n * self.tau2)

    def validate(self) -> None:
        if not 0 < self.tau1 < self.tau2 < 1:
            raise DomainError(f"need 0 < tau1 < tau2 < 1, got ({self.tau1}, {self.tau2})")
        t1, t2 = self.breaks
        if not 1 < t1 < t2 < self.n:
            raise DomainError(f"breaks ({t1}, {t2}) must satisfy 1 < t1 < t2 < n={self.n}")


def simulate_epidemic(model: ModelSpec | str, scen: EpidemicScenario,
                      burn_in: int = 500,
                      rng: np.random.Generator | int | None = None,
                      innovation: Innovation = "normal"
                      ) -> tuple[NDArray[np.float64], int, int]:
    """One continuous trajectory with an epidemic window ``(t1, t2]``.

    The recursion state is carried across the regime boundaries.  Equal
    parameters reproduce :func:`simulate` exactly for the same seed.
    """
    model = get_model(model)
    th1 = _as_theta(model, scen.theta1)
    th2 = _as_theta(model, scen.theta2)
    _check(model, th1)
    _check(model, th2)
    scen.validate()
    t1, t2 = scen.breaks
    n = scen.n
    rng = np.random.default_rng(rng)
    xi = _innovations(rng, burn_in + n, innovation)
    regime = np.zeros(burn_in + n, dtype=np.int64)
    regime[burn_in + t1:burn_in + t2] = 1
    path = K.simulate_path(model.code, np.vstack([th1, th2]), regime, xi)
    return path[burn_in:], t1, t2
