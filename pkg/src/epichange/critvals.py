"""Monte-Carlo quantiles of ``sup_{s<t} ||W(s) - W(t)||^2`` for a
d-dimensional Brownian bridge ``W``."""

from __future__ import annotations

import functools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from epichange import _kernels as K

DEFAULT_M = 512
DEFAULT_R = 100_000
DEFAULT_SEED = 20210531
BLOCK = 1000
ALPHAS = (0.01, 0.05, 0.10)
TABLE_RESOURCE = "critical_values.txt"


def sample_sup_bridge(d: int, m: int, rng: np.random.Generator) -> float:
    """One draw of the discretised sup on the grid ``{j/m}``."""
    if d < 1 or m < 64:
        raise ValueError("need d >= 1 and m >= 64")
    incr = rng.standard_normal((m, d)) / math.sqrt(m)
    return float(K.bridge_sup(incr, d))


def _block(args: tuple[int, int, int, int, int]) -> NDArray[np.float64]:
    d, m, seed, b, size = args
    rng = np.random.default_rng(np.random.SeedSequence([seed, d, b]))
    incr = rng.standard_normal((size, m, d)) / math.sqrt(m)
    return K.bridge_sup_batch(incr)


@functools.lru_cache(maxsize=32)
def _samples(d: int, R: int, m: int, seed: int, workers: int) -> NDArray[np.float64]:
    jobs = []
    for b in range(math.ceil(R / BLOCK)):
        jobs.append((d, m, seed, b, min(BLOCK, R - b * BLOCK)))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_block, jobs))
    else:
        parts = [_block(j) for j in jobs]
    out = np.concatenate(parts)
    out.setflags(write=False)
    return out


def simulate_sup(d: int, R: int = DEFAULT_R, m: int = DEFAULT_M,
                 seed: int = DEFAULT_SEED, workers: int = 1) -> NDArray[np.float64]:
    """``R`` independent draws; block ``b`` of 1000 draws is seeded from
    ``(seed, d, b)`` so the result does not depend on ``workers``."""
    if d < 1 or m < 64 or R < 1:
        raise ValueError("need d >= 1, m >= 64, R >= 1")
    return _samples(int(d), int(R), int(m), int(seed), int(workers))


def quantile_se(samples: NDArray[np.float64], p: float) -> float:
    """Standard error of the empirical p-quantile from a difference-quotient
    estimate of the sparsity 1/f at that quantile."""
    r = samples.size
    xs = np.sort(samples)
    h = max(1, int(math.sqrt(r)))
    k = int(round(p * r))
    lo, hi = max(0, k - h), min(r - 1, k + h)
    sparsity = (xs[hi] - xs[lo]) / ((hi - lo) / r)
    return float(sparsity * math.sqrt(p * (1 - p) / r))


def critical_value(d: int, alpha: float, R: int = DEFAULT_R, m: int = DEFAULT_M,
                   seed: int = DEFAULT_SEED, workers: int = 1) -> float:
    """Empirical ``(1 - alpha)`` quantile of ``R`` simulated sups."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    s = simulate_sup(d, R, m, seed, workers)
    return float(np.quantile(s, 1 - alpha))


def p_value(q: float, d: int, R: int = DEFAULT_R, m: int = DEFAULT_M,
            seed: int = DEFAULT_SEED, workers: int = 1) -> float:
    """``(#{samples >= q} + 1) / (R + 1)``."""
    if q < 0:
        raise ValueError("q must be >= 0")
    s = simulate_sup(d, R, m, seed, workers)
    return float((np.count_nonzero(s >= q) + 1) / (s.size + 1))


@dataclass
class CriticalValueTable:
    entries: dict[tuple[int, float], float]
    m: int
    R: int
    seed: int
    standard_error: dict[tuple[int, float], float] = field(default_factory=dict)

    def __getitem__(self, key: tuple[int, float]) -> float:
        d, alpha = key
        return self.entries[(int(d), round(float(alpha), 6))]

    def to_text(self) -> str:
        lines = ["d\talpha\tc\tse\tm\tR\tseed"]
        for (d, a) in sorted(self.entries):
            se = self.standard_error.get((d, a), float("nan"))
            lines.append(f"{d}\t{a:.6f}\t{self.entries[(d, a)]:.6f}\t{se:.6f}\t"
                         f"{self.m}\t{self.R}\t{self.seed}")
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "CriticalValueTable":
        rows = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
        header, body = rows[0], rows[1:]
        if header[:4] != ["d", "alpha", "c", "se"]:
            raise ValueError("unrecognised critical value table header")
        entries, ses = {}, {}
        m = r = seed = 0
        for row in body:
            d, a = int(row[0]), round(float(row[1]), 6)
            entries[(d, a)] = float(row[2])
            ses[(d, a)] = float(row[3])
            m, r, seed = int(row[4]), int(row[5]), int(row[6])
        return cls(entries, m, r, seed, ses)

    @classmethod
    def read(cls, path: str | Path) -> "CriticalValueTable":
        return cls.from_text(Path(path).read_text())


def build_table(dims=range(1, 6), alphas=ALPHAS, R: int = DEFAULT_R,
                m: int = DEFAULT_M, seed: int = DEFAULT_SEED,
                workers: int = 1) -> CriticalValueTable:
    entries, ses = {}, {}
    for d in dims:
        s = simulate_sup(d, R, m, seed, workers)
        for a in alphas:
            key = (int(d), round(float(a), 6))
            entries[key] = float(np.quantile(s, 1 - a))
            ses[key] = quantile_se(s, 1 - a)
    return CriticalValueTable(entries, m, R, seed, ses)


@functools.lru_cache(maxsize=1)
def shipped_table() -> CriticalValueTable:
    text = resources.files("epichange.data").joinpath(TABLE_RESOURCE).read_text()
    return CriticalValueTable.from_text(text)


def lookup(d: int, alpha: float) -> float:
    """Tabulated value when available, otherwise simulated with defaults."""
    try:
        return shipped_table()[(d, alpha)]
    except (KeyError, FileNotFoundError):
        return critical_value(d, alpha)
