"""Replicated simulation study: built-in scenarios, empirical levels and
powers, break localisation and surface dumps."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from numpy.typing import NDArray

from epichange import critvals
from epichange.models import (
    EpidemicScenario,
    _as_theta,
    get_model,
    simulate,
    simulate_epidemic,
    validate_params,
)
from epichange.qmle import ConfigurationError
from epichange.scan import (
    DegenerateNormalizationError,
    ScanConfig,
    ScanError,
    ScanReport,
    run_scan,
    write_heatmap,
)

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20210531
DEFAULT_REPLICATIONS = 200
TAU = (0.3, 0.7)
RESULT_COLUMNS = ("scenario", "n", "rejection_rate", "mean_t1", "mean_t2",
                  "wall_time", "seed")

# Reference empirical rates for the built-in scenarios (200 replications,
# alpha = 0.05), keyed by (model, hypothesis, n).
REFERENCE_RATES: dict[tuple[str, str, int], float] = {
    ("ar1", "H0", 500): 0.025, ("ar1", "H0", 1000): 0.035,
    ("ar1", "H1", 500): 1.000, ("ar1", "H1", 1000): 1.000,
    ("arma11-zero", "H0", 500): 0.045, ("arma11-zero", "H0", 1000): 0.050,
    ("arma11-zero", "H1", 500): 0.760, ("arma11-zero", "H1", 1000): 0.990,
    ("arma11", "H0", 500): 0.065, ("arma11", "H0", 1000): 0.060,
    ("arma11", "H1", 500): 0.925, ("arma11", "H1", 1000): 1.000,
    ("arch1", "H0", 500): 0.035, ("arch1", "H0", 1000): 0.045,
    ("arch1", "H1", 500): 0.910, ("arch1", "H1", 1000): 0.995,
    ("garch11", "H0", 500): 0.080, ("garch11", "H0", 1000): 0.060,
    ("garch11", "H1", 500): 0.730, ("garch11", "H1", 1000): 0.920,
}

_BUILTIN_PARAMS: tuple[tuple[str, tuple[float, ...], tuple[float, ...]], ...] = (
    ("ar1", (813.0, 0.3), (933.0, 0.24)),
    ("arma11-zero", (-0.4, -0.25), (-0.4, 0.1)),
    ("arma11", (1.0, 0.15, 0.2), (1.0, 0.5, 0.2)),
    ("arch1", (0.6, 0.4), (0.2, 0.4)),
    ("garch11", (0.15, 0.3, 0.25), (0.15, 0.3, 0.55)),
)


@dataclass(frozen=True)
class Scenario:
    """A replicated experiment.

    ``theta2=None`` is the null (constant ``theta1``); otherwise the
    parameter switches to ``theta2`` on ``(floor(tau1 n), floor(tau2 n)]``.
    """

    name: str
    model: str
    theta1: tuple[float, ...]
    theta2: tuple[float, ...] | None
    n: int
    replications: int = DEFAULT_REPLICATIONS
    alpha: float = 0.05
    seed: int = DEFAULT_SEED
    tau1: float = TAU[0]
    tau2: float = TAU[1]

    @property
    def hypothesis(self) -> str:
        return "H0" if self.theta2 is None else "H1"

    @property
    def breaks(self) -> tuple[int, int] | None:
        if self.theta2 is None:
            return None
        return self.epidemic.breaks

    @property
    def epidemic(self) -> EpidemicScenario:
        th2 = self.theta1 if self.theta2 is None else self.theta2
        return EpidemicScenario(self.theta1, th2, self.tau1, self.tau2, self.n)

    @property
    def reference(self) -> float | None:
        return REFERENCE_RATES.get((get_model(self.model).family, self.hypothesis, self.n))

    def validate(self) -> None:
        model = get_model(self.model)
        _as_theta(model, self.theta1)
        if self.replications < 1:
            raise ConfigurationError("replications must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if self.theta2 is not None:
            _as_theta(model, self.theta2)
            if tuple(self.theta2) == tuple(self.theta1):
                raise ConfigurationError(
                    f"{self.name}: epidemic parameters must differ; use theta2=None for the null")
            self.epidemic.validate()

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        def vec(v):
            return "" if v is None else ", ".join(repr(float(a)) for a in v)

        return "\n".join([
            f"name = {self.name}",
            f"model = {get_model(self.model).family}",
            f"theta1 = {vec(self.theta1)}",
            f"theta2 = {vec(self.theta2)}",
            f"n = {self.n}",
            f"replications = {self.replications}",
            f"alpha = {self.alpha!r}",
            f"seed = {self.seed}",
            f"tau1 = {self.tau1!r}",
            f"tau2 = {self.tau2!r}",
        ]) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Scenario":
        kv: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            kv[key.strip()] = value.strip()
        missing = {"name", "model", "theta1", "n"} - kv.keys()
        if missing:
            raise ValueError(f"scenario file lacks {sorted(missing)}")

        def vec(s: str | None):
            if not s:
                return None
            return tuple(float(a) for a in s.replace(",", " ").split())

        s = cls(
            name=kv["name"], model=kv["model"], theta1=vec(kv["theta1"]),
            theta2=vec(kv.get("theta2")), n=int(kv["n"]),
            replications=int(kv.get("replications", DEFAULT_REPLICATIONS)),
            alpha=float(kv.get("alpha", 0.05)),
            seed=int(kv.get("seed", DEFAULT_SEED)),
            tau1=float(kv.get("tau1", TAU[0])), tau2=float(kv.get("tau2", TAU[1])))
        s.validate()
        return s

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> "Scenario":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


@dataclass
class ScenarioResult:
    """Aggregate of one scenario.

    Replications whose scan could not be completed count as failures and
    as non-rejections, so ``rejection_rate = rejections / replications``.
    ``t_hats`` and ``q_values`` hold every replication (NaN for failures);
    ``mean_t_hat`` averages over rejecting replications of an epidemic
    scenario only.
    """

    scenario: Scenario
    rejections: int
    failures: int
    q_values: NDArray[np.float64] = field(repr=False)
    t_hats: NDArray[np.float64] = field(repr=False)
    rejected: NDArray[np.bool_] = field(repr=False)
    critical_value: float
    wall_time: float

    @property
    def replications(self) -> int:
        return self.scenario.replications

    @property
    def rejection_rate(self) -> float:
        return self.rejections / self.replications

    @property
    def mean_t_hat(self) -> tuple[float, float] | None:
        if self.scenario.hypothesis == "H0" or not self.rejected.any():
            return None
        t = self.t_hats[self.rejected]
        return float(t[:, 0].mean()), float(t[:, 1].mean())

    def localisation_rate(self, tol: int) -> float:
        """Share of replications whose argmax is within ``tol`` of the true
        breaks in both coordinates (all replications, rejecting or not)."""
        b = self.scenario.breaks
        if b is None:
            raise ValueError("localisation needs an epidemic scenario")
        ok = np.all(np.abs(self.t_hats - np.asarray(b)) <= tol, axis=1)
        return float(np.count_nonzero(ok) / self.replications)

    def row(self) -> dict[str, object]:
        mt = self.mean_t_hat
        return {
            "scenario": self.scenario.name, "n": self.scenario.n,
            "rejection_rate": self.rejection_rate,
            "mean_t1": float("nan") if mt is None else mt[0],
            "mean_t2": float("nan") if mt is None else mt[1],
            "wall_time": self.wall_time, "seed": self.scenario.seed,
        }


def builtin_scenarios(replications: int = DEFAULT_REPLICATIONS,
                      seed: int = DEFAULT_SEED) -> list[Scenario]:
    """The 20 reference scenarios: five families, null and epidemic, at
    n = 500 and 1000."""
    out = []
    for fam, th0, th2 in _BUILTIN_PARAMS:
        for n in (500, 1000):
            out.append(Scenario(f"{fam}-level-{n}", fam, th0, None, n,
                                replications, 0.05, seed))
            out.append(Scenario(f"{fam}-power-{n}", fam, th0, th2, n,
                                replications, 0.05, seed))
    return out


def get_scenario(name: str, **changes) -> Scenario:
    for s in builtin_scenarios():
        if s.name == name:
            return s.replace(**changes) if changes else s
    raise KeyError(f"unknown scenario {name!r}")


def replication_seed(s: Scenario, index: int) -> np.random.SeedSequence:
    """Seed of replication ``index``: (master seed, scenario name, index)."""
    if not 0 <= index < s.replications:
        raise IndexError(f"replication {index} outside [0, {s.replications})")
    return np.random.SeedSequence([s.seed, zlib.crc32(s.name.encode()), index])


def simulate_replication(s: Scenario, index: int, *,
                         force_epidemic_path: bool = False) -> NDArray[np.float64]:
    """The series of replication ``index``.

    ``force_epidemic_path`` routes a null scenario through the epidemic
    simulator with ``theta2 = theta1``; the output is bit-identical.
    """
    rng = np.random.default_rng(replication_seed(s, index))
    if s.theta2 is None and not force_epidemic_path:
        return simulate(s.model, s.theta1, s.n, rng=rng)
    x, _, _ = simulate_epidemic(s.model, s.epidemic, rng=rng)
    return x


def _scan_config(s: Scenario, config: ScanConfig | None, crit: float) -> ScanConfig:
    base = config or ScanConfig()
    return dataclasses.replace(base, alpha=s.alpha, critical_value=crit,
                               refit_regimes=False)


def _one(args) -> tuple[float, int, int, bool]:
    s, index, cfg = args
    x = simulate_replication(s, index)
    try:
        r = run_scan(s.model, x, cfg)
    except (ScanError, DegenerateNormalizationError) as exc:
        logger.warning("%s replication %d failed: %s", s.name, index, exc)
        return math.nan, -1, -1, False
    return r.Q_n, r.t_hat[0], r.t_hat[1], r.reject


def run_scenario(s: Scenario, config: ScanConfig | None = None, *,
                 workers: int = 1, indices: Iterable[int] | None = None,
                 progress: Callable[[int, float], None] | None = None
                 ) -> ScenarioResult:
    """Simulate and test every replication of ``s``.

    ``config`` overrides the scan settings (windows, stride); its alpha and
    critical value are taken from the scenario and the critical-value
    table.  With ``workers > 1`` replications run in separate processes,
    each scan single-threaded; results do not depend on ``workers``.
    """
    t0 = time.perf_counter()
    s.validate()
    d = get_model(s.model).d
    crit = config.critical_value if config and config.critical_value is not None \
        else critvals.lookup(d, s.alpha)
    cfg = _scan_config(s, config, crit)
    if workers > 1:
        cfg = dataclasses.replace(cfg, workers=1)
    # fail fast on bad windows before spending any simulation time
    cfg.windows(s.n, d)
    idx = list(range(s.replications)) if indices is None else list(indices)
    jobs = [(s, i, cfg) for i in idx]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            out = list(ex.map(_one, jobs, chunksize=1))
    else:
        out = []
        for j in jobs:
            out.append(_one(j))
            if progress is not None:
                progress(j[1], out[-1][0])
    q = np.array([o[0] for o in out])
    t = np.array([(o[1], o[2]) for o in out], dtype=float)
    rej = np.array([o[3] for o in out], dtype=bool)
    t[~np.isfinite(q)] = np.nan
    sub = s if indices is None else s.replace(replications=len(idx))
    return ScenarioResult(sub, int(rej.sum()), int(np.count_nonzero(~np.isfinite(q))),
                          q, t, rej, float(crit), time.perf_counter() - t0)


def surface_dump(s: Scenario, replication_index: int, path: str | Path | None = None,
                 config: ScanConfig | None = None) -> ScanReport:
    """Full scan of one replication; with ``path``, also writes the
    long-form heatmap with the critical value in its header."""
    s.validate()
    x = simulate_replication(s, replication_index)
    d = get_model(s.model).d
    crit = config.critical_value if config and config.critical_value is not None \
        else critvals.lookup(d, s.alpha)
    cfg = dataclasses.replace(config or ScanConfig(), alpha=s.alpha, critical_value=crit)
    report = run_scan(s.model, x, cfg)
    if path is not None:
        write_heatmap(report, path)
    return report


def append_results(path: str | Path, results: Iterable[ScenarioResult]) -> None:
    """Append rows to a tab-separated results file, writing the header when
    the file is new."""
    p = Path(path)
    new = not p.exists() or p.stat().st_size == 0
    with p.open("a", encoding="utf-8") as fh:
        if new:
            fh.write("\t".join(RESULT_COLUMNS) + "\n")
        for r in results:
            row = r.row()
            fh.write("\t".join(_fmt(row[c]) for c in RESULT_COLUMNS) + "\n")


def read_results(path: str | Path) -> list[dict[str, object]]:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    header = lines[0].split("\t")
    rows = []
    for line in lines[1:]:
        vals = line.split("\t")
        row: dict[str, object] = {}
        for k, v in zip(header, vals):
            row[k] = v if k == "scenario" else (int(v) if k in ("n", "seed") else float(v))
        rows.append(row)
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def check_builtin_domain(r: float = 4.0) -> dict[str, bool]:
    """Which built-in scenarios have all their parameters in the moment
    region of order ``r`` (Gaussian innovations)."""
    out = {}
    for s in builtin_scenarios():
        thetas = [s.theta1] + ([s.theta2] if s.theta2 is not None else [])
        out[s.name] = all(validate_params(s.model, th, r=r) for th in thetas)
    return out
