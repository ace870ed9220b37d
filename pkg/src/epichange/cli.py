"""Command-line front end.

    epichange test SERIES.csv --model ar1 [--alpha 0.05] [--heatmap H.csv]
    epichange simulate --model garch11 --theta 0.15,0.3,0.25 --n 500 --out X.csv
    epichange critvals [--fast] --out TABLE.txt
    epichange table1 [--fast] --out RESULTS.tsv
    epichange fetch-co --out co.csv

Exit codes: 0 no rejection (or success), 1 rejection, 2 error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import io
import json
import logging
import math
import sys
import urllib.request
import zipfile
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from epichange import critvals, montecarlo as mc
from epichange.models import (
    DomainError,
    EpidemicScenario,
    FAMILIES,
    constraint_violations,
    get_model,
    simulate,
    simulate_epidemic,
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

logger = logging.getLogger("epichange")

MIN_LENGTH = 30
EXIT_OK, EXIT_REJECT, EXIT_ERROR = 0, 1, 2
# bridge draws behind a reported p-value; the decision uses the table
P_VALUE_R = 20_000

CO_URL = ("https://rss.onlinelibrary.wiley.com/pb-assets/hub-assets/rss/Datasets/"
          "RSSC%2067.2/C1239deSouza-1531120585220.zip")
CO_PERIOD = (dt.date(2009, 9, 11), dt.date(2010, 12, 9))
# digest of the downloaded archive; unknown until the first successful fetch
CO_SHA256: str | None = None


class IngestError(ValueError):
    """Unreadable or unusable input series."""


class FetchError(RuntimeError):
    """The real-data archive could not be obtained or parsed."""


def ingest_csv(path: str | Path, min_length: int = MIN_LENGTH) -> NDArray[np.float64]:
    """Read a single numeric column; row order is time order.

    A non-numeric first line is taken as a header.  Blank lines are
    skipped; any other unparsable or missing value is an error naming its
    line.
    """
    p = Path(path)
    if not p.exists():
        raise IngestError(f"{p}: no such file")
    values: list[float] = []
    first = True
    with p.open(encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            cells = [c.strip() for c in row]
            if not any(cells):
                continue
            if len([c for c in cells if c]) > 1 or len(cells) > 1 and cells[0] == "":
                raise IngestError(f"{p}:{lineno}: expected one column, got {len(cells)}")
            cell = cells[0]
            try:
                v = float(cell)
            except ValueError:
                if first:
                    first = False
                    continue
                raise IngestError(f"{p}:{lineno}: not a number: {cell!r}") from None
            first = False
            if not math.isfinite(v):
                raise IngestError(f"{p}:{lineno}: missing or non-finite value {cell!r}")
            values.append(v)
    if len(values) < min_length:
        raise IngestError(f"{p}: {len(values)} observations; need at least {min_length}")
    return np.asarray(values, dtype=np.float64)


def write_series(path: str | Path, x: NDArray[np.float64]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x\n")
        for v in x:
            fh.write(f"{float(v)!r}\n")


# -- reports -----------------------------------------------------------------

def build_report(report: ScanReport, config: dict) -> dict:
    """Flat, ordered report; ``config`` holds everything needed to rerun."""
    d = get_model(report.model).d
    out: dict[str, object] = {
        "model": report.model, "n": report.n, "u_n": report.u_n,
        "v_n": report.v_n, "stride": report.stride, "alpha": report.alpha,
        "Q_n": report.Q_n, "critical_value": report.critical_value,
        "p_value": critvals.p_value(report.Q_n, d, R=P_VALUE_R),
        "reject": report.reject,
        "t_hat": list(report.t_hat),
        "n_pairs": report.n_pairs, "failed_pairs": report.failed_pairs,
        "sigma_segments_used": list(report.sigma.used_segments),
    }
    names = get_model(report.model).names
    for i, f in enumerate(report.regime_fits, 1):
        se = f.std_errors
        out[f"regime{i}.segment"] = [f.segment.lo, f.segment.hi]
        for j, name in enumerate(names):
            out[f"regime{i}.{name}"] = float(f.theta_hat[j])
            out[f"regime{i}.{name}.se"] = float(se[j])
        out[f"regime{i}.neg_qlik"] = f.neg_qlik
        out[f"regime{i}.converged"] = f.converged
    for k, v in config.items():
        out[f"config.{k}"] = v
    out["wall_time"] = report.wall_time
    return out


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt_value(a) for a in v)
    return "" if v is None else str(v)


def format_kv(rep: dict) -> str:
    return "".join(f"{k} = {_fmt_value(v)}\n" for k, v in rep.items())


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if "=" in line and not line.lstrip().startswith("#"):
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


def config_from_report(path: str | Path) -> dict[str, str]:
    """The ``config.*`` entries of a key-value or JSON report."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        blob = json.loads(text)
        return {k[7:]: _fmt_value(v) for k, v in blob.items() if k.startswith("config.")}
    return {k[7:]: v for k, v in parse_kv(text).items() if k.startswith("config.")}


# -- subcommands ---------------------------------------------------------------

def _scan_config(args) -> ScanConfig:
    return ScanConfig(u_n=args.un, v_n=args.vn, alpha=args.alpha,
                      stride=args.stride, workers=args.workers)


def cmd_test(args) -> int:
    if args.replay:
        cfg = config_from_report(args.replay)
        args.input = args.input or cfg.get("input")
        args.model = args.model or cfg.get("model")
        args.alpha = float(cfg.get("alpha", args.alpha))
        args.un = int(cfg["un"]) if cfg.get("un") else None
        args.vn = int(cfg["vn"]) if cfg.get("vn") else None
        args.stride = int(cfg.get("stride", args.stride))
    if args.model is None:
        raise UsageError("test needs --model")
    if args.input is None:
        raise UsageError("test needs an input series")
    x = ingest_csv(args.input)
    report = run_scan(args.model, x, _scan_config(args))
    config = {"command": "test", "input": str(args.input), "model": report.model,
              "alpha": args.alpha, "un": args.un, "vn": args.vn,
              "stride": args.stride}
    rep = build_report(report, config)
    _emit(args, rep)
    if args.heatmap:
        write_heatmap(report, args.heatmap)
    return EXIT_REJECT if report.reject else EXIT_OK


def _emit(args, rep: dict) -> None:
    text = json.dumps(rep, indent=1) + "\n" if args.format == "json" else format_kv(rep)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _parse_vec(s: str | None) -> tuple[float, ...] | None:
    if s is None or not s.strip():
        return None
    return tuple(float(a) for a in s.replace(";", ",").split(",") if a.strip())


def cmd_simulate(args) -> int:
    if args.from_meta:
        meta = parse_kv(Path(args.from_meta).read_text(encoding="utf-8"))
        args.model = meta["model"]
        args.theta = meta["theta1"]
        args.theta2 = meta.get("theta2") or None
        args.n = int(meta["n"])
        args.seed = int(meta["seed"])
        args.tau1 = float(meta.get("tau1", args.tau1))
        args.tau2 = float(meta.get("tau2", args.tau2))
        args.burn_in = int(meta.get("burn_in", args.burn_in))
    if args.model is None or args.theta is None or args.n is None:
        raise UsageError("simulate needs --model, --theta and --n")
    if args.out is None:
        raise UsageError("simulate needs --out")
    model = get_model(args.model)
    th1 = _parse_vec(args.theta)
    th2 = _parse_vec(args.theta2)
    for th in (th1, th2):
        if th is not None:
            bad = constraint_violations(model, th) if len(th) == model.d else \
                [f"{model.family} takes {model.d} parameters, got {len(th)}"]
            if bad:
                raise DomainError(f"{model.family} theta={list(th)}: " + "; ".join(bad))
    rng = np.random.default_rng(args.seed)
    breaks = None
    if th2 is None:
        x = simulate(model, th1, args.n, burn_in=args.burn_in, rng=rng)
    else:
        scen = EpidemicScenario(th1, th2, args.tau1, args.tau2, args.n)
        x, t1, t2 = simulate_epidemic(model, scen, burn_in=args.burn_in, rng=rng)
        breaks = (t1, t2)
    write_series(args.out, x)
    meta = {"model": model.family, "theta1": list(th1),
            "theta2": list(th2) if th2 else None, "n": args.n, "seed": args.seed,
            "burn_in": args.burn_in, "tau1": args.tau1, "tau2": args.tau2,
            "breaks": list(breaks) if breaks else None,
            "sha256": hashlib.sha256(Path(args.out).read_bytes()).hexdigest()}
    Path(str(args.out) + ".meta").write_text(format_kv(meta), encoding="utf-8")
    return EXIT_OK


def cmd_critvals(args) -> int:
    R = 10_000 if args.fast else args.R
    table = critvals.build_table(range(1, args.dmax + 1), R=R, m=args.m,
                                 seed=args.seed if args.seed is not None else critvals.DEFAULT_SEED,
                                 workers=args.workers or 1)
    text = table.to_text()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_table1(args) -> int:
    stride = 4 if args.fast else args.stride
    seed = args.seed if args.seed is not None else mc.DEFAULT_SEED
    scenarios = mc.builtin_scenarios(args.replications, seed)
    if args.model:
        fam = get_model(args.model).family
        scenarios = [s for s in scenarios if s.model == fam]
    results = []
    cfg = ScanConfig(u_n=args.un, v_n=args.vn, stride=stride)
    print(f"{'scenario':24s} {'n':>5s} {'rate':>7s} {'reference':>9s} {'mean_t1':>8s} "
          f"{'mean_t2':>8s} {'fail':>4s} {'seconds':>8s}")
    for s in scenarios:
        r = mc.run_scenario(s, cfg, workers=args.workers or 1)
        results.append(r)
        row = r.row()
        print(f"{s.name:24s} {s.n:5d} {r.rejection_rate:7.3f} {s.reference:9.3f} "
              f"{row['mean_t1']:8.1f} {row['mean_t2']:8.1f} {r.failures:4d} "
              f"{r.wall_time:8.1f}", flush=True)
        if args.out:
            mc.append_results(args.out, [r])
    return EXIT_OK


def cmd_fetch_co(args) -> int:
    out = Path(args.out or "co.csv")
    x = fetch_co(out)
    print(f"wrote {x.size} observations to {out}")
    return EXIT_OK


# -- real data -------------------------------------------------------------------

def fetch_co(dest: str | Path, url: str = CO_URL, timeout: float = 60.0) -> NDArray[np.float64]:
    """Download the air-quality archive and write the daily CO series.

    Daily values are the mean over monitoring stations of the CO column for
    each date in the study period; days with no station reading are
    dropped.  The archive's SHA-256 is written next to ``dest``.
    """
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            blob = resp.read()
    except OSError as exc:
        raise FetchError(f"download failed: {exc}") from exc
    digest = hashlib.sha256(blob).hexdigest()
    if CO_SHA256 is not None and digest != CO_SHA256:
        raise FetchError(f"archive checksum {digest} differs from {CO_SHA256}")
    try:
        series = _extract_co(blob)
    except (KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise FetchError(f"could not parse archive: {exc}") from exc
    dest = Path(dest)
    write_series(dest, series)
    Path(str(dest) + ".sha256").write_text(f"{digest}  {url}\n", encoding="utf-8")
    return series


def _extract_co(blob: bytes) -> NDArray[np.float64]:
    zf = zipfile.ZipFile(io.BytesIO(blob))
    for name in zf.namelist():
        if not name.lower().endswith((".csv", ".txt")):
            continue
        text = zf.read(name).decode("utf-8", errors="replace")
        dialect = csv.Sniffer().sniff(text[:4096], delimiters=",;\t")
        rows = list(csv.reader(io.StringIO(text), dialect))
        header = [h.strip().lower() for h in rows[0]]
        co_cols = [i for i, h in enumerate(header) if h == "co" or h.startswith("co_") or h.startswith("co.")]
        date_cols = [i for i, h in enumerate(header) if "date" in h or h in ("data", "day")]
        if not co_cols or not date_cols:
            continue
        daily: dict[dt.date, list[float]] = {}
        for row in rows[1:]:
            day = _parse_date(row[date_cols[0]])
            if day is None or not CO_PERIOD[0] <= day <= CO_PERIOD[1]:
                continue
            for i in co_cols:
                try:
                    v = float(row[i].replace(",", "."))
                except (ValueError, IndexError):
                    continue
                if math.isfinite(v):
                    daily.setdefault(day, []).append(v)
        if daily:
            return np.array([np.mean(daily[k]) for k in sorted(daily)])
    raise ValueError("no file with a date column and a CO column")


def _parse_date(s: str) -> dt.date | None:
    s = s.strip().split(" ")[0]
    for fmt in ("%Y-%m-%d", "%d/%m/%Y", "%m/%d/%Y", "%d-%m-%Y", "%Y/%m/%d"):
        try:
            return dt.datetime.strptime(s, fmt).date()
        except ValueError:
            continue
    return None


# -- argument parsing ------------------------------------------------------------

class UsageError(ValueError):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=sorted(FAMILIES), default=None)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--un", type=int, default=None, help="normalisation window u_n")
    p.add_argument("--vn", type=int, default=None, help="minimum margin and gap v_n")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--fast", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="epichange", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="scan a series for an epidemic change")
    _common(p)
    p.add_argument("input", nargs="?", default=None)
    p.add_argument("--heatmap", default=None, help="long-form k1,k2,Q surface")
    p.add_argument("--format", choices=("kv", "json"), default="kv")
    p.add_argument("--replay", default=None, help="rerun with the config recorded in a report")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("simulate", help="write a simulated series and its metadata")
    _common(p)
    p.add_argument("--theta", default=None)
    p.add_argument("--theta2", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--tau1", type=float, default=mc.TAU[0])
    p.add_argument("--tau2", type=float, default=mc.TAU[1])
    p.add_argument("--burn-in", type=int, default=500)
    p.add_argument("--from-meta", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("critvals", help="simulate the critical-value table")
    _common(p)
    p.add_argument("--R", type=int, default=critvals.DEFAULT_R)
    p.add_argument("--m", type=int, default=critvals.DEFAULT_M)
    p.add_argument("--dmax", type=int, default=5)
    p.set_defaults(func=cmd_critvals)

    p = sub.add_parser("table1", help="empirical levels and powers of the built-in scenarios")
    _common(p)
    p.add_argument("--replications", type=int, default=mc.DEFAULT_REPLICATIONS)
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("fetch-co", help="download the daily CO series")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fetch_co)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    alpha = getattr(args, "alpha", 0.5)
    if not 0 < alpha < 1:
        print("error: --alpha must lie in (0, 1)", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
    except (IngestError, ConfigurationError, DomainError, DegenerateNormalizationError,
            ScanError, FetchError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
