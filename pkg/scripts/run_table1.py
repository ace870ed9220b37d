"""Empirical levels and powers of the built-in scenarios, next to the
reference rates.

    python3 scripts/run_table1.py [--fast] [--replications 200] [--workers 1]
                                  [--only garch11] [--out results/table1.tsv]
"""

from __future__ import annotations

import argparse
from pathlib import Path

from epichange import montecarlo as mc
from epichange.scan import ScanConfig

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "results" / "table1.tsv"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fast", action="store_true", help="scan every 4th row and column")
    ap.add_argument("--replications", type=int, default=mc.DEFAULT_REPLICATIONS)
    ap.add_argument("--seed", type=int, default=mc.DEFAULT_SEED)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--only", default=None, help="restrict to one family")
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = ap.parse_args()

    cfg = ScanConfig(stride=4 if args.fast else 1)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    print(f"{'scenario':24s} {'rate':>6s} {'ref':>6s} {'mean t1':>8s} {'mean t2':>8s} {'s':>7s}")
    for s in mc.builtin_scenarios(args.replications, args.seed):
        if args.only and s.model != args.only:
            continue
        r = mc.run_scenario(s, cfg, workers=args.workers)
        row = r.row()
        print(f"{s.name:24s} {r.rejection_rate:6.3f} {s.reference:6.3f} "
              f"{row['mean_t1']:8.1f} {row['mean_t2']:8.1f} {r.wall_time:7.1f}", flush=True)
        mc.append_results(args.out, [r])


if __name__ == "__main__":
    main()
