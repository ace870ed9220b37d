"""Regenerate the shipped critical-value table.

    python3 scripts/make_critvals.py [--R 100000] [--m 512] [--out PATH]
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

from epichange import critvals

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "epichange" / "data" / critvals.TABLE_RESOURCE


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--R", type=int, default=critvals.DEFAULT_R)
    ap.add_argument("--m", type=int, default=critvals.DEFAULT_M)
    ap.add_argument("--seed", type=int, default=critvals.DEFAULT_SEED)
    ap.add_argument("--dmax", type=int, default=5)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = ap.parse_args()
    t0 = time.perf_counter()
    table = critvals.build_table(range(1, args.dmax + 1), R=args.R, m=args.m,
                                 seed=args.seed, workers=args.workers)
    table.write(args.out)
    print(table.to_text(), end="")
    print(f"# wrote {args.out} in {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
