"""Q surface of one replication of a built-in scenario, written as a
long-form CSV and, when matplotlib is installed, a heatmap image.

    python3 scripts/surface_heatmap.py [--scenario arma11-zero-power-500]
                                       [--replication 0] [--outdir results]
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from epichange import montecarlo as mc
from epichange.scan import read_heatmap

DEFAULT_DIR = Path(__file__).resolve().parents[1] / "results"


def plot(csv_path: Path, png_path: Path, breaks) -> bool:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return False
    data, meta = read_heatmap(csv_path)
    k1, k2, q = data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2]
    grid = np.full((k1.max() + 1, k2.max() + 1), np.nan)
    grid[k1, k2] = q
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(grid.T, origin="lower", aspect="auto", cmap="viridis")
    fig.colorbar(im, ax=ax, label="Q")
    crit = float(meta["critical_value"])
    ax.contour(grid.T, levels=[crit], colors="white", linewidths=0.8)
    t1, t2 = (int(a) for a in meta["t_hat"].split(","))
    ax.plot(t1, t2, "r+", ms=12, label="argmax")
    if breaks:
        ax.plot(*breaks, "wx", ms=10, label="true breaks")
    ax.set_xlabel("k1")
    ax.set_ylabel("k2")
    ax.legend(loc="lower right")
    fig.savefig(png_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return True


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="arma11-zero-power-500")
    ap.add_argument("--replication", type=int, default=0)
    ap.add_argument("--outdir", type=Path, default=DEFAULT_DIR)
    args = ap.parse_args()
    s = mc.get_scenario(args.scenario)
    args.outdir.mkdir(parents=True, exist_ok=True)
    stem = args.outdir / f"surface-{s.name}-{args.replication}"
    report = mc.surface_dump(s, args.replication, stem.with_suffix(".csv"))
    print(f"Q_n={report.Q_n:.3f} t_hat={report.t_hat} c={report.critical_value:.3f} "
          f"breaks={s.breaks}")
    if plot(stem.with_suffix(".csv"), stem.with_suffix(".png"), s.breaks):
        print(f"wrote {stem.with_suffix('.png')}")


if __name__ == "__main__":
    main()
