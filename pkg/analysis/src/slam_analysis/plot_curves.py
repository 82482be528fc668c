"""Three-row prioritization comparison figure.

Stacked panels of algebraic connectivity (up is better), pose-graph objective
(down is better), and ATE against the all-candidates reference (down is
better), each plotted against the percentage of loop closures computed. One
line per prioritization mode with a shaded min-max band across seeds.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "mrslam-analysis"
import matplotlib.pyplot as plt
import numpy as np

from .schema import read_curve_table

MODE_COLORS = {
    "greedy": "tab:orange",
    "spectral": "tab:blue",
    "exhaustive": "tab:green",
}

PANELS = [
    ("lambda2", "algebraic connectivity"),
    ("objective", "PGO objective value"),
    ("ate", "ATE vs reference [m]"),
]


def plot_curves(csv_paths: list[str | Path], out_path: str | Path):
    """Render the three-panel comparison; returns the matplotlib figure."""
    table = read_curve_table(list(csv_paths))
    figure, axes = plt.subplots(3, 1, sharex=True, figsize=(6.0, 8.5))
    for axis, (field, label) in zip(axes, PANELS):
        for mode in table.modes():
            xs, values = table.series(mode, field)
            mean = np.array([float(np.mean(v)) for v in values])
            lo = np.array([float(np.min(v)) for v in values])
            hi = np.array([float(np.max(v)) for v in values])
            color = MODE_COLORS.get(mode, "tab:gray")
            axis.plot(xs, mean, label=mode, color=color, linewidth=1.6)
            axis.fill_between(xs, lo, hi, color=color, alpha=0.2, linewidth=0)
        axis.set_ylabel(label)
        axis.grid(True, alpha=0.3)
    axes[0].legend(loc="lower right")
    axes[-1].set_xlabel("loop closures computed [%]")
    figure.tight_layout()
    _save(figure, Path(out_path))
    return figure


def _save(figure, out_path: Path) -> None:
    out_path.parent.mkdir(parents=True, exist_ok=True)
    # Identical inputs must give identical bytes: strip volatile metadata.
    if out_path.suffix == ".svg":
        figure.savefig(out_path, metadata={"Date": None})
    elif out_path.suffix == ".png":
        figure.savefig(out_path, metadata={"Software": None})
    else:
        figure.savefig(out_path)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--in", dest="inputs", nargs="+", required=True, help="curve CSV files")
    parser.add_argument("--out", required=True, help="output image (svg or png)")
    args = parser.parse_args(argv)
    try:
        plot_curves(args.inputs, args.out)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
