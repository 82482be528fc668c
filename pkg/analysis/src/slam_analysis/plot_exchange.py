"""Exchange-policy communication figure: bytes versus candidate budget.

Two lines (monolog baseline and vertex-cover policy) with min-max seed bands;
the widening gap is the communication saved by transmitting shared keyframes
once.
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

from .schema import read_exchange_table

SERIES = [
    ("monolog_bytes", "monolog", "tab:red"),
    ("cover_bytes", "vertex cover", "tab:blue"),
]


def plot_exchange(csv_path: str | Path, out_path: str | Path):
    """Render the bytes-vs-budget comparison; returns the matplotlib figure."""
    table = read_exchange_table(csv_path)
    figure, axis = plt.subplots(figsize=(6.0, 4.0))
    for field, label, color in SERIES:
        xs, values = table.series(field)
        mean = np.array([float(np.mean(v)) for v in values])
        lo = np.array([float(np.min(v)) for v in values])
        hi = np.array([float(np.max(v)) for v in values])
        axis.plot(xs, mean, marker="o", markersize=3.5, label=label, color=color, linewidth=1.6)
        axis.fill_between(xs, lo, hi, color=color, alpha=0.2, linewidth=0)
    axis.set_xlabel("candidate budget")
    axis.set_ylabel("keyframe payload bytes")
    axis.grid(True, alpha=0.3)
    axis.legend(loc="upper left")
    figure.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if out_path.suffix == ".svg":
        figure.savefig(out_path, metadata={"Date": None})
    elif out_path.suffix == ".png":
        figure.savefig(out_path, metadata={"Software": None})
    else:
        figure.savefig(out_path)
    return figure


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--in", dest="input", required=True, help="exchange CSV file")
    parser.add_argument("--out", required=True, help="output image (svg or png)")
    args = parser.parse_args(argv)
    try:
        plot_exchange(args.input, args.out)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
