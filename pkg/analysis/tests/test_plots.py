import csv
import time
from pathlib import Path

import numpy as np
import pytest

from slam_analysis.plot_curves import PANELS, plot_curves
from slam_analysis.plot_exchange import plot_exchange
from slam_analysis.schema import (
    CURVE_HEADER,
    EXCHANGE_HEADER,
    SchemaError,
    read_curve_table,
    read_exchange_table,
)

GOLDEN = Path(__file__).resolve().parent.parent / "golden"
CURVE_GOLDEN = GOLDEN / "curve_golden.csv"
EXCHANGE_GOLDEN = GOLDEN / "exchange_golden.csv"


def write_rows(path, header, rows):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def expected_series(table, mode, field):
    xs, values = table.series(mode, field)
    mean = np.array([float(np.mean(v)) for v in values])
    lo = np.array([float(np.min(v)) for v in values])
    hi = np.array([float(np.max(v)) for v in values])
    return np.array(xs), mean, lo, hi


def test_golden_curve_figure_matches_csv(tmp_path):
    start = time.perf_counter()
    figure = plot_curves([CURVE_GOLDEN], tmp_path / "curves.svg")
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    assert (tmp_path / "curves.svg").exists()
    table = read_curve_table([CURVE_GOLDEN])
    modes = table.modes()
    assert len(figure.axes) == 3
    for axis, (field, _) in zip(figure.axes, PANELS):
        assert len(axis.lines) == len(modes)
        for line, mode in zip(axis.lines, modes):
            xs, mean, lo, hi = expected_series(table, mode, field)
            data = line.get_xydata()
            assert np.array_equal(data[:, 0], xs)
            assert np.array_equal(data[:, 1], mean)
        for collection, mode in zip(axis.collections, modes):
            xs, mean, lo, hi = expected_series(table, mode, field)
            vertices = {tuple(v) for v in collection.get_paths()[0].vertices}
            for x, low, high in zip(xs, lo, hi):
                assert (x, low) in vertices
                assert (x, high) in vertices


def test_golden_curve_modes_share_terminal_point():
    table = read_curve_table([CURVE_GOLDEN])
    for seed in table.seeds():
        finals = {}
        for row in table.rows:
            if row.seed != seed:
                continue
            if row.percent_computed == 100.0:
                finals[row.mode] = (row.lambda2, row.objective)
        values = list(finals.values())
        assert all(v == values[0] for v in values)


def test_single_seed_single_mode(tmp_path):
    table = read_curve_table([CURVE_GOLDEN])
    rows = [
        [r.mode, r.seed, r.percent_computed, r.lambda2, r.objective, r.ate, r.cumulative_bytes]
        for r in table.rows
        if r.mode == "greedy" and r.seed == table.seeds()[0]
    ]
    path = tmp_path / "single.csv"
    write_rows(path, CURVE_HEADER, rows)
    figure = plot_curves([path], tmp_path / "single.svg")
    assert len(figure.axes) == 3
    for axis in figure.axes:
        assert len(axis.lines) == 1


def test_twenty_seed_band_is_min_max(tmp_path):
    rng = np.random.default_rng(0)
    percents = [25.0, 50.0, 75.0, 100.0]
    rows = []
    values = {}
    for seed in range(20):
        for pct in percents:
            lam = float(rng.uniform(0.1, 0.9))
            values.setdefault(pct, []).append(lam)
            rows.append(["greedy", seed, pct, lam, 1.0, 0.5, 100])
    path = tmp_path / "band.csv"
    write_rows(path, CURVE_HEADER, rows)
    figure = plot_curves([path], tmp_path / "band.svg")
    axis = figure.axes[0]
    vertices = {tuple(v) for v in axis.collections[0].get_paths()[0].vertices}
    for pct in percents:
        lo, hi = min(values[pct]), max(values[pct])
        assert (pct, lo) in vertices
        assert (pct, hi) in vertices


def test_curve_images_are_deterministic(tmp_path):
    for suffix in ("svg", "png"):
        a = tmp_path / f"a.{suffix}"
        b = tmp_path / f"b.{suffix}"
        plot_curves([CURVE_GOLDEN], a)
        plot_curves([CURVE_GOLDEN], b)
        assert a.read_bytes() == b.read_bytes()


def test_curve_schema_rejects_missing_columns(tmp_path):
    path = tmp_path / "bad.csv"
    write_rows(path, ["mode", "seed"], [["greedy", 0]])
    with pytest.raises(SchemaError):
        plot_curves([path], tmp_path / "nope.svg")


def test_curve_refuses_mixed_schemas(tmp_path):
    with pytest.raises(SchemaError):
        read_curve_table([CURVE_GOLDEN, EXCHANGE_GOLDEN])


def test_golden_exchange_figure_matches_csv(tmp_path):
    start = time.perf_counter()
    figure = plot_exchange(EXCHANGE_GOLDEN, tmp_path / "exchange.svg")
    assert time.perf_counter() - start < 10.0
    table = read_exchange_table(EXCHANGE_GOLDEN)
    axis = figure.axes[0]
    assert len(axis.lines) == 2
    for line, field in zip(axis.lines, ("monolog_bytes", "cover_bytes")):
        xs, values = table.series(field)
        mean = np.array([float(np.mean(v)) for v in values])
        data = line.get_xydata()
        assert np.array_equal(data[:, 0], np.array(xs, dtype=float))
        assert np.array_equal(data[:, 1], mean)
    # Savings never negative, rechecked from the raw rows.
    for row in table.rows:
        assert row.cover_bytes <= row.monolog_bytes


def test_exchange_single_budget_point(tmp_path):
    table = read_exchange_table(EXCHANGE_GOLDEN)
    rows = [
        [r.seed, r.budget, r.monolog_bytes, r.cover_bytes]
        for r in table.rows
        if r.budget == table.budgets()[0]
    ]
    path = tmp_path / "one.csv"
    write_rows(path, EXCHANGE_HEADER, rows)
    figure = plot_exchange(path, tmp_path / "one.svg")
    axis = figure.axes[0]
    assert len(axis.lines) == 2
    for line in axis.lines:
        assert len(line.get_xydata()) == 1
        assert line.get_marker() == "o"


def test_exchange_empty_sweep_errors(tmp_path):
    path = tmp_path / "empty.csv"
    write_rows(path, EXCHANGE_HEADER, [])
    with pytest.raises(SchemaError):
        plot_exchange(path, tmp_path / "nope.svg")


def test_exchange_images_are_deterministic(tmp_path):
    a = tmp_path / "a.png"
    b = tmp_path / "b.png"
    plot_exchange(EXCHANGE_GOLDEN, a)
    plot_exchange(EXCHANGE_GOLDEN, b)
    assert a.read_bytes() == b.read_bytes()
