"""CSV schema validation for the benchmark outputs consumed by the plotters."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

CURVE_HEADER = ["mode", "seed", "percent_computed", "lambda2", "objective", "ate", "cumulative_bytes"]
EXCHANGE_HEADER = ["seed", "budget", "monolog_bytes", "cover_bytes"]


class SchemaError(ValueError):
    """A CSV does not match the documented benchmark schema."""


@dataclass
class CurveRow:
    mode: str
    seed: int
    percent_computed: float
    lambda2: float
    objective: float
    ate: float
    cumulative_bytes: int


@dataclass
class CurveTable:
    rows: list[CurveRow]

    def modes(self) -> list[str]:
        return sorted({r.mode for r in self.rows})

    def seeds(self) -> list[int]:
        return sorted({r.seed for r in self.rows})

    def series(self, mode: str, field: str) -> tuple[list[float], list[list[float]]]:
        """x grid (percent) and per-x value lists across seeds, ascending x."""
        grouped: dict[float, list[float]] = {}
        for row in self.rows:
            if row.mode != mode:
                continue
            grouped.setdefault(row.percent_computed, []).append(getattr(row, field))
        xs = sorted(grouped)
        return xs, [grouped[x] for x in xs]


@dataclass
class ExchangeRow:
    seed: int
    budget: int
    monolog_bytes: int
    cover_bytes: int


@dataclass
class ExchangeTable:
    rows: list[ExchangeRow]

    def budgets(self) -> list[int]:
        return sorted({r.budget for r in self.rows})

    def series(self, field: str) -> tuple[list[int], list[list[int]]]:
        grouped: dict[int, list[int]] = {}
        for row in self.rows:
            grouped.setdefault(row.budget, []).append(getattr(row, field))
        xs = sorted(grouped)
        return xs, [grouped[x] for x in xs]


def _read_rows(path: Path, expected_header: list[str]) -> list[dict]:
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != expected_header:
            raise SchemaError(f"{path}: header {header} does not match {expected_header}")
        rows = []
        for line_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise SchemaError(f"{path}:{line_number}: expected {len(expected_header)} columns")
            rows.append(dict(zip(expected_header, row)))
    return rows


def read_curve_table(paths: list[str | Path]) -> CurveTable:
    """Load and concatenate curve CSVs; refuses mixed or mismatched schemas."""
    if not paths:
        raise SchemaError("no curve CSVs given")
    rows: list[CurveRow] = []
    for path in paths:
        for raw in _read_rows(Path(path), CURVE_HEADER):
            try:
                rows.append(
                    CurveRow(
                        mode=raw["mode"],
                        seed=int(raw["seed"]),
                        percent_computed=float(raw["percent_computed"]),
                        lambda2=float(raw["lambda2"]),
                        objective=float(raw["objective"]),
                        ate=float(raw["ate"]),
                        cumulative_bytes=int(raw["cumulative_bytes"]),
                    )
                )
            except ValueError as exc:
                raise SchemaError(f"{path}: bad value in row {raw}: {exc}") from None
    if not rows:
        raise SchemaError("curve CSVs contain no data rows")
    return CurveTable(rows)


def read_exchange_table(path: str | Path) -> ExchangeTable:
    rows: list[ExchangeRow] = []
    for raw in _read_rows(Path(path), EXCHANGE_HEADER):
        try:
            rows.append(
                ExchangeRow(
                    seed=int(raw["seed"]),
                    budget=int(raw["budget"]),
                    monolog_bytes=int(raw["monolog_bytes"]),
                    cover_bytes=int(raw["cover_bytes"]),
                )
            )
        except ValueError as exc:
            raise SchemaError(f"{path}: bad value in row {raw}: {exc}") from None
    if not rows:
        raise SchemaError(f"{path}: exchange sweep is empty")
    return ExchangeTable(rows)
