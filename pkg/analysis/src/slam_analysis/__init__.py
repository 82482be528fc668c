"""Batch figure emitters for the mrslam benchmark CSV schemas."""

from .schema import CurveTable, ExchangeTable, SchemaError
from .plot_curves import plot_curves
from .plot_exchange import plot_exchange

__all__ = ["CurveTable", "ExchangeTable", "SchemaError", "plot_curves", "plot_exchange"]
