"""Single-feature linear baseline: cycle life regressed on the log-variance feature.

The predictor is ordinary least squares of (optionally log10-transformed)
cycle life on log10 var(Q_hi(V) - Q_lo(V)), the one scalar feature with a
high correlation to cycle life. Default cycles are 100 and 10 and the
default target transform is log10.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import CellRecord
from .errors import DegenerateDesignError, EmptyInputError, InvalidParamsError, SchemaViolationError
from .features import DEFAULT_GRID, VoltageGrid, variance_feature

_TRANSFORMS = ("identity", "log10")


@dataclass(frozen=True)
class VarianceModel:
    slope: float
    intercept: float
    target_transform: str = "log10"

    def __post_init__(self):
        if self.target_transform not in _TRANSFORMS:
            raise InvalidParamsError(f"target_transform must be one of {_TRANSFORMS}")
        if not (math.isfinite(self.slope) and math.isfinite(self.intercept)):
            raise InvalidParamsError("coefficients must be finite")


def ols_fit(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Closed-form least squares line. Sorted internally so the fit is
    exactly invariant to sample order."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise InvalidParamsError("x and y must be 1-d arrays of equal length")
    if xa.size < 2:
        raise EmptyInputError("need at least 2 points to fit a line")
    order = np.lexsort((ya, xa))
    xa, ya = xa[order], ya[order]
    x_mean, y_mean = xa.mean(), ya.mean()
    dx = xa - x_mean
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateDesignError("all feature values are identical")
    slope = float(dx @ (ya - y_mean)) / sxx
    return slope, y_mean - slope * x_mean


def fit_variance_model(
    cells: Sequence[CellRecord],
    grid: VoltageGrid = DEFAULT_GRID,
    target_transform: str = "log10",
    c_hi: int = 100,
    c_lo: int = 10,
) -> VarianceModel:
    """OLS of transformed cycle life on the variance feature of each cell."""
    if target_transform not in _TRANSFORMS:
        raise InvalidParamsError(f"target_transform must be one of {_TRANSFORMS}")
    if len(cells) < 2:
        raise EmptyInputError("need at least 2 cells to fit the baseline")
    x = [variance_feature(cell, grid, c_hi, c_lo) for cell in cells]
    y = [
        math.log10(cell.cycle_life) if target_transform == "log10" else float(cell.cycle_life)
        for cell in cells
    ]
    slope, intercept = ols_fit(x, y)
    return VarianceModel(slope=slope, intercept=intercept, target_transform=target_transform)


def predict_variance_model(
    model: VarianceModel,
    cell: CellRecord,
    grid: VoltageGrid = DEFAULT_GRID,
    c_hi: int = 100,
    c_lo: int = 10,
) -> float:
    """Predicted cycle life in cycles, clamped below at 1."""
    x = variance_feature(cell, grid, c_hi, c_lo)
    yhat = model.slope * x + model.intercept
    if model.target_transform == "log10":
        yhat = 10.0 ** yhat
    return max(yhat, 1.0)


def save_variance_model(model: VarianceModel, path: str | os.PathLike) -> None:
    doc = {
        "slope": model.slope,
        "intercept": model.intercept,
        "target_transform": model.target_transform,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_variance_model(path: str | os.PathLike) -> VarianceModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("slope", "intercept", "target_transform"):
        if key not in doc:
            raise SchemaViolationError(key, f"{path}: missing field")
    return VarianceModel(
        slope=float(doc["slope"]),
        intercept=float(doc["intercept"]),
        target_transform=str(doc["target_transform"]),
    )
