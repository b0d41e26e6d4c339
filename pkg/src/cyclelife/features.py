"""Capacity-difference sequence features on a fixed voltage grid.

Each cell is turned into a ``T x 151`` matrix: one row per cycle in the
input window, holding the discharge capacities interpolated onto the grid
minus the same quantities at the cycle-10 baseline. Rows are standardized
per grid point with statistics fitted on training data only. The module
also implements the shift-based training-sample augmentation and the scalar
log-variance feature used by the linear baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .dataset import CellRecord, CycleCurve
from .errors import (
    DegenerateCurveError,
    DegenerateVarianceError,
    EmptyInputError,
    EmptyWindowError,
    InvalidParamsError,
    MissingBaselineCycleError,
    MissingCycleError,
    SchemaViolationError,
    ShiftExceedsDataError,
    WindowExceedsLifeError,
)

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class VoltageGrid:
    """Descending voltage query grid; defaults to [3.5 V, 2.0 V] step 0.01 V."""

    v_high: float = 3.5
    v_low: float = 2.0
    step: float = 0.01
    points: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.v_high > self.v_low and self.step > 0):
            raise InvalidParamsError("need v_high > v_low and step > 0")
        span = (self.v_high - self.v_low) / self.step
        n = int(round(span))
        if abs(span - n) > 1e-9:
            raise InvalidParamsError("step must divide the voltage span evenly")
        object.__setattr__(self, "points", np.linspace(self.v_high, self.v_low, n + 1))

    @property
    def n_points(self) -> int:
        return self.points.size


DEFAULT_GRID = VoltageGrid()


@dataclass(frozen=True)
class SequenceSample:
    """Model input/output pair: T x G feature matrix plus a cycle-life target."""

    cell_id: str
    start_cycle: int
    terminal_cycle: int
    features: np.ndarray
    target: float

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", f)
        if f.ndim != 2 or f.shape[0] < 1:
            raise SchemaViolationError("features", "expected a non-empty 2-d matrix")
        if not np.isfinite(f).all():
            raise SchemaViolationError("features", "feature entries must be finite")

    @property
    def n_steps(self) -> int:
        return int(self.features.shape[0])


@dataclass(frozen=True)
class Scaler:
    """Per-grid-point standardization statistics (population std, floored)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=np.float64)
        s = np.asarray(self.std, dtype=np.float64)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "std", s)
        if m.shape != s.shape or m.ndim != 1:
            raise SchemaViolationError("scaler", "mean and std must be 1-d arrays of equal length")
        if not (s > 0).all():
            raise SchemaViolationError("scaler", "stds must be positive")


class AugmentedWindow(NamedTuple):
    """One (possibly shifted) training window and its adjusted target."""

    start_cycle: int
    terminal_cycle: int
    target: float


def interpolate_qv(curve: CycleCurve, grid: VoltageGrid = DEFAULT_GRID) -> np.ndarray:
    """Capacity at each grid voltage, by piecewise-linear interpolation.

    Queries above the curve's highest voltage clamp to the first point's
    capacity; queries below the lowest voltage clamp to the last point's.
    """
    v = np.asarray(curve.voltage, dtype=np.float64)
    q = np.asarray(curve.capacity, dtype=np.float64)
    if v.size < 2 or np.unique(v).size < 2:
        raise DegenerateCurveError("need at least 2 distinct voltages to interpolate")
    # np.interp wants ascending x; curve voltages descend.
    return np.interp(grid.points, v[::-1], q[::-1])


def build_sequence(
    cell: CellRecord,
    start_cycle: int,
    terminal_cycle: int,
    grid: VoltageGrid = DEFAULT_GRID,
    baseline_cycle: int = 10,
) -> SequenceSample:
    """Unnormalized feature sequence: rows are Q(cycle) - Q(baseline) on the grid."""
    if terminal_cycle >= cell.cycle_life:
        raise WindowExceedsLifeError(
            f"cell {cell.cell_id!r}: terminal cycle {terminal_cycle} >= cycle life {cell.cycle_life}"
        )
    if not cell.has_cycle(baseline_cycle):
        raise MissingBaselineCycleError(
            f"cell {cell.cell_id!r} lacks baseline cycle {baseline_cycle}"
        )
    window = [i for i in cell.cycle_indices if start_cycle <= i <= terminal_cycle]
    if not window:
        raise EmptyWindowError(
            f"cell {cell.cell_id!r} has no cycles in [{start_cycle}, {terminal_cycle}]"
        )
    base = interpolate_qv(cell.cycle(baseline_cycle), grid)
    rows = np.empty((len(window), grid.n_points))
    for r, index in enumerate(window):
        rows[r] = interpolate_qv(cell.cycle(index), grid) - base
    return SequenceSample(
        cell_id=cell.cell_id,
        start_cycle=start_cycle,
        terminal_cycle=terminal_cycle,
        features=rows,
        target=float(cell.cycle_life),
    )


def fit_scaler(samples: Sequence[SequenceSample]) -> Scaler:
    """Per-grid-point mean/std over all rows of all (training) samples."""
    if not samples:
        raise EmptyInputError("need at least one sample to fit a scaler")
    rows = np.concatenate([s.features for s in samples], axis=0)
    mean = rows.mean(axis=0)
    std = np.maximum(rows.std(axis=0), STD_FLOOR)
    return Scaler(mean=mean, std=std)


def apply_scaler(scaler: Scaler, sample: SequenceSample) -> SequenceSample:
    if scaler.mean.size != sample.features.shape[1]:
        raise SchemaViolationError("scaler", "scaler width does not match feature width")
    return replace(sample, features=(sample.features - scaler.mean) / scaler.std)


def invert_scaler(scaler: Scaler, sample: SequenceSample) -> SequenceSample:
    return replace(sample, features=sample.features * scaler.std + scaler.mean)


def augment(
    cell: CellRecord,
    start_cycle: int,
    terminal_cycle: int,
    shift_step: int = 3,
    max_shift: int = 0,
    life_threshold: float = 775.0,
) -> list[AugmentedWindow]:
    """Shift-based training windows for one cell.

    Long-lived cells (cycle life > `life_threshold`) emit one window per
    shift s = 0, shift_step, 2*shift_step, ... <= max_shift, each moved
    forward by s cycles with target reduced to cycle_life - s. Other cells
    emit only the genuine window.
    """
    if max_shift < 0 or shift_step < 1:
        raise InvalidParamsError("need max_shift >= 0 and shift_step >= 1")
    if cell.cycle_life > life_threshold:
        shifts = range(0, max_shift + 1, shift_step)
    else:
        shifts = range(0, 1)
    last_available = max(cell.cycle_indices)
    out = []
    for s in shifts:
        start, terminal = start_cycle + s, terminal_cycle + s
        if terminal >= cell.cycle_life:
            raise ShiftExceedsDataError(
                f"cell {cell.cell_id!r}: shift {s} pushes terminal {terminal} past cycle life"
            )
        if terminal > last_available:
            raise ShiftExceedsDataError(
                f"cell {cell.cell_id!r}: shift {s} needs cycle {terminal}, data ends at {last_available}"
            )
        out.append(AugmentedWindow(start, terminal, float(cell.cycle_life - s)))
    return out


def variance_feature(
    cell: CellRecord,
    grid: VoltageGrid = DEFAULT_GRID,
    c_hi: int = 100,
    c_lo: int = 10,
) -> float:
    """log10 of the variance over the grid of Q(c_hi) - Q(c_lo).

    Uses the population (biased) variance over the grid points. Raises
    MissingCycleError when either cycle is absent and DegenerateVarianceError
    when the capacity difference is constant across the grid.
    """
    for c in (c_hi, c_lo):
        if not cell.has_cycle(c):
            raise MissingCycleError(cell.cell_id, c)
    dq = interpolate_qv(cell.cycle(c_hi), grid) - interpolate_qv(cell.cycle(c_lo), grid)
    var = float(np.var(dq))
    if var < 1e-300:
        raise DegenerateVarianceError(
            f"cell {cell.cell_id!r}: capacity difference is constant across the grid"
        )
    return math.log10(var)
