"""Cell records, the on-disk cell format, synthetic cells and dataset splits.

A cell file is one JSON document per battery cell::

    {"cell_id": str,
     "nominal_capacity_ah": float,
     "cycle_life": int,
     "cycles": [{"index": int, "points": [[voltage, capacity], ...]}, ...]}

Voltages are listed in decreasing order within each cycle and capacities are
non-decreasing along the same list. A dataset manifest groups cell files and
names the splits::

    {"cells": [relative paths],
     "splits": {"train": [ids], "primary_test": [ids], "secondary_test": [ids]}}

The synthetic generator emits cells whose end-of-discharge capacity decays as
``f(C) = 1 - 0.2 * (C / L)**gamma``, so the capacity crosses 80% of nominal
exactly at cycle ``L`` and the cycle-life label is self-consistent by
construction.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    InvalidParamsError,
    MissingCycleError,
    MissingFileError,
    MonotonicityViolationError,
    OverlappingSplitsError,
    SchemaViolationError,
    UnknownCellIdError,
)

# Default sampling grid for generated cells; matches the feature grid
# (3.5 V down to 2.0 V in 0.01 V steps).
SYNTH_VOLTAGES = np.linspace(3.5, 2.0, 151)

VOLTAGE_MIN = 1.5
VOLTAGE_MAX = 4.0


class DischargePoint(NamedTuple):
    """One (voltage, capacity) measurement of a discharge curve."""

    voltage: float
    capacity: float


@dataclass(frozen=True)
class CycleCurve:
    """Discharge curve of a single cycle, stored as parallel arrays.

    Voltage is strictly decreasing along the curve and capacity is
    non-decreasing (charge drained so far only grows as voltage falls).
    """

    cycle_index: int
    voltage: np.ndarray
    capacity: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.voltage, dtype=np.float64)
        q = np.asarray(self.capacity, dtype=np.float64)
        object.__setattr__(self, "voltage", v)
        object.__setattr__(self, "capacity", q)
        if self.cycle_index < 1:
            raise SchemaViolationError("index", f"cycle index must be >= 1, got {self.cycle_index}")
        if v.ndim != 1 or q.ndim != 1 or v.shape != q.shape:
            raise SchemaViolationError("points", "voltage and capacity must be 1-d arrays of equal length")
        if v.size < 2:
            raise SchemaViolationError("points", "a cycle needs at least 2 points")
        if not (np.isfinite(v).all() and np.isfinite(q).all()):
            raise SchemaViolationError("points", "non-finite voltage or capacity")
        if v.min() < VOLTAGE_MIN or v.max() > VOLTAGE_MAX:
            raise SchemaViolationError(
                "voltage", f"voltages must lie in [{VOLTAGE_MIN}, {VOLTAGE_MAX}]"
            )
        if q.min() < 0.0:
            raise SchemaViolationError("capacity", "capacities must be >= 0")
        if not (np.diff(v) < 0).all():
            raise MonotonicityViolationError("", self.cycle_index, "voltage must be strictly decreasing")
        if (np.diff(q) < 0).any():
            raise MonotonicityViolationError("", self.cycle_index, "capacity must be non-decreasing")

    @property
    def points(self) -> list[DischargePoint]:
        return [DischargePoint(float(v), float(q)) for v, q in zip(self.voltage, self.capacity)]

    @property
    def end_capacity(self) -> float:
        """Capacity at the lowest sampled voltage (end of discharge)."""
        return float(self.capacity[-1])


@dataclass(frozen=True)
class CellRecord:
    """One battery cell: per-cycle discharge curves plus its cycle-life label."""

    cell_id: str
    nominal_capacity: float
    cycle_life: int
    cycles: tuple[CycleCurve, ...]
    _by_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "cycles", tuple(self.cycles))
        if not self.cell_id:
            raise SchemaViolationError("cell_id", "must be a non-empty string")
        if not self.nominal_capacity > 0:
            raise SchemaViolationError("nominal_capacity_ah", "must be > 0")
        if self.cycle_life < 1:
            raise SchemaViolationError("cycle_life", "must be a positive integer")
        if not self.cycles:
            raise SchemaViolationError("cycles", "cell has no cycles")
        indices = [c.cycle_index for c in self.cycles]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise SchemaViolationError("cycles", "cycle indices must be strictly increasing")
        object.__setattr__(self, "_by_index", {c.cycle_index: c for c in self.cycles})

    @property
    def cycle_indices(self) -> tuple[int, ...]:
        return tuple(c.cycle_index for c in self.cycles)

    def has_cycle(self, index: int) -> bool:
        return index in self._by_index

    def cycle(self, index: int) -> CycleCurve:
        try:
            return self._by_index[index]
        except KeyError:
            raise MissingCycleError(self.cell_id, index) from None


@dataclass(frozen=True)
class SynthParams:
    """Knobs of the parametric synthetic cell generator."""

    nominal_capacity: float = 1.1
    target_life: int = 1000
    fade_exponent: float = 1.0
    curve_midpoint: float = 2.8
    curve_width: float = 0.25
    noise_std: float = 0.0
    cycles_to_emit: int = 101

    def __post_init__(self):
        if not self.nominal_capacity > 0:
            raise InvalidParamsError("nominal_capacity must be > 0")
        if self.target_life < self.cycles_to_emit:
            raise InvalidParamsError(
                f"target_life ({self.target_life}) must be >= cycles_to_emit ({self.cycles_to_emit})"
            )
        if not self.fade_exponent > 0:
            raise InvalidParamsError("fade_exponent must be > 0")
        if not self.curve_width > 0:
            raise InvalidParamsError("curve_width must be > 0")
        if self.noise_std < 0:
            raise InvalidParamsError("noise_std must be >= 0")
        if self.cycles_to_emit < 11:
            raise InvalidParamsError("cycles_to_emit must be >= 11 so a cycle-10 baseline exists")


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train / primary-test / secondary-test cell-id lists."""

    train: tuple[str, ...] = ()
    primary_test: tuple[str, ...] = ()
    secondary_test: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "primary_test", tuple(self.primary_test))
        object.__setattr__(self, "secondary_test", tuple(self.secondary_test))
        groups = (self.train, self.primary_test, self.secondary_test)
        seen: set[str] = set()
        for ids in groups:
            for cid in ids:
                if cid in seen:
                    raise OverlappingSplitsError(f"cell {cid!r} appears in more than one split")
                seen.add(cid)

    def as_dict(self) -> dict[str, list[str]]:
        return {
            "train": list(self.train),
            "primary_test": list(self.primary_test),
            "secondary_test": list(self.secondary_test),
        }


def fade_factor(cycle: float, life: float, exponent: float) -> float:
    """Fraction of nominal capacity left at `cycle` for a cell lasting `life`."""
    return 1.0 - 0.2 * (cycle / life) ** exponent


def synth_cell(params: SynthParams, seed: int, cell_id: str | None = None) -> CellRecord:
    """Generate one synthetic cell, deterministic given (params, seed).

    Each cycle is sampled on the 151-point default grid. The noise-free
    discharge curve is ``Q(V, C) = f(C) * nominal * g(V)`` with a tanh-shaped
    ``g`` rising from 0 at 3.5 V to 1 at 2.0 V; optional Gaussian noise is
    projected back onto non-decreasing curves.
    """
    rng = np.random.default_rng(seed)
    v = SYNTH_VOLTAGES
    s = np.tanh((params.curve_midpoint - v) / params.curve_width)
    # Grid endpoints are exactly the 3.5 V / 2.0 V anchors of the shape
    # normalization, so g is exactly 0 at the first point and 1 at the last.
    s_high, s_low = s[0], s[-1]
    g = (s - s_high) / (s_low - s_high)

    curves = []
    for c in range(1, params.cycles_to_emit + 1):
        f = fade_factor(c, params.target_life, params.fade_exponent)
        q = f * params.nominal_capacity * g
        if params.noise_std > 0:
            q = q + rng.normal(0.0, params.noise_std, size=q.shape)
            q = np.maximum.accumulate(q)
            q = np.maximum(q, 0.0)
        curves.append(CycleCurve(c, v.copy(), q))

    return CellRecord(
        cell_id=cell_id or f"synth-{seed:06d}",
        nominal_capacity=params.nominal_capacity,
        cycle_life=params.target_life,
        cycles=tuple(curves),
    )


# --- on-disk format -------------------------------------------------------

def cell_to_dict(cell: CellRecord) -> dict:
    return {
        "cell_id": cell.cell_id,
        "nominal_capacity_ah": cell.nominal_capacity,
        "cycle_life": cell.cycle_life,
        "cycles": [
            {
                "index": curve.cycle_index,
                "points": [[float(v), float(q)] for v, q in zip(curve.voltage, curve.capacity)],
            }
            for curve in cell.cycles
        ],
    }


def cell_from_dict(doc: dict, source: str = "<memory>") -> CellRecord:
    if not isinstance(doc, dict):
        raise SchemaViolationError("<root>", f"{source}: cell document must be a JSON object")

    def need(key, types, type_name):
        if key not in doc:
            raise SchemaViolationError(key, f"{source}: missing required field")
        value = doc[key]
        if not isinstance(value, types) or isinstance(value, bool):
            raise SchemaViolationError(key, f"{source}: expected {type_name}")
        return value

    cell_id = need("cell_id", str, "string")
    nominal = float(need("nominal_capacity_ah", (int, float), "number"))
    cycle_life = need("cycle_life", int, "integer")
    cycles_doc = need("cycles", list, "list")

    curves = []
    for entry in cycles_doc:
        if not isinstance(entry, dict) or "index" not in entry or "points" not in entry:
            raise SchemaViolationError("cycles", f"{source}: each cycle needs 'index' and 'points'")
        index = entry["index"]
        if not isinstance(index, int) or isinstance(index, bool):
            raise SchemaViolationError("cycles.index", f"{source}: cycle index must be an integer")
        points = entry["points"]
        if not isinstance(points, list) or any(
            not isinstance(p, list) or len(p) != 2 for p in points
        ):
            raise SchemaViolationError(
                "cycles.points", f"{source}: points must be [voltage, capacity] pairs"
            )
        arr = np.asarray(points, dtype=np.float64)
        if arr.size == 0:
            raise SchemaViolationError("cycles.points", f"{source}: cycle {index} has no points")
        try:
            curves.append(CycleCurve(index, arr[:, 0], arr[:, 1]))
        except MonotonicityViolationError as err:
            raise MonotonicityViolationError(cell_id, index, str(err)) from None
    return CellRecord(cell_id, nominal, cycle_life, tuple(curves))


def write_cell(cell: CellRecord, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cell_to_dict(cell), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_cell(path: str | os.PathLike) -> CellRecord:
    if not os.path.isfile(path):
        raise MissingFileError(f"cell file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise SchemaViolationError("<file>", f"{path}: not valid JSON ({err})") from None
    return cell_from_dict(doc, source=str(path))


def load_cells(path: str | os.PathLike) -> list[CellRecord]:
    """Load every cell under a directory, or the cells named by a manifest."""
    if os.path.isdir(path):
        names = sorted(
            n for n in os.listdir(path) if n.endswith(".json") and n != "manifest.json"
        )
        return [load_cell(os.path.join(path, n)) for n in names]
    if os.path.isfile(path):
        cells, _ = load_manifest(path)
        return cells
    raise MissingFileError(f"no such file or directory: {path}")


def write_manifest(
    path: str | os.PathLike, cell_paths: Sequence[str], split: DatasetSplit
) -> None:
    doc = {"cells": list(cell_paths), "splits": split.as_dict()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_manifest(path: str | os.PathLike) -> tuple[list[CellRecord], DatasetSplit]:
    if not os.path.isfile(path):
        raise MissingFileError(f"manifest not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise SchemaViolationError("<file>", f"{path}: not valid JSON ({err})") from None
    if not isinstance(doc, dict) or "cells" not in doc:
        raise SchemaViolationError("cells", f"{path}: manifest needs a 'cells' list")
    base = os.path.dirname(os.path.abspath(path))
    cells = [load_cell(os.path.join(base, rel)) for rel in doc["cells"]]
    splits_doc = doc.get("splits", {})
    if not isinstance(splits_doc, dict):
        raise SchemaViolationError("splits", f"{path}: 'splits' must be an object")
    split = DatasetSplit(
        train=tuple(splits_doc.get("train", ())),
        primary_test=tuple(splits_doc.get("primary_test", ())),
        secondary_test=tuple(splits_doc.get("secondary_test", ())),
    )
    known = {c.cell_id for c in cells}
    for cid in split.train + split.primary_test + split.secondary_test:
        if cid not in known:
            raise UnknownCellIdError(f"{path}: split names unknown cell {cid!r}")
    return cells, split


# --- splitting -------------------------------------------------------------

def split_dataset(
    cells: Sequence[CellRecord],
    *,
    train: Iterable[str] | None = None,
    primary_test: Iterable[str] | None = None,
    secondary_test: Iterable[str] | None = None,
    fractions: Sequence[float] | None = None,
    seed: int | None = None,
) -> DatasetSplit:
    """Split cells either by explicit id lists or by seeded random fractions.

    Fraction mode shuffles the ids with `seed`, allocates
    floor(N * fraction) ids to each test split, and assigns every remaining
    id to the training split, so the three lists always cover the input.
    Pass fractions summing to 1 for a proportional cover.
    """
    known = {c.cell_id for c in cells}
    if len(known) != len(cells):
        raise OverlappingSplitsError("duplicate cell ids in input")

    explicit = [x for x in (train, primary_test, secondary_test) if x is not None]
    if explicit and fractions is not None:
        raise InvalidParamsError("give either explicit id lists or fractions, not both")

    if fractions is None:
        groups = (tuple(train or ()), tuple(primary_test or ()), tuple(secondary_test or ()))
        for ids in groups:
            for cid in ids:
                if cid not in known:
                    raise UnknownCellIdError(f"unknown cell id {cid!r}")
        return DatasetSplit(*groups)

    if len(fractions) != 3:
        raise InvalidParamsError("fractions must be (train, primary_test, secondary_test)")
    if any(f < 0 for f in fractions):
        raise InvalidParamsError("fractions must be >= 0")
    if sum(fractions) > 1.0 + 1e-9:
        raise InvalidParamsError("fractions must sum to <= 1")

    ids = sorted(known)
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]

    n = len(ids)
    n_pri = int(math.floor(n * fractions[1] + 1e-9))
    n_sec = int(math.floor(n * fractions[2] + 1e-9))
    n_train = n - n_pri - n_sec
    return DatasetSplit(
        train=tuple(order[:n_train]),
        primary_test=tuple(order[n_train : n_train + n_pri]),
        secondary_test=tuple(order[n_train + n_pri :]),
    )
