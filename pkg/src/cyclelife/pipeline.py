"""Glue from cell records to trained models and back to cycle predictions.

Builds (optionally augmented) training samples for a split, fits the
feature scaler on them, scales targets down by a configurable factor so the
output head works near unit magnitude, trains, and bundles everything a
prediction needs (network, scaler, window, grid, target scale) into one
immutable object.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .dataset import CellRecord
from .errors import UnknownCellIdError
from .features import (
    DEFAULT_GRID,
    AugmentedWindow,
    Scaler,
    SequenceSample,
    VoltageGrid,
    apply_scaler,
    augment,
    build_sequence,
    fit_scaler,
)
from .nn import Network, NetworkArch, init_network, network_forward
from .optim import AdamHyper, TrainConfig, train


@dataclass(frozen=True)
class ModelBundle:
    """A trained network plus everything needed to reproduce its inputs."""

    net: Network
    scaler: Scaler
    target_scale: float
    start_cycle: int
    terminal_cycle: int
    baseline_cycle: int
    grid: VoltageGrid


@dataclass(frozen=True)
class TrainResult:
    bundle: ModelBundle
    history: list[float]
    n_samples: int


def cells_by_id(cells: Sequence[CellRecord]) -> dict[str, CellRecord]:
    return {c.cell_id: c for c in cells}


def resolve_ids(cells: Mapping[str, CellRecord], ids: Sequence[str]) -> list[CellRecord]:
    missing = [cid for cid in ids if cid not in cells]
    if missing:
        raise UnknownCellIdError(f"unknown cell ids: {missing}")
    return [cells[cid] for cid in ids]


def build_training_samples(
    cells: Mapping[str, CellRecord],
    ids: Sequence[str],
    config: TrainConfig,
    grid: VoltageGrid = DEFAULT_GRID,
) -> list[SequenceSample]:
    """One sample per (cell, shift); targets already adjusted for shifts."""
    samples: list[SequenceSample] = []
    for cell in resolve_ids(cells, ids):
        if config.augment:
            windows = augment(
                cell,
                config.start_cycle,
                config.terminal_cycle,
                shift_step=config.shift_step,
                max_shift=config.max_shift,
                life_threshold=config.life_threshold,
            )
        else:
            windows = [
                AugmentedWindow(config.start_cycle, config.terminal_cycle, float(cell.cycle_life))
            ]
        for w in windows:
            sample = build_sequence(cell, w.start_cycle, w.terminal_cycle, grid, config.baseline_cycle)
            if sample.target != w.target:
                sample = replace(sample, target=w.target)
            samples.append(sample)
    return samples


def train_on_split(
    cells: Mapping[str, CellRecord],
    train_ids: Sequence[str],
    arch: NetworkArch,
    config: TrainConfig,
    hyper: AdamHyper = AdamHyper(),
    grid: VoltageGrid = DEFAULT_GRID,
    init_seed: int | None = None,
    on_epoch=None,
) -> TrainResult:
    """Build samples, fit the scaler, train, and wrap the result."""
    raw = build_training_samples(cells, train_ids, config, grid)
    scaler = fit_scaler(raw)
    scaled = [
        replace(apply_scaler(scaler, s), target=s.target / config.target_scale) for s in raw
    ]
    arch = replace(arch, input_size=grid.n_points)
    net = init_network(arch, seed=config.seed if init_seed is None else init_seed)
    net, history = train(net, scaled, config, hyper, on_epoch=on_epoch)
    bundle = ModelBundle(
        net=net,
        scaler=scaler,
        target_scale=config.target_scale,
        start_cycle=config.start_cycle,
        terminal_cycle=config.terminal_cycle,
        baseline_cycle=config.baseline_cycle,
        grid=grid,
    )
    return TrainResult(bundle=bundle, history=history, n_samples=len(raw))


def predict_cell(
    bundle: ModelBundle,
    cell: CellRecord,
    start_cycle: int | None = None,
    terminal_cycle: int | None = None,
) -> float:
    """Eval-mode prediction for one cell, in raw cycles."""
    sample = build_sequence(
        cell,
        bundle.start_cycle if start_cycle is None else start_cycle,
        bundle.terminal_cycle if terminal_cycle is None else terminal_cycle,
        bundle.grid,
        bundle.baseline_cycle,
    )
    sample = apply_scaler(bundle.scaler, sample)
    pred, _ = network_forward(bundle.net, sample, mode="eval")
    return pred * bundle.target_scale
