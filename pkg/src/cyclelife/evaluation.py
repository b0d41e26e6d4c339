"""RMSE/MAPE metrics, multi-seed repeat experiments and the terminal-cycle sweep.

A repeat experiment trains K networks with consecutive seeds on the same
split, evaluates each on train / primary-test / secondary-test, and reports
mean +- sample standard deviation per metric, mirroring the usual
"mean +- std over parallel runs" reporting. The sweep reruns that protocol
for a list of terminal cycles and can emit a plot-data CSV.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dataset import CellRecord, DatasetSplit
from .errors import EmptyInputError, LengthMismatchError, ZeroActualError
from .features import DEFAULT_GRID, VoltageGrid
from .nn import NetworkArch
from .optim import AdamHyper, TrainConfig
from .pipeline import ModelBundle, predict_cell, resolve_ids, train_on_split

SPLIT_NAMES = ("train", "primary_test", "secondary_test")


@dataclass(frozen=True)
class PredictionSet:
    """Paired predicted and actual cycle lives for one split."""

    predicted: np.ndarray
    actual: np.ndarray
    split: str = ""

    def __post_init__(self):
        p = np.asarray(self.predicted, dtype=np.float64)
        a = np.asarray(self.actual, dtype=np.float64)
        object.__setattr__(self, "predicted", p)
        object.__setattr__(self, "actual", a)
        if p.ndim != 1 or a.ndim != 1:
            raise LengthMismatchError("predicted and actual must be 1-d")
        if p.shape != a.shape:
            raise LengthMismatchError(f"predicted {p.shape} vs actual {a.shape}")
        if p.size == 0:
            raise EmptyInputError("prediction set is empty")
        if (a <= 0).any():
            raise ZeroActualError("actual cycle lives must be > 0")


def rmse(preds: PredictionSet) -> float:
    """Root mean squared error, in cycles."""
    diff = preds.actual - preds.predicted
    return math.sqrt(float(diff @ diff) / diff.size)


def mape(preds: PredictionSet) -> float:
    """Mean absolute percentage error, in percent."""
    rel = np.abs(preds.actual - preds.predicted) / preds.actual
    return float(rel.mean() * 100.0)


@dataclass(frozen=True)
class SplitStats:
    rmse_mean: float
    rmse_std: float
    mape_mean: float
    mape_std: float


@dataclass(frozen=True)
class EvalReport:
    """Mean +- std of RMSE and MAPE per split, over K seeded runs."""

    terminal_cycle: int
    augmented: bool
    k: int
    split_stats: dict[str, SplitStats]
    per_seed: dict[str, tuple[tuple[float, float], ...]]

    @property
    def label(self) -> str:
        return f"@{self.terminal_cycle},aug" if self.augmented else f"@{self.terminal_cycle}"

    def table_rows(self) -> list[str]:
        rows = []
        for split, stats in self.split_stats.items():
            rows.append(
                f"{self.label}\t{split}\tRMSE\t{stats.rmse_mean:.1f} ± {stats.rmse_std:.1f}"
            )
            rows.append(
                f"{self.label}\t{split}\tMAPE\t{stats.mape_mean:.1f} ± {stats.mape_std:.1f}"
            )
        return rows


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = 0.0 if arr.size == 1 else float(arr.std(ddof=1))
    return mean, std


def aggregate_seed_metrics(
    per_seed_metrics: Sequence[Mapping[str, tuple[float, float]]],
) -> tuple[dict[str, SplitStats], dict[str, tuple[tuple[float, float], ...]]]:
    """Fold per-seed {split: (rmse, mape)} dicts into mean/std stats."""
    if not per_seed_metrics:
        raise EmptyInputError("no per-seed metrics to aggregate")
    splits = list(per_seed_metrics[0].keys())
    stats: dict[str, SplitStats] = {}
    raw: dict[str, tuple[tuple[float, float], ...]] = {}
    for split in splits:
        pairs = tuple((m[split][0], m[split][1]) for m in per_seed_metrics)
        rmse_mean, rmse_std = _mean_std([p[0] for p in pairs])
        mape_mean, mape_std = _mean_std([p[1] for p in pairs])
        stats[split] = SplitStats(rmse_mean, rmse_std, mape_mean, mape_std)
        raw[split] = pairs
    return stats, raw


def evaluate_bundle(
    bundle: ModelBundle,
    cells: Mapping[str, CellRecord],
    ids: Sequence[str],
    split: str = "",
) -> PredictionSet:
    records = resolve_ids(cells, ids)
    predicted = [predict_cell(bundle, cell) for cell in records]
    actual = [float(cell.cycle_life) for cell in records]
    return PredictionSet(np.asarray(predicted), np.asarray(actual), split)


def single_seed_run(
    cells: Mapping[str, CellRecord],
    split: DatasetSplit,
    arch: NetworkArch,
    config: TrainConfig,
    hyper: AdamHyper = AdamHyper(),
    seed: int = 0,
    grid: VoltageGrid = DEFAULT_GRID,
) -> dict[str, tuple[float, float]]:
    """Train once with `seed` and return {split: (rmse, mape)} on raw cycles."""
    from dataclasses import replace

    run_config = replace(config, seed=seed)
    result = train_on_split(cells, split.train, arch, run_config, hyper, grid, init_seed=seed)
    bundle = result.bundle
    out: dict[str, tuple[float, float]] = {}
    for name, ids in zip(SPLIT_NAMES, (split.train, split.primary_test, split.secondary_test)):
        if not ids:
            continue
        preds = evaluate_bundle(bundle, cells, ids, name)
        out[name] = (rmse(preds), mape(preds))
    return out


def run_experiments(
    cells: Mapping[str, CellRecord],
    split: DatasetSplit,
    arch: NetworkArch,
    config: TrainConfig,
    hyper: AdamHyper = AdamHyper(),
    k: int = 10,
    base_seed: int = 0,
    grid: VoltageGrid = DEFAULT_GRID,
) -> EvalReport:
    """K seeded repeats of one configuration, aggregated to mean +- std."""
    if k < 1:
        raise EmptyInputError("k must be >= 1")
    per_seed = [
        single_seed_run(cells, split, arch, config, hyper, seed, grid)
        for seed in range(base_seed, base_seed + k)
    ]
    stats, raw = aggregate_seed_metrics(per_seed)
    return EvalReport(
        terminal_cycle=config.terminal_cycle,
        augmented=config.augment,
        k=k,
        split_stats=stats,
        per_seed=raw,
    )


def sweep_terminal_cycles(
    cells: Mapping[str, CellRecord],
    split: DatasetSplit,
    arch: NetworkArch,
    config: TrainConfig,
    terminal_cycles: Sequence[int],
    hyper: AdamHyper = AdamHyper(),
    k: int = 10,
    base_seed: int = 0,
    grid: VoltageGrid = DEFAULT_GRID,
    csv_path: str | None = None,
) -> list[EvalReport]:
    """One repeat experiment per terminal cycle; optionally writes plot data."""
    from dataclasses import replace

    reports = []
    for terminal in terminal_cycles:
        cfg = replace(config, terminal_cycle=terminal)
        reports.append(
            run_experiments(cells, split, arch, cfg, hyper, k=k, base_seed=base_seed, grid=grid)
        )
    if csv_path is not None:
        write_plot_csv(reports, csv_path)
    return reports


def write_plot_csv(reports: Sequence[EvalReport], path: str) -> None:
    """Plot-data rows: terminal_cycle,split,metric,mean,std."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["terminal_cycle", "split", "metric", "mean", "std"])
        for report in reports:
            for split, stats in report.split_stats.items():
                writer.writerow([report.terminal_cycle, split, "rmse", repr(stats.rmse_mean), repr(stats.rmse_std)])
                writer.writerow([report.terminal_cycle, split, "mape", repr(stats.mape_mean), repr(stats.mape_std)])


def write_metrics_csv(reports: Sequence[EvalReport], path: str, header_comment: str = "") -> None:
    """Metrics table rows: config,split,metric,mean,std,k."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["config", "split", "metric", "mean", "std", "k"])
        for report in reports:
            for split, stats in report.split_stats.items():
                writer.writerow([report.label, split, "rmse", repr(stats.rmse_mean), repr(stats.rmse_std), report.k])
                writer.writerow([report.label, split, "mape", repr(stats.mape_mean), repr(stats.mape_std), report.k])
