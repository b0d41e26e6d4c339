"""Command-line entry point for the cycle-life pipeline.

Subcommands: synth, train, evaluate, baseline, gradcheck, predict.
Settings come from an optional JSON config file merged over built-in
defaults; command-line flags win over both. Every command is deterministic
given its config and seeds, and the effective configuration is echoed as a
comment line at the top of every CSV it writes.

Exit codes: 0 success, 1 tolerance/validation failure, 2 I/O or schema error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from typing import Any

import numpy as np

from . import artifact, baseline, dataset, evaluation, pipeline
from .errors import (
    ArtifactVersionMismatchError,
    CycleLifeError,
    InvalidParamsError,
    MissingBaselineCycleError,
    MissingFileError,
    MonotonicityViolationError,
    SchemaViolationError,
    WindowExceedsDataError,
)
from .features import DEFAULT_GRID, apply_scaler, build_sequence
from .nn import NetworkArch, grad_check, init_network, mse_loss, network_backward, network_forward, sample_dropout_masks
from .optim import AdamHyper, TrainConfig, learning_rate_at
from .features import SequenceSample

IO_ERRORS = (
    MissingFileError,
    SchemaViolationError,
    MonotonicityViolationError,
    ArtifactVersionMismatchError,
)

DEFAULTS: dict[str, Any] = {
    "data": None,
    "out": "out",
    "seed": 0,
    "window": {"start_cycle": 11, "terminal_cycle": 80, "baseline_cycle": 10},
    "arch": {
        "hidden1": 64,
        "hidden2": 128,
        "dense_units": 32,
        "dropout": 0.2,
        # "drop": the value is the drop probability; "keep": it is the
        # retained probability and the drop rate becomes 1 - value.
        "dropout_interpretation": "drop",
        "dropout_lstm1": True,
        "dropout_lstm2": True,
        "dropout_dense1": True,
    },
    "train": {"batch_size": 128, "epochs": 500, "shuffle": True, "target_scale": 1000.0},
    "adam": {"lr": 1e-3, "decay": 1e-6, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    "augment": {"enabled": False, "shift_step": 3, "max_shift": 6, "life_threshold": 775.0},
    "eval": {"k": 10, "base_seed": 0, "terminal_cycles": [40, 50, 60, 70, 80, 90, 100]},
    "baseline": {"target_transform": "log10", "c_hi": 100, "c_lo": 10},
    "synth": {
        "count": 124,
        "nominal_capacity": 1.1,
        "life_range": [150, 2300],
        "gamma_range": [0.7, 1.6],
        "vmid_range": [2.6, 3.1],
        "width_range": [0.15, 0.35],
        "noise_std": 0.002,
        "cycles_to_emit": 110,
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if key in out and isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_run_config(args: argparse.Namespace) -> dict:
    cfg = DEFAULTS
    config_path = getattr(args, "config", None)
    if config_path:
        if not os.path.isfile(config_path):
            raise MissingFileError(f"config file not found: {config_path}")
        with open(config_path, "r", encoding="utf-8") as fh:
            try:
                file_cfg = json.load(fh)
            except json.JSONDecodeError as err:
                raise SchemaViolationError("<config>", f"{config_path}: {err}") from None
        if not isinstance(file_cfg, dict):
            raise SchemaViolationError("<config>", "config root must be a JSON object")
        cfg = _deep_merge(cfg, file_cfg)
    # Flat flag overrides.
    for flag in ("data", "out", "seed"):
        value = getattr(args, flag, None)
        if value is not None:
            cfg = _deep_merge(cfg, {flag: value})
    for flag, section, key in (
        ("epochs", "train", "epochs"),
        ("batch_size", "train", "batch_size"),
        ("terminal", "window", "terminal_cycle"),
        ("start", "window", "start_cycle"),
        ("k", "eval", "k"),
        ("base_seed", "eval", "base_seed"),
        ("count", "synth", "count"),
        ("noise_std", "synth", "noise_std"),
        ("hidden1", "arch", "hidden1"),
        ("hidden2", "arch", "hidden2"),
        ("dropout", "arch", "dropout"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            cfg = _deep_merge(cfg, {section: {key: value}})
    if getattr(args, "augment", False):
        cfg = _deep_merge(cfg, {"augment": {"enabled": True}})
    return cfg


def _arch_from_config(cfg: dict) -> NetworkArch:
    a = cfg["arch"]
    rate = float(a["dropout"])
    if a["dropout_interpretation"] == "keep":
        rate = 1.0 - rate
    elif a["dropout_interpretation"] != "drop":
        raise InvalidParamsError("dropout_interpretation must be 'drop' or 'keep'")
    return NetworkArch(
        input_size=DEFAULT_GRID.n_points,
        hidden1=int(a["hidden1"]),
        hidden2=int(a["hidden2"]),
        dense_units=int(a["dense_units"]),
        dropout_rate=rate,
        dropout_lstm1=bool(a["dropout_lstm1"]),
        dropout_lstm2=bool(a["dropout_lstm2"]),
        dropout_dense1=bool(a["dropout_dense1"]),
    )


def _train_config(cfg: dict, seed: int | None = None) -> TrainConfig:
    w, t, aug = cfg["window"], cfg["train"], cfg["augment"]
    return TrainConfig(
        batch_size=int(t["batch_size"]),
        epochs=int(t["epochs"]),
        seed=int(cfg["seed"] if seed is None else seed),
        shuffle=bool(t["shuffle"]),
        start_cycle=int(w["start_cycle"]),
        terminal_cycle=int(w["terminal_cycle"]),
        baseline_cycle=int(w["baseline_cycle"]),
        augment=bool(aug["enabled"]),
        shift_step=int(aug["shift_step"]),
        max_shift=int(aug["max_shift"]),
        life_threshold=float(aug["life_threshold"]),
        target_scale=float(t["target_scale"]),
    )


def _hyper_from_config(cfg: dict) -> AdamHyper:
    a = cfg["adam"]
    return AdamHyper(
        lr0=float(a["lr"]),
        decay=float(a["decay"]),
        beta1=float(a["beta1"]),
        beta2=float(a["beta2"]),
        eps=float(a["eps"]),
    )


def _config_echo(cfg: dict) -> str:
    return "config: " + json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def _require_data(cfg: dict) -> tuple[dict, dataset.DatasetSplit]:
    if not cfg.get("data"):
        raise MissingFileError("no dataset manifest given (use --data or the config file)")
    cells, split = dataset.load_manifest(cfg["data"])
    return pipeline.cells_by_id(cells), split


# --- synth ------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    cfg = load_run_config(args)
    s = cfg["synth"]
    count = int(s["count"])
    if count < 1:
        raise InvalidParamsError("synth count must be >= 1")
    lo, hi = (int(x) for x in s["life_range"])
    cycles_to_emit = int(s["cycles_to_emit"])
    if lo < cycles_to_emit:
        raise InvalidParamsError(
            f"life_range minimum {lo} must be >= cycles_to_emit {cycles_to_emit}"
        )

    rng = np.random.default_rng(int(cfg["seed"]))
    cells = []
    for i in range(count):
        life = int(rng.integers(lo, hi + 1))
        gamma = float(rng.uniform(*s["gamma_range"]))
        vmid = float(rng.uniform(*s["vmid_range"]))
        width = float(rng.uniform(*s["width_range"]))
        cell_seed = int(rng.integers(0, 2**31 - 1))
        params = dataset.SynthParams(
            nominal_capacity=float(s["nominal_capacity"]),
            target_life=life,
            fade_exponent=gamma,
            curve_midpoint=vmid,
            curve_width=width,
            noise_std=float(s["noise_std"]),
            cycles_to_emit=cycles_to_emit,
        )
        cells.append(dataset.synth_cell(params, seed=cell_seed, cell_id=f"cell-{i:04d}"))

    split = dataset.split_dataset(
        cells, fractions=(41 / 124, 43 / 124, 40 / 124), seed=int(cfg["seed"])
    )

    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    rel_paths = []
    for cell in cells:
        rel = f"{cell.cell_id}.json"
        dataset.write_cell(cell, os.path.join(out_dir, rel))
        rel_paths.append(rel)
    dataset.write_manifest(os.path.join(out_dir, "manifest.json"), rel_paths, split)
    print(
        f"wrote {count} cells to {out_dir} "
        f"(splits {len(split.train)}/{len(split.primary_test)}/{len(split.secondary_test)})"
    )
    return 0


# --- train --------------------------------------------------------------------

def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_run_config(args)
    cells, split = _require_data(cfg)
    config = _train_config(cfg)
    hyper = _hyper_from_config(cfg)
    arch = _arch_from_config(cfg)

    progress = None
    if args.verbose:
        every = max(1, config.epochs // 10)

        def progress(epoch, loss):
            if (epoch + 1) % every == 0 or epoch + 1 == config.epochs:
                print(f"epoch {epoch + 1}/{config.epochs} mean_loss={loss:.6g}", file=sys.stderr)

    result = pipeline.train_on_split(cells, split.train, arch, config, hyper, on_epoch=progress)

    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    model_path = os.path.join(out_dir, "model.bcl")
    artifact.save_model(model_path, result.bundle)

    steps_per_epoch = max(1, math.ceil(result.n_samples / config.batch_size))
    history_path = os.path.join(out_dir, "history.csv")
    with open(history_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {_config_echo(cfg)}\n")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "lr"])
        for epoch, loss in enumerate(result.history):
            lr = learning_rate_at(hyper, (epoch + 1) * steps_per_epoch)
            writer.writerow([epoch + 1, repr(loss), repr(lr)])

    final = result.history[-1] if result.history else float("nan")
    print(f"trained {config.epochs} epochs on {result.n_samples} samples, final mean_loss={final:.6g}")
    print(f"artifact -> {model_path}")
    print(f"history  -> {history_path}")
    return 0


# --- evaluate ---------------------------------------------------------------

def _artifact_report(bundle, cells, split) -> evaluation.EvalReport:
    metrics: dict[str, tuple[float, float]] = {}
    for name, ids in zip(
        evaluation.SPLIT_NAMES, (split.train, split.primary_test, split.secondary_test)
    ):
        if not ids:
            continue
        preds = evaluation.evaluate_bundle(bundle, cells, ids, name)
        metrics[name] = (evaluation.rmse(preds), evaluation.mape(preds))
    stats, raw = evaluation.aggregate_seed_metrics([metrics])
    return evaluation.EvalReport(
        terminal_cycle=bundle.terminal_cycle,
        augmented=False,
        k=1,
        split_stats=stats,
        per_seed=raw,
    )


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = load_run_config(args)
    cells, split = _require_data(cfg)
    out_dir = cfg["out"]

    if args.artifact:
        bundle = artifact.load_model(args.artifact)
        reports = [_artifact_report(bundle, cells, split)]
    elif args.sweep:
        config = _train_config(cfg)
        hyper = _hyper_from_config(cfg)
        arch = _arch_from_config(cfg)
        os.makedirs(out_dir, exist_ok=True)
        reports = evaluation.sweep_terminal_cycles(
            cells,
            split,
            arch,
            config,
            terminal_cycles=[int(t) for t in cfg["eval"]["terminal_cycles"]],
            hyper=hyper,
            k=int(cfg["eval"]["k"]),
            base_seed=int(cfg["eval"]["base_seed"]),
            csv_path=os.path.join(out_dir, "sweep.csv"),
        )
    else:
        raise InvalidParamsError("evaluate needs --artifact PATH or --sweep")

    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    evaluation.write_metrics_csv(reports, metrics_path, header_comment=_config_echo(cfg))
    for report in reports:
        for row in report.table_rows():
            print(row)
    print(f"metrics -> {metrics_path}")
    return 0


# --- baseline -----------------------------------------------------------------

def cmd_baseline(args: argparse.Namespace) -> int:
    cfg = load_run_config(args)
    cells, split = _require_data(cfg)
    b = cfg["baseline"]
    c_hi, c_lo = int(b["c_hi"]), int(b["c_lo"])

    train_cells = pipeline.resolve_ids(cells, split.train)
    model = baseline.fit_variance_model(
        train_cells, DEFAULT_GRID, target_transform=str(b["target_transform"]), c_hi=c_hi, c_lo=c_lo
    )

    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    model_path = os.path.join(out_dir, "variance_model.json")
    baseline.save_variance_model(model, model_path)

    metrics_path = os.path.join(out_dir, "baseline_metrics.csv")
    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {_config_echo(cfg)}\n")
        writer = csv.writer(fh)
        writer.writerow(["config", "split", "metric", "mean", "std", "k"])
        label = f"variance@{c_hi}"
        for name, ids in zip(
            evaluation.SPLIT_NAMES, (split.train, split.primary_test, split.secondary_test)
        ):
            if not ids:
                continue
            records = pipeline.resolve_ids(cells, ids)
            predicted = [
                baseline.predict_variance_model(model, cell, DEFAULT_GRID, c_hi, c_lo)
                for cell in records
            ]
            actual = [float(cell.cycle_life) for cell in records]
            preds = evaluation.PredictionSet(np.asarray(predicted), np.asarray(actual), name)
            writer.writerow([label, name, "rmse", repr(evaluation.rmse(preds)), repr(0.0), 1])
            writer.writerow([label, name, "mape", repr(evaluation.mape(preds)), repr(0.0), 1])
    print(f"baseline model -> {model_path}")
    print(f"metrics -> {metrics_path}")
    return 0


# --- gradcheck -----------------------------------------------------------------

def cmd_gradcheck(args: argparse.Namespace) -> int:
    arch = NetworkArch(
        input_size=args.input_size,
        hidden1=args.hidden1,
        hidden2=args.hidden2,
        dropout_rate=args.dropout if args.dropout is not None else 0.2,
    )
    net = init_network(arch, seed=args.seed)
    rng = np.random.default_rng([args.seed, 1])
    features = rng.normal(0.0, 1.0, size=(args.steps, arch.input_size))
    target = float(rng.uniform(0.5, 1.5))
    sample = SequenceSample("gradcheck", 1, args.steps, features, target)
    masks = sample_dropout_masks(arch, args.steps, rng)

    analytic = None
    if args.corrupt_backward:
        pred, cache = network_forward(net, sample, mode="train", masks=masks)
        _, dpred = mse_loss([pred], [sample.target])
        analytic = network_backward(net, cache, dpred[0])
        analytic["dense1.weights"][0, 0] += 0.5  # negative control

    result = grad_check(net, sample, masks, eps=args.eps, analytic=analytic)
    index = ",".join(str(i) for i in result.worst_index)
    print(
        f"max relative error {result.max_rel_error:.6e} at {result.worst_param}[{index}] "
        f"(analytic {result.analytic:.6e}, numeric {result.numeric:.6e})"
    )
    if result.max_rel_error < args.tol:
        print(f"gradient check PASSED (tolerance {args.tol:g})")
        return 0
    print(f"gradient check FAILED (tolerance {args.tol:g})")
    return 1


# --- predict -----------------------------------------------------------------

def cmd_predict(args: argparse.Namespace) -> int:
    bundle = artifact.load_model(args.artifact)
    cell = dataset.load_cell(args.cell)

    start = args.start if args.start is not None else bundle.start_cycle
    terminal = args.terminal if args.terminal is not None else bundle.terminal_cycle
    last_available = max(cell.cycle_indices)
    if terminal > last_available:
        raise WindowExceedsDataError(
            f"cell {cell.cell_id!r}: window terminal {terminal} exceeds available data "
            f"(last cycle {last_available})"
        )
    if not cell.has_cycle(bundle.baseline_cycle):
        raise MissingBaselineCycleError(
            f"cell {cell.cell_id!r} lacks baseline cycle {bundle.baseline_cycle}"
        )

    predicted = pipeline.predict_cell(bundle, cell, start_cycle=start, terminal_cycle=terminal)
    print(f"{cell.cell_id}\t{predicted!r}")

    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cell_id", "predicted_cycle_life"])
            writer.writerow([cell.cell_id, repr(predicted)])
    if args.dump_features:
        sample = build_sequence(cell, start, terminal, bundle.grid, bundle.baseline_cycle)
        sample = apply_scaler(bundle.scaler, sample)
        with open(args.dump_features, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            for row in sample.features:
                writer.writerow([repr(x) for x in row])
    return 0


# --- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cyclelife",
        description="Early battery cycle-life prediction from discharge-curve sequences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--data", help="dataset manifest path")

    p_synth = sub.add_parser("synth", help="generate synthetic cells plus a manifest")
    common(p_synth)
    p_synth.add_argument("--count", type=int, help="number of cells")
    p_synth.add_argument("--noise-std", dest="noise_std", type=float, help="capacity noise (Ah)")
    p_synth.set_defaults(handler=cmd_synth)

    p_train = sub.add_parser("train", help="train the LSTM regressor")
    common(p_train)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--start", type=int, help="window start cycle")
    p_train.add_argument("--terminal", type=int, help="window terminal cycle")
    p_train.add_argument("--hidden1", type=int)
    p_train.add_argument("--hidden2", type=int)
    p_train.add_argument("--dropout", type=float)
    p_train.add_argument("--augment", action="store_true", help="enable shift augmentation")
    p_train.add_argument("--verbose", action="store_true")
    p_train.set_defaults(handler=cmd_train)

    p_eval = sub.add_parser("evaluate", help="evaluate an artifact or run a terminal-cycle sweep")
    common(p_eval)
    p_eval.add_argument("--artifact", help="model artifact to evaluate")
    p_eval.add_argument("--sweep", action="store_true", help="train-and-evaluate sweep")
    p_eval.add_argument("--epochs", type=int)
    p_eval.add_argument("--k", type=int, help="repeats per configuration")
    p_eval.add_argument("--base-seed", dest="base_seed", type=int)
    p_eval.add_argument("--hidden1", type=int)
    p_eval.add_argument("--hidden2", type=int)
    p_eval.add_argument("--augment", action="store_true")
    p_eval.set_defaults(handler=cmd_evaluate)

    p_base = sub.add_parser("baseline", help="fit and score the variance baseline")
    common(p_base)
    p_base.set_defaults(handler=cmd_baseline)

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of the BPTT gradients")
    p_grad.add_argument("--input-size", dest="input_size", type=int, default=5)
    p_grad.add_argument("--hidden1", type=int, default=4)
    p_grad.add_argument("--hidden2", type=int, default=6)
    p_grad.add_argument("--steps", type=int, default=3)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--eps", type=float, default=1e-5)
    p_grad.add_argument("--tol", type=float, default=1e-4)
    p_grad.add_argument("--dropout", type=float, default=None)
    p_grad.add_argument("--corrupt-backward", dest="corrupt_backward", action="store_true",
                        help=argparse.SUPPRESS)
    p_grad.set_defaults(handler=cmd_gradcheck)

    p_pred = sub.add_parser("predict", help="predict cycle life for one cell file")
    p_pred.add_argument("--artifact", required=True)
    p_pred.add_argument("--cell", required=True, help="cell JSON file")
    p_pred.add_argument("--start", type=int)
    p_pred.add_argument("--terminal", type=int)
    p_pred.add_argument("--csv", help="also write the prediction to this CSV")
    p_pred.add_argument("--dump-features", dest="dump_features",
                        help="write the normalized feature matrix to this CSV")
    p_pred.set_defaults(handler=cmd_predict)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except IO_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except CycleLifeError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
