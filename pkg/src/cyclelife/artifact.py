"""Versioned binary container for trained models.

Layout of a model artifact file::

    bytes 0..3    magic b"BCL1"
    bytes 4..11   header length N, little-endian uint64
    bytes 12..12+N-1   JSON header, utf-8
    remainder     parameter payload

The header records the format version, architecture sizes, dropout
configuration, target scale, input window, voltage grid and a shape
manifest (name + shape per tensor, in payload order). The payload is the
concatenation of all tensors as little-endian float64 in C order:
first the scaler mean and std, then the network parameters in
``Network.param_tensors()`` order. Save/load round-trips bit-exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict

import numpy as np

from .errors import ArtifactVersionMismatchError, SchemaViolationError
from .features import Scaler, VoltageGrid
from .nn import DenseLayerParams, LstmLayerParams, Network, NetworkArch
from .pipeline import ModelBundle

MAGIC = b"BCL1"
FORMAT_VERSION = 1


def _bundle_tensors(bundle: ModelBundle) -> dict[str, np.ndarray]:
    tensors = {"scaler.mean": bundle.scaler.mean, "scaler.std": bundle.scaler.std}
    tensors.update(bundle.net.param_tensors())
    return tensors


def save_model(path: str | os.PathLike, bundle: ModelBundle) -> None:
    tensors = _bundle_tensors(bundle)
    header = {
        "format_version": FORMAT_VERSION,
        "arch": asdict(bundle.net.arch),
        "target_scale": bundle.target_scale,
        "window": {
            "start_cycle": bundle.start_cycle,
            "terminal_cycle": bundle.terminal_cycle,
            "baseline_cycle": bundle.baseline_cycle,
        },
        "grid": {
            "v_high": bundle.grid.v_high,
            "v_low": bundle.grid.v_low,
            "step": bundle.grid.step,
        },
        "tensors": [{"name": name, "shape": list(t.shape)} for name, t in tensors.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for tensor in tensors.values():
            fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def load_model(path: str | os.PathLike) -> ModelBundle:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise ArtifactVersionMismatchError(f"{path}: not a model artifact (bad magic)")
    header_len = int.from_bytes(blob[4:12], "little")
    if len(blob) < 12 + header_len:
        raise SchemaViolationError("header", f"{path}: truncated header")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise SchemaViolationError("header", f"{path}: unreadable header ({err})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise ArtifactVersionMismatchError(
            f"{path}: format version {header.get('format_version')!r}, expected {FORMAT_VERSION}"
        )

    payload = blob[12 + header_len :]
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(payload):
            raise SchemaViolationError("payload", f"{path}: truncated tensor payload")
        tensors[entry["name"]] = (
            np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += nbytes
    if offset != len(payload):
        raise SchemaViolationError("payload", f"{path}: trailing bytes after tensors")

    arch = NetworkArch(**header["arch"])
    expected = {
        "scaler.mean",
        "scaler.std",
        "lstm1.input_weights",
        "lstm1.recurrent_weights",
        "lstm1.bias",
        "lstm2.input_weights",
        "lstm2.recurrent_weights",
        "lstm2.bias",
        "dense1.weights",
        "dense1.bias",
        "dense2.weights",
        "dense2.bias",
    }
    missing = expected - set(tensors)
    if missing:
        raise SchemaViolationError("tensors", f"{path}: missing tensors {sorted(missing)}")

    net = Network(
        arch=arch,
        lstm1=LstmLayerParams(
            tensors["lstm1.input_weights"],
            tensors["lstm1.recurrent_weights"],
            tensors["lstm1.bias"],
        ),
        lstm2=LstmLayerParams(
            tensors["lstm2.input_weights"],
            tensors["lstm2.recurrent_weights"],
            tensors["lstm2.bias"],
        ),
        dense1=DenseLayerParams(tensors["dense1.weights"], tensors["dense1.bias"], "relu"),
        dense2=DenseLayerParams(tensors["dense2.weights"], tensors["dense2.bias"], "identity"),
    )
    window = header["window"]
    grid_doc = header["grid"]
    return ModelBundle(
        net=net,
        scaler=Scaler(mean=tensors["scaler.mean"], std=tensors["scaler.std"]),
        target_scale=float(header["target_scale"]),
        start_cycle=int(window["start_cycle"]),
        terminal_cycle=int(window["terminal_cycle"]),
        baseline_cycle=int(window["baseline_cycle"]),
        grid=VoltageGrid(
            v_high=float(grid_doc["v_high"]),
            v_low=float(grid_doc["v_low"]),
            step=float(grid_doc["step"]),
        ),
    )
