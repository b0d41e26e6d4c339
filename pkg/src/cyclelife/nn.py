"""Two-layer LSTM regressor with a dense head, written directly on numpy.

Forward, backward (full backpropagation through time) and a central
finite-difference gradient checker all live here; no autodiff framework is
involved. Gate blocks are packed row-wise in the fixed order
[input i, forget f, candidate g, output o], so each LSTM layer carries one
(4H x D) input matrix, one (4H x H) recurrent matrix and a 4H bias. The cell
follows the standard non-peephole equations

    i, f, o = sigmoid(z_i), sigmoid(z_f), sigmoid(z_o)
    g       = tanh(z_g)
    c_t     = f * c_{t-1} + i * g
    h_t     = o * tanh(c_t)

and the regression head reads only the final hidden state of the second
layer (sequence to one). Inverted dropout is applied during training to the
first layer's output sequence, the second layer's final output and the
32-unit dense output; evaluation applies no dropout and needs no rescaling.

The core routines are batch-first (a leading axis of independent samples,
which the training loop exploits to amortize numpy dispatch overhead); the
single-sample operations are thin adapters over the same code, so the
gradient checker certifies exactly the path training uses. All arithmetic
is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    EmptyInputError,
    InvalidArchitectureError,
    InvalidParamsError,
    LengthMismatchError,
    ShapeMismatchError,
    StaleCacheError,
)
from .features import SequenceSample

# Gradients mirror Network.param_tensors(): one array per parameter tensor.
Gradients = dict[str, np.ndarray]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Equivalent to 1/(1+exp(-x)) but stable for any magnitude.
    return 0.5 * np.tanh(0.5 * x) + 0.5


@dataclass
class LstmLayerParams:
    """Parameters of one LSTM layer, gate blocks stacked as [i, f, g, o]."""

    input_weights: np.ndarray      # (4H, D)
    recurrent_weights: np.ndarray  # (4H, H)
    bias: np.ndarray               # (4H,)

    def __post_init__(self):
        w, u, b = self.input_weights, self.recurrent_weights, self.bias
        if w.ndim != 2 or u.ndim != 2 or b.ndim != 1:
            raise ShapeMismatchError("LSTM parameter tensors have wrong ranks")
        if w.shape[0] % 4 != 0:
            raise ShapeMismatchError("first LSTM dimension must be a multiple of 4")
        h = w.shape[0] // 4
        if u.shape != (4 * h, h) or b.shape != (4 * h,):
            raise ShapeMismatchError(
                f"inconsistent LSTM shapes: W {w.shape}, U {u.shape}, b {b.shape}"
            )

    @property
    def hidden_size(self) -> int:
        return self.input_weights.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.input_weights.shape[1]


@dataclass
class DenseLayerParams:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray     # (out,)
    activation: str = "identity"  # "relu" | "identity"

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatchError(
                f"inconsistent dense shapes: W {self.weights.shape}, b {self.bias.shape}"
            )
        if self.activation not in ("relu", "identity"):
            raise InvalidParamsError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class NetworkArch:
    """Sizes and dropout configuration of the regressor."""

    input_size: int = 151
    hidden1: int = 64
    hidden2: int = 128
    dense_units: int = 32
    dropout_rate: float = 0.2
    dropout_lstm1: bool = True
    dropout_lstm2: bool = True
    dropout_dense1: bool = True

    def __post_init__(self):
        if min(self.input_size, self.hidden1, self.hidden2, self.dense_units) < 1:
            raise InvalidArchitectureError("all layer sizes must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidArchitectureError("dropout_rate must lie in [0, 1)")


@dataclass
class Network:
    """All trainable parameters of the LSTM -> LSTM -> dense -> dense regressor."""

    arch: NetworkArch
    lstm1: LstmLayerParams
    lstm2: LstmLayerParams
    dense1: DenseLayerParams
    dense2: DenseLayerParams

    def __post_init__(self):
        a = self.arch
        checks = (
            (self.lstm1.input_size, a.input_size),
            (self.lstm1.hidden_size, a.hidden1),
            (self.lstm2.input_size, a.hidden1),
            (self.lstm2.hidden_size, a.hidden2),
            (self.dense1.weights.shape, (a.dense_units, a.hidden2)),
            (self.dense2.weights.shape, (1, a.dense_units)),
        )
        for got, want in checks:
            if got != want:
                raise ShapeMismatchError(f"parameter shape {got} does not match architecture {want}")

    def param_tensors(self) -> dict[str, np.ndarray]:
        """Parameter tensors keyed by stable names, in a fixed order."""
        return {
            "lstm1.input_weights": self.lstm1.input_weights,
            "lstm1.recurrent_weights": self.lstm1.recurrent_weights,
            "lstm1.bias": self.lstm1.bias,
            "lstm2.input_weights": self.lstm2.input_weights,
            "lstm2.recurrent_weights": self.lstm2.recurrent_weights,
            "lstm2.bias": self.lstm2.bias,
            "dense1.weights": self.dense1.weights,
            "dense1.bias": self.dense1.bias,
            "dense2.weights": self.dense2.weights,
            "dense2.bias": self.dense2.bias,
        }


def init_network(arch: NetworkArch, seed: int) -> Network:
    """Seeded uniform fan-based init; LSTM forget-gate biases start at 1."""
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in, fan_out):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    def lstm_layer(d, h):
        w = uniform((4 * h, d), d, h)
        u = uniform((4 * h, h), h, h)
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0  # forget gate block
        return LstmLayerParams(w, u, b)

    lstm1 = lstm_layer(arch.input_size, arch.hidden1)
    lstm2 = lstm_layer(arch.hidden1, arch.hidden2)
    dense1 = DenseLayerParams(
        uniform((arch.dense_units, arch.hidden2), arch.hidden2, arch.dense_units),
        np.zeros(arch.dense_units),
        activation="relu",
    )
    dense2 = DenseLayerParams(
        uniform((1, arch.dense_units), arch.dense_units, 1), np.zeros(1), activation="identity"
    )
    return Network(arch, lstm1, lstm2, dense1, dense2)


@dataclass
class LstmCache:
    """Per-step state of an LSTM forward pass, sufficient for exact backward.

    Sequence arrays are time-major, (T, B, ...), so every per-step slice is
    contiguous. Single-sample callers see B = 1.
    """

    inputs: np.ndarray     # (T, B, D)
    gates: np.ndarray      # (T, B, 4H) activated gates [i, f, g, o]
    cell: np.ndarray       # (T, B, H)
    tanh_cell: np.ndarray  # (T, B, H)
    hidden: np.ndarray     # (T, B, H)
    h0: np.ndarray         # (B, H)
    c0: np.ndarray         # (B, H)


def _lstm_forward(
    params: LstmLayerParams,
    inputs: np.ndarray,
    h0: np.ndarray | None = None,
    c0: np.ndarray | None = None,
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray], LstmCache]:
    """Batched LSTM forward over time-major (T, B, D) inputs."""
    steps, b, width = inputs.shape
    if width != params.input_size:
        raise ShapeMismatchError(
            f"inputs {inputs.shape} do not match layer input size {params.input_size}"
        )
    hsize = params.hidden_size
    h = np.zeros((b, hsize)) if h0 is None else h0
    c = np.zeros((b, hsize)) if c0 is None else c0
    if h.shape != (b, hsize) or c.shape != (b, hsize):
        raise ShapeMismatchError("h0/c0 shapes do not match the batch and hidden size")

    cache = LstmCache(
        inputs=inputs,
        gates=np.empty((steps, b, 4 * hsize)),
        cell=np.empty((steps, b, hsize)),
        tanh_cell=np.empty((steps, b, hsize)),
        hidden=np.empty((steps, b, hsize)),
        h0=h.copy(),
        c0=c.copy(),
    )
    # Input projections for all samples and steps in one product; only the
    # recurrent term is sequential.
    z_in = (inputs.reshape(steps * b, width) @ params.input_weights.T).reshape(
        steps, b, 4 * hsize
    )
    z_in += params.bias
    u_t = np.ascontiguousarray(params.recurrent_weights.T)
    i_sl, f_sl = slice(0, hsize), slice(hsize, 2 * hsize)
    g_sl, o_sl = slice(2 * hsize, 3 * hsize), slice(3 * hsize, 4 * hsize)
    sig_sl = slice(0, 2 * hsize)  # i and f are adjacent; o handled separately
    for t in range(steps):
        z = z_in[t]
        z += h @ u_t
        # sigmoid(x) = 0.5 * tanh(0.5 x) + 0.5, fused over the i/f and o blocks.
        z[:, sig_sl] *= 0.5
        z[:, o_sl] *= 0.5
        gates = cache.gates[t]
        np.tanh(z, out=gates)
        gates[:, sig_sl] *= 0.5
        gates[:, sig_sl] += 0.5
        gates[:, o_sl] *= 0.5
        gates[:, o_sl] += 0.5
        c_new = cache.cell[t]
        np.multiply(gates[:, f_sl], c, out=c_new)
        c_new += gates[:, i_sl] * gates[:, g_sl]
        tc = cache.tanh_cell[t]
        np.tanh(c_new, out=tc)
        h_new = cache.hidden[t]
        np.multiply(gates[:, o_sl], tc, out=h_new)
        h, c = h_new, c_new
    return cache.hidden, (h.copy(), c.copy()), cache


def _lstm_backward(
    params: LstmLayerParams,
    cache: LstmCache,
    d_hidden: np.ndarray | None,
    dh_final: np.ndarray | None = None,
    dc_final: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Batched backpropagation through time for one layer.

    `d_hidden` is the (T, B, H) gradient flowing into each emitted hidden
    state (None means zeros); `dh_final`/`dc_final` add gradient at the last
    step only. Returns (dW, dU, db, d_inputs) with parameter gradients
    summed over the batch.
    """
    steps, b, width = cache.inputs.shape
    hsize = params.hidden_size
    gates, cell, tanh_cell = cache.gates, cache.cell, cache.tanh_cell
    i_sl, f_sl = slice(0, hsize), slice(hsize, 2 * hsize)
    g_sl, o_sl = slice(2 * hsize, 3 * hsize), slice(3 * hsize, 4 * hsize)

    dz_all = np.empty((steps, b, 4 * hsize))
    dh_next = np.zeros((b, hsize)) if dh_final is None else dh_final.copy()
    dc_next = np.zeros((b, hsize)) if dc_final is None else dc_final.copy()
    dh_buf = np.empty((b, hsize))
    dc = np.empty((b, hsize))
    tmp = np.empty((b, hsize))
    u = params.recurrent_weights
    for t in range(steps - 1, -1, -1):
        if d_hidden is None:
            dh = dh_next
        else:
            np.add(d_hidden[t], dh_next, out=dh_buf)
            dh = dh_buf
        g_t = gates[t]
        a_i, a_f = g_t[:, i_sl], g_t[:, f_sl]
        a_g, a_o = g_t[:, g_sl], g_t[:, o_sl]
        tc = tanh_cell[t]
        c_prev = cell[t - 1] if t > 0 else cache.c0
        # dc = dc_next + dh * a_o * (1 - tc^2)
        np.multiply(tc, tc, out=dc)
        np.subtract(1.0, dc, out=dc)
        dc *= a_o
        dc *= dh
        dc += dc_next
        dz = dz_all[t]
        dzi, dzf, dzg, dzo = dz[:, i_sl], dz[:, f_sl], dz[:, g_sl], dz[:, o_sl]
        np.multiply(dc, a_g, out=dzi)
        dzi *= a_i
        np.subtract(1.0, a_i, out=tmp)
        dzi *= tmp
        np.multiply(dc, c_prev, out=dzf)
        dzf *= a_f
        np.subtract(1.0, a_f, out=tmp)
        dzf *= tmp
        np.multiply(dc, a_i, out=dzg)
        np.multiply(a_g, a_g, out=tmp)
        np.subtract(1.0, tmp, out=tmp)
        dzg *= tmp
        np.multiply(dh, tc, out=dzo)
        dzo *= a_o
        np.subtract(1.0, a_o, out=tmp)
        dzo *= tmp
        np.multiply(dc, a_f, out=dc_next)
        dh_next = dz @ u
    dz_flat = dz_all.reshape(steps * b, 4 * hsize)
    d_w = dz_flat.T @ cache.inputs.reshape(steps * b, width)
    d_b = dz_flat.sum(axis=0)
    h_prev = np.concatenate([cache.h0[None, :, :], cache.hidden[:-1]], axis=0)
    d_u = dz_flat.T @ h_prev.reshape(steps * b, hsize)
    d_inputs = (dz_flat @ params.input_weights).reshape(steps, b, width)
    return d_w, d_u, d_b, d_inputs


def lstm_forward(
    params: LstmLayerParams,
    inputs: np.ndarray,
    h0: np.ndarray | None = None,
    c0: np.ndarray | None = None,
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray], LstmCache]:
    """Run one LSTM layer over a single (T, D) sequence.

    Returns the (T, H) hidden sequence, the final (h, c) pair and the cache
    for the backward pass.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2:
        raise ShapeMismatchError(f"expected a (T, D) sequence, got shape {inputs.shape}")
    h0_b = None if h0 is None else np.asarray(h0, dtype=np.float64)[None, :]
    c0_b = None if c0 is None else np.asarray(c0, dtype=np.float64)[None, :]
    hidden, (h_t, c_t), cache = _lstm_forward(params, inputs[None], h0_b, c0_b)
    return hidden[0], (h_t[0], c_t[0]), cache


@dataclass(frozen=True)
class DropoutMasks:
    """Frozen inverted-dropout masks; entries are 0 or 1/keep_prob.

    Batch-first shapes: lstm1_out (B, T, H1), lstm2_final (B, H2),
    dense1_out (B, dense_units). Single-sample masks use B = 1.
    """

    lstm1_out: np.ndarray
    lstm2_final: np.ndarray
    dense1_out: np.ndarray


def sample_dropout_masks(
    arch: NetworkArch, n_steps: int, rng: np.random.Generator, batch: int = 1
) -> DropoutMasks:
    """Draw inverted-dropout masks for a train-mode pass.

    Masks are drawn sample-by-sample in batch order, so a batched pass
    consumes the rng stream exactly like the equivalent sequence of
    single-sample passes.
    """
    keep = 1.0 - arch.dropout_rate

    def draw(shape, enabled):
        if not enabled or arch.dropout_rate == 0.0:
            return np.ones(shape)
        return (rng.random(shape) < keep) / keep

    per_sample = [
        (
            draw((n_steps, arch.hidden1), arch.dropout_lstm1),
            draw((arch.hidden2,), arch.dropout_lstm2),
            draw((arch.dense_units,), arch.dropout_dense1),
        )
        for _ in range(batch)
    ]
    return DropoutMasks(
        lstm1_out=np.stack([m[0] for m in per_sample]),
        lstm2_final=np.stack([m[1] for m in per_sample]),
        dense1_out=np.stack([m[2] for m in per_sample]),
    )


@dataclass
class ForwardCache:
    """Everything a train-mode forward pass must retain for exact backward."""

    net: Network
    masks: DropoutMasks
    lstm1_cache: LstmCache
    lstm2_cache: LstmCache
    h2_final_dropped: np.ndarray    # (B, H2)
    dense1_pre: np.ndarray          # (B, dense_units)
    dense1_out_dropped: np.ndarray  # (B, dense_units)
    predictions: np.ndarray         # (B,)


def _network_forward_batch(
    net: Network, x: np.ndarray, masks: DropoutMasks | None
) -> tuple[np.ndarray, ForwardCache | None]:
    """Batched forward; `masks` present means train mode (dropout + cache)."""
    if x.ndim != 3 or x.shape[2] != net.arch.input_size:
        raise ShapeMismatchError(
            f"feature width {x.shape[-1]} does not match network input size {net.arch.input_size}"
        )
    train = masks is not None
    h1_seq, _, cache1 = _lstm_forward(net.lstm1, x)
    h1 = h1_seq * masks.lstm1_out if train else h1_seq
    _, (h2_final, _), cache2 = _lstm_forward(net.lstm2, h1)
    h2 = h2_final * masks.lstm2_final if train else h2_final
    a1 = h2 @ net.dense1.weights.T + net.dense1.bias
    r1 = np.maximum(a1, 0.0)
    r1 = r1 * masks.dense1_out if train else r1
    preds = r1 @ net.dense2.weights[0] + net.dense2.bias[0]
    if not train:
        return preds, None
    return preds, ForwardCache(
        net=net,
        masks=masks,
        lstm1_cache=cache1,
        lstm2_cache=cache2,
        h2_final_dropped=h2,
        dense1_pre=a1,
        dense1_out_dropped=r1,
        predictions=preds,
    )


def _network_backward_batch(net: Network, cache: ForwardCache, dpred: np.ndarray) -> Gradients:
    """Gradients of sum_b dpred[b] * prediction[b], summed over the batch."""
    if cache.net is not net:
        raise StaleCacheError("cache was produced by a different network")
    grads: Gradients = {}
    r1 = cache.dense1_out_dropped
    grads["dense2.weights"] = (dpred @ r1)[None, :]
    grads["dense2.bias"] = np.array([dpred.sum()])
    dr1 = dpred[:, None] * net.dense2.weights[0]
    dr1 = dr1 * cache.masks.dense1_out
    da1 = dr1 * (cache.dense1_pre > 0.0)
    grads["dense1.weights"] = da1.T @ cache.h2_final_dropped
    grads["dense1.bias"] = da1.sum(axis=0)

    dh2 = da1 @ net.dense1.weights
    dh2_final = dh2 * cache.masks.lstm2_final
    dw2, du2, db2, d_h1_dropped = _lstm_backward(
        net.lstm2, cache.lstm2_cache, None, dh_final=dh2_final
    )
    grads["lstm2.input_weights"] = dw2
    grads["lstm2.recurrent_weights"] = du2
    grads["lstm2.bias"] = db2

    d_h1 = d_h1_dropped * cache.masks.lstm1_out
    dw1, du1, db1, _ = _lstm_backward(net.lstm1, cache.lstm1_cache, d_h1)
    grads["lstm1.input_weights"] = dw1
    grads["lstm1.recurrent_weights"] = du1
    grads["lstm1.bias"] = db1
    return grads


def network_forward(
    net: Network,
    sample: SequenceSample,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    masks: DropoutMasks | None = None,
) -> tuple[float, ForwardCache | None]:
    """Predict one sequence. Train mode applies dropout and returns a cache.

    Train mode needs either an rng (masks are drawn) or explicit frozen
    masks. Eval mode applies no dropout and returns no cache.
    """
    if mode not in ("train", "eval"):
        raise InvalidParamsError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = sample.features
    train = mode == "train"
    if train and masks is None:
        if rng is None:
            raise InvalidParamsError("train mode needs an rng or explicit dropout masks")
        masks = sample_dropout_masks(net.arch, x.shape[0], rng)
    preds, cache = _network_forward_batch(net, x[None], masks if train else None)
    return float(preds[0]), cache


def network_backward(net: Network, cache: ForwardCache, dloss_dpred: float) -> Gradients:
    """Exact reverse-mode gradients of one sample's loss contribution."""
    return _network_backward_batch(net, cache, np.array([float(dloss_dpred)]))


def zero_gradients(net: Network) -> Gradients:
    return {name: np.zeros_like(t) for name, t in net.param_tensors().items()}


def mse_loss(
    predictions: Sequence[float] | np.ndarray, targets: Sequence[float] | np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to the predictions."""
    preds = np.asarray(predictions, dtype=np.float64)
    tgts = np.asarray(targets, dtype=np.float64)
    if preds.shape != tgts.shape or preds.ndim != 1:
        raise LengthMismatchError(f"predictions {preds.shape} vs targets {tgts.shape}")
    if preds.size == 0:
        raise EmptyInputError("mse_loss needs at least one pair")
    diff = preds - tgts
    loss = float(diff @ diff) / preds.size
    return loss, 2.0 * diff / preds.size


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float


def grad_check(
    net: Network,
    sample: SequenceSample,
    masks: DropoutMasks,
    eps: float = 1e-5,
    analytic: Gradients | None = None,
) -> GradCheckResult:
    """Compare analytic BPTT gradients against central finite differences.

    Dropout masks must be frozen so the single-sample MSE loss is a
    deterministic function of the parameters. `analytic` overrides the
    internally computed gradients (used by the CLI's negative-control hook).
    Relative error is |a - n| / max(1e-8, |a| + |n|).
    """

    def loss_at_current_params() -> float:
        pred, _ = network_forward(net, sample, mode="train", masks=masks)
        return mse_loss([pred], [sample.target])[0]

    if analytic is None:
        pred, cache = network_forward(net, sample, mode="train", masks=masks)
        _, dpred = mse_loss([pred], [sample.target])
        analytic = network_backward(net, cache, dpred[0])

    worst = GradCheckResult(0.0, "", (), 0.0, 0.0)
    for name, tensor in net.param_tensors().items():
        flat = tensor.ravel()  # view; perturb in place and restore
        a_flat = analytic[name].ravel()
        for idx in range(flat.size):
            saved = flat[idx]
            flat[idx] = saved + eps
            loss_plus = loss_at_current_params()
            flat[idx] = saved - eps
            loss_minus = loss_at_current_params()
            flat[idx] = saved
            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            a = a_flat[idx]
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if rel > worst.max_rel_error:
                worst = GradCheckResult(
                    rel, name, tuple(int(i) for i in np.unravel_index(idx, tensor.shape)),
                    float(a), float(numeric),
                )
    return worst
