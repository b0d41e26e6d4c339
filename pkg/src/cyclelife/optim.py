"""Adam with step-count learning-rate decay, mini-batching and the epoch loop.

The update rule is the bias-corrected form:

    t <- t + 1
    m <- b1*m + (1-b1)*g        mhat = m / (1 - b1^t)
    v <- b2*v + (1-b2)*g^2      vhat = v / (1 - b2^t)
    theta <- theta - lr_t * mhat / (sqrt(vhat) + eps)

with lr_t = lr0 / (1 + decay * t). Batch gradients are arithmetic means of
per-sample gradients, which matches the mean-reduction MSE loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    EmptyInputError,
    InvalidParamsError,
    NonFiniteGradientError,
    NonFiniteLossError,
    ShapeMismatchError,
)
from .features import SequenceSample
from .nn import (
    Gradients,
    Network,
    _network_backward_batch,
    _network_forward_batch,
    mse_loss,
    network_backward,
    network_forward,
    sample_dropout_masks,
)


@dataclass(frozen=True)
class AdamHyper:
    lr0: float = 1e-3
    decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr0 > 0:
            raise InvalidParamsError("lr0 must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidParamsError("betas must lie in [0, 1)")
        if not self.eps > 0:
            raise InvalidParamsError("eps must be > 0")
        if self.decay < 0:
            raise InvalidParamsError("decay must be >= 0")


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_tensors(cls, tensors: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in tensors.items()},
            v={k: np.zeros_like(a) for k, a in tensors.items()},
        )

    @classmethod
    def for_network(cls, net: Network) -> "AdamState":
        return cls.for_tensors(net.param_tensors())


def learning_rate_at(hyper: AdamHyper, step: int) -> float:
    return hyper.lr0 / (1.0 + hyper.decay * step)


def adam_update_tensors(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    hyper: AdamHyper,
) -> AdamState:
    """One Adam step applied in place to a dict of parameter tensors."""
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ShapeMismatchError("parameter, gradient and state keys differ")
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeMismatchError(f"{name}: gradient shape {g.shape} vs parameter {theta.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient in {name}")
    state.t += 1
    lr_t = learning_rate_at(hyper, state.t)
    bc1 = 1.0 - hyper.beta1 ** state.t
    bc2 = 1.0 - hyper.beta2 ** state.t
    for name, theta in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * g * g
        theta -= lr_t * (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)
    return state


def adam_step(
    net: Network, grads: Gradients, state: AdamState, hyper: AdamHyper
) -> tuple[Network, AdamState]:
    """One Adam step over every parameter tensor of the network (in place)."""
    state = adam_update_tensors(net.param_tensors(), grads, state, hyper)
    return net, state


def make_batches(
    sample_count: int, batch_size: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Seeded permutation of range(sample_count), chunked into batches."""
    if sample_count < 1:
        raise EmptyInputError("sample_count must be >= 1")
    if batch_size < 1:
        raise InvalidParamsError("batch_size must be >= 1")
    perm = rng.permutation(sample_count)
    return [perm[i : i + batch_size] for i in range(0, sample_count, batch_size)]


@dataclass(frozen=True)
class TrainConfig:
    """Training-loop settings plus the window/augmentation recipe they apply to."""

    batch_size: int = 128
    epochs: int = 500
    seed: int = 0
    shuffle: bool = True
    start_cycle: int = 11
    terminal_cycle: int = 80
    baseline_cycle: int = 10
    augment: bool = False
    shift_step: int = 3
    max_shift: int = 6
    life_threshold: float = 775.0
    target_scale: float = 1000.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidParamsError("batch_size must be >= 1")
        if self.epochs < 0:
            raise InvalidParamsError("epochs must be >= 0")
        if not self.target_scale > 0:
            raise InvalidParamsError("target_scale must be > 0")


def train(
    net: Network,
    samples: Sequence[SequenceSample],
    config: TrainConfig,
    hyper: AdamHyper = AdamHyper(),
    on_epoch=None,
) -> tuple[Network, list[float]]:
    """Mini-batch Adam training; returns the net and per-epoch mean loss.

    Each batch runs a train-mode forward per sample, averages the squared
    errors, backpropagates the mean gradient and takes one Adam step.
    Fully deterministic given config.seed.
    """
    if not samples:
        raise EmptyInputError("no training samples")
    width = samples[0].features.shape[1]
    if any(s.features.shape[1] != width for s in samples):
        raise ShapeMismatchError("training samples disagree on feature width")

    shuffle_rng = np.random.default_rng([config.seed, 0])
    dropout_rng = np.random.default_rng([config.seed, 1])
    state = AdamState.for_network(net)
    targets = np.array([s.target for s in samples])
    n = len(samples)
    # Samples of equal length can be stacked into one batched pass, which is
    # mathematically the per-sample computation with the dispatch overhead
    # amortized; ragged lengths fall back to the per-sample loop.
    uniform_steps = len({s.features.shape[0] for s in samples}) == 1

    history: list[float] = []
    for epoch in range(config.epochs):
        if config.shuffle:
            batches = make_batches(n, config.batch_size, shuffle_rng)
        else:
            batches = [np.arange(n)[i : i + config.batch_size] for i in range(0, n, config.batch_size)]
        sq_err_sum = 0.0
        for batch_no, batch in enumerate(batches):
            if uniform_steps:
                x = np.stack([samples[idx].features for idx in batch])
                masks = sample_dropout_masks(net.arch, x.shape[1], dropout_rng, batch=batch.size)
                preds, cache = _network_forward_batch(net, x, masks)
                loss, dpred = mse_loss(preds, targets[batch])
                if not math.isfinite(loss):
                    raise NonFiniteLossError(epoch, batch_no)
                total = _network_backward_batch(net, cache, dpred)
            else:
                preds = np.empty(batch.size)
                caches = []
                for k, idx in enumerate(batch):
                    preds[k], cache = network_forward(
                        net, samples[idx], mode="train", rng=dropout_rng
                    )
                    caches.append(cache)
                loss, dpred = mse_loss(preds, targets[batch])
                if not math.isfinite(loss):
                    raise NonFiniteLossError(epoch, batch_no)
                total = network_backward(net, caches[0], dpred[0])
                for k in range(1, batch.size):
                    part = network_backward(net, caches[k], dpred[k])
                    for name in total:
                        total[name] += part[name]
            adam_step(net, total, state, hyper)
            sq_err_sum += loss * batch.size
        history.append(sq_err_sum / n)
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return net, history
