"""Standard probe training: Adam, learning-rate annealing, early stopping.

The annealing protocol: after every epoch the probe is scored on the dev
set (bits per target); an epoch that does not set a new minimum halves the
learning rate, and four such epochs in a row stop training. The returned
probe is the snapshot with the lowest dev loss seen.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .errors import ConsistencyError, NumericalError, ShapeError
from .numerics import (
    AdamState,
    MlpConfig,
    MlpParams,
    adam_step,
    init_params,
    mlp_backward,
    mlp_forward,
    nll_bits_only,
    softmax_nll_bits,
)
from .rng import SplitMix64, derive_seed

LR_FLOOR = 1e-6


@dataclass
class TrainConfig:
    mlp: MlpConfig
    seed: int = 0
    lr: float = 0.001
    batch_size: int = 64
    max_epochs: int = 1000
    anneal_factor: float = 0.5
    patience: int = 4
    annealing_enabled: bool = True

    def __post_init__(self):
        if not (0.0 < self.anneal_factor < 1.0):
            raise ValueError("anneal_factor must lie in (0, 1)")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("patience, batch_size, max_epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class TrainedProbe:
    config: TrainConfig
    params: MlpParams  # best-on-dev snapshot (final params when no dev set)
    epochs_run: int
    dev_loss_history: list[float] = field(default_factory=list)
    lr_history: list[float] = field(default_factory=list)

    @property
    def best_dev_loss(self) -> float:
        return min(self.dev_loss_history) if self.dev_loss_history else float("nan")


@dataclass
class EvalResult:
    accuracy: float
    total_bits: float
    bits_per_target: float
    n: int


def _check_dims(config: MlpConfig, data: Dataset, what: str) -> None:
    if data.dim != config.input_dim:
        raise ShapeError(f"{what}: {data.dim} feature dims, probe expects {config.input_dim}")
    if data.K > config.num_classes:
        raise ConsistencyError(f"{what}: K={data.K} exceeds probe classes {config.num_classes}")


def train_probe(train: Dataset, dev: Dataset | None, config: TrainConfig) -> TrainedProbe:
    """Train one probe; deterministic given (datasets, config)."""
    if train.n == 0:
        raise ConsistencyError("training set is empty")
    _check_dims(config.mlp, train, "train")
    have_dev = dev is not None and dev.n > 0
    if have_dev:
        _check_dims(config.mlp, dev, "dev")
        if dev.K != train.K:
            raise ConsistencyError(f"K mismatch: train {train.K} vs dev {dev.K}")
    elif config.annealing_enabled:
        raise ConsistencyError("annealing requires a non-empty dev set")

    params = init_params(config.mlp, SplitMix64(derive_seed(config.seed, 0)))
    adam = AdamState.for_arrays(params.arrays(), lr=config.lr)
    X, y = train.X, train.y
    n = train.n

    best_loss = float("inf")
    best_params = params.copy()
    dev_history: list[float] = []
    lr_history: list[float] = []
    bad_streak = 0
    epochs_run = 0

    for epoch in range(config.max_epochs):
        order = SplitMix64(derive_seed(config.seed, 1 + epoch)).permutation(n)
        try:
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                logits, cache = mlp_forward(config.mlp, params, X[idx])
                batch_bits, grad_logits = softmax_nll_bits(logits, y[idx])
                if not np.isfinite(batch_bits):
                    raise NumericalError("non-finite loss")
                grads = mlp_backward(config.mlp, params, cache, grad_logits)
                params, adam = adam_step(adam, params, grads)
        except NumericalError as e:
            raise NumericalError(f"training diverged at epoch {epoch}: {e}") from e
        epochs_run = epoch + 1
        lr_history.append(adam.lr)
        if not have_dev:
            continue
        dev_loss = evaluate_params(config.mlp, params, dev).bits_per_target
        if not np.isfinite(dev_loss):
            raise NumericalError(f"dev loss diverged at epoch {epoch}")
        dev_history.append(dev_loss)
        if dev_loss < best_loss:
            best_loss = dev_loss
            best_params = params.copy()
            bad_streak = 0
        else:
            bad_streak += 1
            if config.annealing_enabled:
                adam.lr = max(adam.lr * config.anneal_factor, LR_FLOOR)
                if bad_streak >= config.patience:
                    break

    final = best_params if have_dev else params
    return TrainedProbe(config, final, epochs_run, dev_history, lr_history)


def evaluate_params(config: MlpConfig, params: MlpParams, data: Dataset) -> EvalResult:
    _check_dims(config, data, "eval")
    logits, _ = mlp_forward(config, params, data.X)
    total_bits = nll_bits_only(logits, data.y)
    correct = int((np.argmax(logits, axis=1) == data.y).sum())
    n = data.n
    return EvalResult(
        accuracy=correct / n if n else 0.0,
        total_bits=total_bits,
        bits_per_target=total_bits / n if n else 0.0,
        n=n,
    )


def evaluate(probe: TrainedProbe, data: Dataset) -> EvalResult:
    """Codelength (Shannon-Huffman bits) and argmax accuracy on `data`."""
    return evaluate_params(probe.config.mlp, probe.params, data)
