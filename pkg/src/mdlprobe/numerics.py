"""Dense MLP forward/backward passes, cross-entropy in bits, and Adam.

Matrices are plain float64 numpy arrays in C order. Weights are stored as
(fan_in, fan_out) so a layer computes ``h @ W + b``; for a linear probe the
weight gradient is exactly ``X.T @ grad_logits``. Losses are accumulated in
nats with log-sum-exp stabilization and converted to bits by dividing by
ln 2, so reported codelengths are exact bit counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LabelRangeError, NumericalError, ShapeError
from .rng import SplitMix64

LN2 = math.log(2.0)


@dataclass
class MlpConfig:
    """Probe shape: empty hidden_sizes is a linear probe, one entry a single
    hidden layer, two entries a two-hidden-layer MLP."""

    input_dim: int
    hidden_sizes: list[int]
    num_classes: int

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 1:
            raise ShapeError("input_dim and num_classes must be >= 1")
        if any(h < 1 for h in self.hidden_sizes):
            raise ShapeError("hidden sizes must be >= 1")

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + list(self.hidden_sizes) + [self.num_classes]
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class MlpParams:
    """Per-layer weights (fan_in, fan_out) and biases (fan_out,)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        return list(self.weights) + list(self.biases)


def zero_params(config: MlpConfig) -> MlpParams:
    ws = [np.zeros((fi, fo)) for fi, fo in config.layer_dims()]
    bs = [np.zeros(fo) for _, fo in config.layer_dims()]
    return MlpParams(ws, bs)


def init_params(config: MlpConfig, rng: SplitMix64) -> MlpParams:
    """Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases.

    Uniform draws are consumed in row-major order of each weight matrix,
    layer by layer, so initialization is reproducible from the seed alone.
    """
    weights, biases = [], []
    for fan_in, fan_out in config.layer_dims():
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        u = rng.uniform_array(fan_in * fan_out).reshape(fan_in, fan_out)
        weights.append((2.0 * u - 1.0) * bound)
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def check_params(config: MlpConfig, params: MlpParams) -> None:
    dims = config.layer_dims()
    if len(params.weights) != len(dims) or len(params.biases) != len(dims):
        raise ShapeError(f"expected {len(dims)} layers, got {len(params.weights)}")
    for k, (fan_in, fan_out) in enumerate(dims):
        if params.weights[k].shape != (fan_in, fan_out):
            raise ShapeError(
                f"layer {k}: weight shape {params.weights[k].shape} != {(fan_in, fan_out)}"
            )
        if params.biases[k].shape != (fan_out,):
            raise ShapeError(f"layer {k}: bias shape {params.biases[k].shape} != {(fan_out,)}")


@dataclass
class ForwardCache:
    """Activations needed by mlp_backward: inputs to every layer plus ReLU
    masks of the hidden pre-activations."""

    inputs: list[np.ndarray]
    relu_masks: list[np.ndarray]


def mlp_forward(config: MlpConfig, params: MlpParams, X: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    check_params(config, params)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != config.input_dim:
        raise ShapeError(f"layer 0: input has {X.shape[-1] if X.ndim == 2 else X.ndim} cols, expected {config.input_dim}")
    h = X
    inputs, masks = [], []
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        a = h @ W + b
        if k < last:
            mask = a > 0.0
            h = a * mask
            masks.append(mask)
        else:
            h = a
    if not np.isfinite(h).all():
        raise NumericalError("non-finite logits in forward pass")
    return h, ForwardCache(inputs, masks)


def softmax_nll_bits(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Total codelength -sum log2 p(y|x) and its gradient w.r.t. logits.

    The gradient is of the bit-valued loss, i.e. (softmax - onehot) / ln 2.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, K = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match {n} rows")
    if n and (labels.min() < 0 or labels.max() >= K):
        raise LabelRangeError(f"labels must lie in [0, {K})")
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    lse = m[:, 0] + np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    nll_nats = float((lse - logits[rows, labels]).sum())
    probs = np.exp(logits - lse[:, None])
    grad = probs
    grad[rows, labels] -= 1.0
    grad /= LN2
    return nll_nats / LN2, grad


def nll_bits_only(logits: np.ndarray, labels: np.ndarray) -> float:
    """Loss without the gradient (cheaper inner loop for evaluation)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, K = logits.shape
    if n and (labels.min() < 0 or labels.max() >= K):
        raise LabelRangeError(f"labels must lie in [0, {K})")
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    return float((lse - logits[np.arange(n), labels]).sum()) / LN2


def mlp_backward(config: MlpConfig, params: MlpParams, cache: ForwardCache, grad_logits: np.ndarray) -> MlpParams:
    check_params(config, params)
    L = len(params.weights)
    if len(cache.inputs) != L or len(cache.relu_masks) != L - 1:
        raise ShapeError("cache does not match config (stale cache?)")
    g = np.asarray(grad_logits, dtype=np.float64)
    grad_w = [None] * L
    grad_b = [None] * L
    for k in range(L - 1, -1, -1):
        h = cache.inputs[k]
        if h.shape[1] != params.weights[k].shape[0] or g.shape[1] != params.weights[k].shape[1]:
            raise ShapeError(f"layer {k}: cache/grad shapes do not match params")
        grad_w[k] = h.T @ g
        grad_b[k] = g.sum(axis=0)
        if k > 0:
            g = (g @ params.weights[k].T) * cache.relu_masks[k - 1]
    return MlpParams(grad_w, grad_b)


@dataclass
class AdamState:
    """First/second moment accumulators shaped like the parameter list."""

    lr: float
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_arrays(cls, arrays: list[np.ndarray], lr: float) -> "AdamState":
        if lr <= 0:
            raise ValueError("lr must be positive")
        return cls(lr=lr, m=[np.zeros_like(a) for a in arrays], v=[np.zeros_like(a) for a in arrays])


def adam_update(state: AdamState, arrays: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """One bias-corrected Adam step, applied in place to `arrays`."""
    if len(arrays) != len(state.m) or len(grads) != len(arrays):
        raise ShapeError("parameter/gradient/state lengths differ")
    for k, g in enumerate(grads):
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in array {k}")
    state.t += 1
    b1t = 1.0 - state.beta1 ** state.t
    b2t = 1.0 - state.beta2 ** state.t
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        a -= state.lr * (m / b1t) / (np.sqrt(v / b2t) + state.eps)


def adam_step(state: AdamState, params: MlpParams, grads: MlpParams) -> tuple[MlpParams, AdamState]:
    """Adam over MlpParams; mutates and returns (params, state)."""
    adam_update(state, params.arrays(), grads.arrays())
    return params, state


def finite_diff_check(
    config: MlpConfig,
    params: MlpParams,
    batch: tuple[np.ndarray, np.ndarray],
    eps: float,
    max_coords: int | None = None,
    coord_seed: int = 0,
) -> float:
    """Max discrepancy between backprop and central differences.

    Relative error |a-n| / (|a|+|n|) per coordinate, except coordinates where
    both magnitudes are below 1e-6, which fall back to the absolute error.
    `max_coords`, when set, checks a deterministic subsample of coordinates
    (for very wide configs where the full sweep is impractical).
    """
    if not (1e-7 <= eps <= 1e-2):
        raise ValueError("eps must lie in [1e-7, 1e-2]")
    X, y = batch
    if len(np.asarray(y)) == 0:
        raise ValueError("batch must be non-empty")
    logits, cache = mlp_forward(config, params, X)
    _, grad_logits = softmax_nll_bits(logits, y)
    analytic = mlp_backward(config, params, cache, grad_logits)

    flat_params = params.arrays()
    flat_grads = analytic.arrays()
    coords = [(k, i) for k, arr in enumerate(flat_params) for i in range(arr.size)]
    if max_coords is not None and max_coords < len(coords):
        picks = SplitMix64(coord_seed).permutation(len(coords))[:max_coords]
        coords = [coords[int(i)] for i in picks]

    worst = 0.0
    for k, i in coords:
        arr = flat_params[k]
        flat = arr.reshape(-1)
        orig = flat[i]
        flat[i] = orig + eps
        hi = nll_bits_only(mlp_forward(config, params, X)[0], y)
        flat[i] = orig - eps
        lo = nll_bits_only(mlp_forward(config, params, X)[0], y)
        flat[i] = orig
        numeric = (hi - lo) / (2.0 * eps)
        a = flat_grads[k].reshape(-1)[i]
        denom = abs(a) + abs(numeric)
        if denom < 1e-6:
            err = abs(a - numeric)
        else:
            err = abs(a - numeric) / max(1e-12, denom)
        worst = max(worst, err)
    return worst
