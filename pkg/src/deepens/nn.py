"""Fully-connected ReLU networks with hand-written reverse-mode gradients.

Arrays are float64 throughout. Inputs are batches of shape ``(n, input_dim)``;
a single feature vector is promoted to a batch of one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import scoring
from .scoring import ScoringLoss

VARIANCE_FLOOR = scoring.VARIANCE_FLOOR


class Head(str, Enum):
    GAUSSIAN = "gaussian"
    SOFTMAX = "softmax"


@dataclass(frozen=True)
class ArchSpec:
    input_dim: int
    hidden_sizes: tuple[int, ...]
    head: Head = Head.GAUSSIAN
    n_classes: int = 0
    dropout_rate: float = 0.0
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        object.__setattr__(self, "head", Head(self.head))
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ValueError("need at least one hidden layer of positive width")
        if self.head is Head.SOFTMAX and self.n_classes < 2:
            raise ValueError("softmax head needs n_classes >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def output_dim(self) -> int:
        return 2 if self.head is Head.GAUSSIAN else self.n_classes

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_sizes, self.output_dim]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "head": self.head.value,
            "n_classes": self.n_classes,
            "dropout_rate": self.dropout_rate,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(**d)


@dataclass(frozen=True)
class NetworkParams:
    arch: ArchSpec
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    seed: int = 0

    def arrays(self) -> list[np.ndarray]:
        """Parameters in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays) -> "NetworkParams":
        arrays = list(arrays)
        return NetworkParams(self.arch, tuple(arrays[0::2]), tuple(arrays[1::2]), self.seed)


@dataclass(frozen=True)
class Categorical:
    """Batch of class-probability vectors, shape ``(n, K)``."""

    probs: np.ndarray

    def __len__(self):
        return len(self.probs)


@dataclass(frozen=True)
class Gaussian:
    """Batch of univariate Gaussians."""

    mean: np.ndarray
    var: np.ndarray

    def __len__(self):
        return len(self.mean)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)


PredictiveDistribution = Categorical | Gaussian


def init_params(arch: ArchSpec, seed: int) -> NetworkParams:
    """Draw weights from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start at zero."""
    rng = np.random.default_rng(seed)
    sizes = arch.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(arch, tuple(weights), tuple(biases), int(seed))


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(params: NetworkParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.arch.input_dim:
        raise ValueError(
            f"expected inputs with {params.arch.input_dim} features, got shape {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs contain non-finite values")
    return x


def sample_masks(arch: ArchSpec, n: int, rng) -> list[np.ndarray] | None:
    """Inverted-dropout masks, one per hidden layer; ``None`` when dropout is off."""
    rate = arch.dropout_rate
    if rate == 0.0:
        return None
    rng = np.random.default_rng(rng)
    keep = 1.0 - rate
    return [(rng.random((n, h)) < keep) / keep for h in arch.hidden_sizes]


def _forward_raw(params: NetworkParams, x: np.ndarray, masks=None):
    acts = [x]
    pre = []
    h = x
    n_hidden = len(params.arch.hidden_sizes)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        if i < n_hidden:
            pre.append(z)
            h = np.maximum(z, 0.0)
            if masks is not None:
                h = h * masks[i]
            acts.append(h)
        else:
            h = z
    return h, (acts, pre)


def head_distribution(arch: ArchSpec, raw: np.ndarray) -> PredictiveDistribution:
    if arch.head is Head.SOFTMAX:
        return Categorical(softmax(raw))
    return Gaussian(raw[:, 0].copy(), softplus(raw[:, 1]) + VARIANCE_FLOOR)


def forward(params: NetworkParams, x, dropout_seed=None, masks=None) -> PredictiveDistribution:
    """Predictive distribution for a batch of inputs.

    With ``dropout_seed`` (or explicit ``masks``) the network runs in training
    mode with fresh inverted-dropout masks; otherwise dropout is disabled.
    """
    x = _as_batch(params, x)
    if masks is None and dropout_seed is not None:
        masks = sample_masks(params.arch, len(x), dropout_seed)
    raw, _ = _forward_raw(params, x, masks)
    return head_distribution(params.arch, raw)


def backward(params: NetworkParams, x, y, loss: ScoringLoss, masks=None, reduce: str = "mean"):
    """Loss value, parameter gradients and per-example input gradients.

    Returns ``(loss, param_grads, input_grad)``. ``param_grads`` follows the
    ordering of :meth:`NetworkParams.arrays`. With ``reduce="mean"`` the loss and
    parameter gradients are batch means and ``input_grad[i]`` is the gradient of
    the mean loss with respect to ``x[i]``; with ``reduce="sum"`` they are sums,
    so ``input_grad[i]`` is the gradient of example ``i``'s own loss.
    """
    loss = ScoringLoss(loss)
    scoring.check_head(loss, params.arch.head.value)
    x = _as_batch(params, x)
    raw, (acts, pre) = _forward_raw(params, x, masks)
    per_example, d_raw = scoring.loss_and_grad(loss, raw, y)
    if reduce == "mean":
        n = len(x)
        value = per_example.mean()
        d_raw = d_raw / n
    elif reduce == "sum":
        value = per_example.sum()
    else:
        raise ValueError(f"unknown reduction {reduce!r}")

    n_layers = len(params.weights)
    grads = [None] * (2 * n_layers)
    delta = d_raw
    for i in range(n_layers - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ params.weights[i].T
        if i > 0:
            if masks is not None:
                delta = delta * masks[i - 1]
            delta = delta * (pre[i - 1] > 0)
    return value, grads, delta


@dataclass
class AdamState:
    learning_rate: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: NetworkParams, learning_rate: float = 0.1, **kw) -> "AdamState":
        arrays = params.arrays()
        return cls(
            learning_rate=learning_rate,
            m=[np.zeros_like(a) for a in arrays],
            v=[np.zeros_like(a) for a in arrays],
            **kw,
        )


def adam_step(params: NetworkParams, grads, state: AdamState) -> NetworkParams:
    """One bias-corrected Adam update. ``state`` is advanced in place."""
    arrays = params.arrays()
    if len(grads) != len(arrays) or any(g.shape != a.shape for g, a in zip(grads, arrays)):
        raise ValueError("gradient shapes do not match parameters")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    new = []
    for k, (a, g) in enumerate(zip(arrays, grads)):
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = state.m[k] / (1.0 - b1**t)
        v_hat = state.v[k] / (1.0 - b2**t)
        new.append(a - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
    return params.with_arrays(new)
