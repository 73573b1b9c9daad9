"""Proper scoring rules, used both as training losses and as evaluation metrics."""
from __future__ import annotations

from enum import Enum

import numpy as np

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
VARIANCE_FLOOR = 1e-6
PROB_CLAMP = 1e-12


class ScoringLoss(str, Enum):
    GAUSSIAN_NLL = "gaussian_nll"
    CROSS_ENTROPY = "cross_entropy"
    BRIER = "brier"
    MSE = "mse"

    @property
    def head(self) -> str:
        if self in (ScoringLoss.GAUSSIAN_NLL, ScoringLoss.MSE):
            return "gaussian"
        return "softmax"


def check_head(loss: ScoringLoss, head: str) -> None:
    if ScoringLoss(loss).head != head:
        raise ValueError(f"loss {ScoringLoss(loss).value!r} cannot train a {head!r} head")


def _labels(probs: np.ndarray, labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != probs.shape[:-1]:
        raise ValueError("labels and probabilities are misaligned")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[-1]):
        raise ValueError("class label out of range")
    return labels.astype(np.intp)


def gaussian_nll(mean, var, y):
    """Negative log density of ``y`` under N(mean, var), including 0.5*log(2*pi)."""
    mean, var, y = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (mean, var, y)))
    if np.any(var <= 0):
        raise ValueError("variance must be positive")
    return 0.5 * np.log(var) + (y - mean) ** 2 / (2.0 * var) + HALF_LOG_2PI


def cross_entropy(probs, labels):
    """-log p[label] for each row; probabilities are clamped at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = _labels(probs, labels)
    picked = np.take_along_axis(probs, labels[..., None], axis=-1)[..., 0]
    return -np.log(np.maximum(picked, PROB_CLAMP))


def brier(probs, labels):
    """Mean over classes of the squared gap between one-hot target and probs."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = _labels(probs, labels)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
    return ((onehot - probs) ** 2).mean(axis=-1)


def mse(mean, y):
    mean, y = np.asarray(mean, dtype=np.float64), np.asarray(y, dtype=np.float64)
    return (y - mean) ** 2


def loss_and_grad(loss: ScoringLoss, raw: np.ndarray, y):
    """Per-example loss and its gradient with respect to the raw network outputs.

    For regression heads ``raw[:, 0]`` is the mean and ``raw[:, 1]`` the
    pre-softplus variance; for classification ``raw`` holds logits.
    """
    loss = ScoringLoss(loss)
    n = raw.shape[0]
    grad = np.zeros_like(raw)
    if loss is ScoringLoss.MSE:
        y = np.asarray(y, dtype=np.float64).reshape(n)
        diff = raw[:, 0] - y
        grad[:, 0] = 2.0 * diff
        return diff**2, grad
    if loss is ScoringLoss.GAUSSIAN_NLL:
        y = np.asarray(y, dtype=np.float64).reshape(n)
        mu, s = raw[:, 0], raw[:, 1]
        var = np.logaddexp(0.0, s) + VARIANCE_FLOOR
        diff = mu - y
        value = 0.5 * np.log(var) + diff**2 / (2.0 * var) + HALF_LOG_2PI
        grad[:, 0] = diff / var
        dvar = 0.5 / var - diff**2 / (2.0 * var**2)
        grad[:, 1] = dvar * np.exp(-np.logaddexp(0.0, -s))
        return value, grad

    labels = np.asarray(y).reshape(n).astype(np.intp)
    k = raw.shape[1]
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ValueError("class label out of range")
    z = raw - raw.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    p = np.exp(log_p)
    onehot = np.zeros_like(p)
    onehot[np.arange(n), labels] = 1.0
    if loss is ScoringLoss.CROSS_ENTROPY:
        return -log_p[np.arange(n), labels], p - onehot
    # Brier: push dL/dp through the softmax Jacobian.
    g = 2.0 * (p - onehot) / k
    value = ((p - onehot) ** 2).mean(axis=1)
    return value, p * (g - (g * p).sum(axis=1, keepdims=True))
