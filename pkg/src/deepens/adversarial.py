"""Fast-gradient-sign perturbations with per-dimension step sizes."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import DataError, Dataset, Standardization
from .nn import NetworkParams, backward
from .scoring import ScoringLoss


class AdversarialMode(str, Enum):
    OFF = "off"
    FGSM = "fgsm"
    RANDOM_SIGN = "random_sign"


@dataclass(frozen=True)
class AdversarialConfig:
    mode: AdversarialMode = AdversarialMode.OFF
    eps_fraction: float = 0.01
    clip: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", AdversarialMode(self.mode))
        if self.eps_fraction <= 0:
            raise ValueError("eps_fraction must be positive")


def compute_eps(dataset: Dataset, eps_fraction: float = 0.01) -> np.ndarray:
    """``eps_fraction`` times each feature's training range, in raw feature units."""
    if len(dataset) == 0:
        raise DataError("empty dataset")
    return eps_fraction * (dataset.feature_max - dataset.feature_min)


def eps_in_model_units(eps: np.ndarray, standardization: Standardization | None) -> np.ndarray:
    if standardization is None:
        return np.asarray(eps, dtype=np.float64)
    return np.asarray(eps, dtype=np.float64) / standardization.x_std


def _check_dims(x: np.ndarray, eps: np.ndarray) -> None:
    if eps.shape != (x.shape[-1],):
        raise ValueError(f"eps has {eps.shape} entries, inputs have {x.shape[-1]} features")


def fgsm(params: NetworkParams, x, y, loss: ScoringLoss, eps, masks=None,
         bounds: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """``x + eps * sign(grad_x loss)`` for every row of ``x``.

    ``sign(0)`` is 0, so flat coordinates are left alone. ``bounds`` optionally
    clips the result to a (low, high) box.
    """
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _check_dims(x, eps)
    _, _, gx = backward(params, x, y, loss, masks=masks, reduce="sum")
    x_adv = np.atleast_2d(x) + eps * np.sign(gx)
    if bounds is not None:
        x_adv = np.clip(x_adv, bounds[0], bounds[1])
    return x_adv.reshape(x.shape)


def random_sign_perturb(x, eps, seed) -> np.ndarray:
    """``x + eps * s`` with ``s`` uniform on {-1, +1} per coordinate."""
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _check_dims(x, eps)
    s = np.random.default_rng(seed).integers(0, 2, size=x.shape) * 2.0 - 1.0
    return x + eps * s
