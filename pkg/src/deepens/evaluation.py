"""Uncertainty-quality metrics: scores, calibration, entropy and confidence curves."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from . import scoring
from .data import UNKNOWN_LABEL
from .nn import Categorical, Gaussian

DEFAULT_Z_LEVELS = tuple(np.round(np.arange(1, 10) / 10, 1))
DEFAULT_TAU_GRID = tuple(np.round(np.arange(0, 11) / 10, 1))


@dataclass
class CalibrationTable:
    nominal: np.ndarray
    observed: np.ndarray
    count: int

    def max_gap(self) -> float:
        return float(np.max(np.abs(self.observed - self.nominal)))

    def rows(self):
        return [{"nominal": float(z), "observed": float(o), "count": self.count}
                for z, o in zip(self.nominal, self.observed)]


@dataclass
class EntropyHistogram:
    edges: np.ndarray
    mass: np.ndarray
    mean_entropy: float

    def rows(self):
        return [{"lo": float(a), "hi": float(b), "mass": float(m)}
                for a, b, m in zip(self.edges[:-1], self.edges[1:], self.mass)]


@dataclass
class ConfidenceCurve:
    tau: np.ndarray
    accuracy: np.ndarray
    count: np.ndarray

    def rows(self):
        return [{"tau": float(t), "accuracy": float(a), "count": int(c)}
                for t, a, c in zip(self.tau, self.accuracy, self.count)]


@dataclass
class EvalReport:
    scalars: dict
    calibration: CalibrationTable | None = None
    entropy_histogram: EntropyHistogram | None = None
    confidence_curve: ConfidenceCurve | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"scalars": self.scalars}
        if self.calibration is not None:
            out["calibration"] = self.calibration.rows()
        if self.entropy_histogram is not None:
            out["entropy_histogram"] = self.entropy_histogram.rows()
        if self.confidence_curve is not None:
            out["confidence_curve"] = self.confidence_curve.rows()
        out.update(self.extra)
        return out


def evaluate(pred, targets, disagreement=None, top_k: int = 5) -> dict:
    """Scalar metrics for a batch of predictions.

    Classification: ``nll``, ``brier``, ``accuracy``, ``top_k_error`` (when
    K > top_k) and ``mean_entropy``. Regression: ``nll`` and ``rmse``.
    """
    targets = np.asarray(targets)
    if len(targets) == 0:
        raise ValueError("cannot evaluate an empty set")
    if len(pred) != len(targets):
        raise ValueError(f"{len(pred)} predictions for {len(targets)} targets")
    if isinstance(pred, Categorical):
        if not np.issubdtype(targets.dtype, np.integer):
            raise ValueError("classification needs integer labels")
        probs = pred.probs
        out = {
            "nll": float(scoring.cross_entropy(probs, targets).mean()),
            "brier": float(scoring.brier(probs, targets).mean()),
            "accuracy": float((probs.argmax(axis=1) == targets).mean()),
            "mean_entropy": float(entropy(probs).mean()),
        }
        if probs.shape[1] > top_k:
            top = np.argsort(-probs, axis=1, kind="stable")[:, :top_k]
            out[f"top{top_k}_error"] = float(1.0 - (top == targets[:, None]).any(axis=1).mean())
    elif isinstance(pred, Gaussian):
        y = targets.astype(np.float64)
        out = {
            "nll": float(scoring.gaussian_nll(pred.mean, pred.var, y).mean()),
            "rmse": float(np.sqrt(np.mean((pred.mean - y) ** 2))),
        }
    else:
        raise TypeError(f"unsupported prediction type {type(pred).__name__}")
    if disagreement is not None:
        out["mean_disagreement"] = float(np.mean(disagreement))
    return out


def mixture_bound_gap(member_probs, labels) -> float:
    """Ensemble log score minus mean member log score (never positive, by Jensen).

    Raises if the ensemble scores worse than its average member by more than 1e-9.
    """
    member_probs = np.asarray(member_probs, dtype=np.float64)
    ens = scoring.cross_entropy(member_probs.mean(axis=0), labels).mean()
    members = np.mean([scoring.cross_entropy(p, labels).mean() for p in member_probs])
    gap = float(ens - members)
    if gap > 1e-9:
        raise ArithmeticError(f"ensemble NLL exceeds mean member NLL by {gap:g}")
    return gap


def gaussian_interval_halfwidth(z, std):
    """Half-width of the central ``z`` interval of N(., std**2)."""
    return ndtri((1.0 + np.asarray(z)) / 2.0) * std


def calibration_curve(pred: Gaussian, targets, z_levels=DEFAULT_Z_LEVELS) -> CalibrationTable:
    """Share of targets inside the central ``z`` prediction interval, per level."""
    if np.any(pred.var <= 0):
        raise ValueError("variances must be positive")
    y = np.asarray(targets, dtype=np.float64)
    z = np.asarray(z_levels, dtype=np.float64)
    dist = np.abs(y - pred.mean)
    half = gaussian_interval_halfwidth(z[:, None], pred.std[None, :])
    observed = (dist[None, :] <= half).mean(axis=1)
    return CalibrationTable(z, observed, len(y))


def entropy(probs) -> np.ndarray:
    """Shannon entropy in nats along the last axis, with 0 log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0, p * np.log(p), 0.0)
    return np.maximum(-t.sum(axis=-1), 0.0)


def entropy_histogram(probs, bins: int = 50) -> EntropyHistogram:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or len(probs) == 0:
        raise ValueError("need a non-empty (n, K) probability matrix")
    h_max = np.log(probs.shape[1])
    h = np.clip(entropy(probs), 0.0, h_max)
    counts, edges = np.histogram(h, bins=bins, range=(0.0, h_max))
    return EntropyHistogram(edges, counts / counts.sum(), float(h.mean()))


def confidence_accuracy_curve(probs, labels, tau_grid=DEFAULT_TAU_GRID) -> ConfidenceCurve:
    """Accuracy among examples whose top probability is at least ``tau``.

    Rows labelled :data:`~deepens.data.UNKNOWN_LABEL` always count as wrong.
    Thresholds that retain nothing report NaN accuracy.
    """
    tau = np.asarray(tau_grid, dtype=np.float64)
    if tau.size == 0:
        raise ValueError("empty threshold grid")
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels) & (labels != UNKNOWN_LABEL)
    keep = conf[None, :] >= tau[:, None]
    count = keep.sum(axis=1)
    hits = (keep & correct[None, :]).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.where(count > 0, hits / np.maximum(count, 1), np.nan)
    return ConfidenceCurve(tau, acc, count)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_csv(rows: list[dict], path) -> None:
    rows = _jsonable(rows)
    with Path(path).open("w", newline="") as fh:
        if not rows:
            return
        fields = list(dict.fromkeys(k for r in rows for k in r))
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
