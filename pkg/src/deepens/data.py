"""Datasets: loaders, standardization, fold protocols and synthetic generators."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

UNKNOWN_LABEL = -1
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass(frozen=True)
class Standardization:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    def transform_x(self, x):
        return (np.asarray(x, dtype=np.float64) - self.x_mean) / self.x_std

    def inverse_x(self, x):
        return np.asarray(x, dtype=np.float64) * self.x_std + self.x_mean

    def transform_y(self, y):
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std

    def inverse_y(self, y):
        return np.asarray(y, dtype=np.float64) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Standardization":
        return cls(
            np.asarray(d["x_mean"], dtype=np.float64),
            np.asarray(d["x_std"], dtype=np.float64),
            float(d["y_mean"]),
            float(d["y_std"]),
        )


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus targets.

    ``targets`` are reals for regression and integer class indices for
    classification; :data:`UNKNOWN_LABEL` marks out-of-distribution rows.
    ``feature_min``/``feature_max`` are filled in from the features when not given.
    """

    features: np.ndarray
    targets: np.ndarray
    task: str = "regression"
    n_classes: int = 0
    provenance: str = ""
    feature_min: np.ndarray | None = None
    feature_max: np.ndarray | None = None
    standardization: Standardization | None = field(default=None, repr=False)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        if self.task not in ("regression", "classification"):
            raise DataError(f"unknown task {self.task!r}")
        if self.task == "classification":
            y = np.asarray(self.targets).astype(np.int64)
            if self.n_classes < 2:
                raise DataError("classification datasets need n_classes >= 2")
            if y.size and (y.max() >= self.n_classes or y.min() < UNKNOWN_LABEL):
                raise DataError("class index out of range")
        else:
            y = np.asarray(self.targets, dtype=np.float64)
        if y.shape != (len(x),):
            raise DataError("need exactly one target per row")
        if len(x) < 1:
            raise DataError("dataset is empty")
        if not np.all(np.isfinite(x)) or (self.task == "regression" and not np.all(np.isfinite(y))):
            raise DataError("dataset contains NaN or Inf")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "targets", y)
        if self.feature_min is None:
            object.__setattr__(self, "feature_min", x.min(axis=0))
        if self.feature_max is None:
            object.__setattr__(self, "feature_max", x.max(axis=0))

    def __len__(self):
        return len(self.features)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx, provenance: str | None = None) -> "Dataset":
        """Rows ``idx``; ranges are recomputed from the subset."""
        idx = np.asarray(idx)
        return replace(
            self,
            features=self.features[idx],
            targets=self.targets[idx],
            feature_min=None,
            feature_max=None,
            provenance=provenance if provenance is not None else self.provenance,
        )


@dataclass(frozen=True)
class FoldSpec:
    n_folds: int = 20
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_folds < 1:
            raise DataError("n_folds must be >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise DataError("test_fraction must lie in (0, 1)")


def load_csv(path, target_column: str | int = -1, task: str = "regression",
             n_classes: int | None = None, delimiter: str = ",") -> Dataset:
    """Read a numeric CSV with a header row.

    ``target_column`` is a header name or a column position.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if isinstance(target_column, str):
            if target_column not in header:
                raise DataError(f"{path}: no column named {target_column!r}")
            t = header.index(target_column)
        else:
            t = target_column % len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                values = [float(c) for c in row]
            except ValueError:
                raise DataError(f"{path}: row {lineno} has a non-numeric field") from None
            if not all(np.isfinite(values)):
                raise DataError(f"{path}: row {lineno} contains NaN or Inf")
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: table has no data rows")
    table = np.asarray(rows, dtype=np.float64)
    y = table[:, t]
    x = np.delete(table, t, axis=1)
    if task == "classification":
        if np.any(y != np.round(y)) or y.min() < 0:
            raise DataError(f"{path}: class labels must be non-negative integers")
        y = y.astype(np.int64)
        n_classes = n_classes or int(y.max()) + 1
    return Dataset(x, y, task=task, n_classes=n_classes or 0, provenance=str(path))


def _read_idx(path: Path, magic: int, ndim: int):
    raw = path.read_bytes() if path.is_file() else None
    if raw is None:
        raise DataError(f"{path}: no such file")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise DataError(f"{path}: bad magic number 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    payload = np.frombuffer(raw, dtype=np.uint8, offset=header)
    if payload.size < size:
        raise DataError(f"{path}: truncated payload ({payload.size} of {size} bytes)")
    return payload[:size].reshape(dims)


def load_idx(images_path, labels_path, limit: int | None = None, n_classes: int = 10) -> Dataset:
    """Read an IDX image/label file pair into a classification dataset of raw pixel values."""
    images = _read_idx(Path(images_path), IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(Path(labels_path), IDX_LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise DataError(f"{len(images)} images but {len(labels)} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    if len(images) == 0:
        raise DataError("no images selected")
    x = images.reshape(len(images), -1).astype(np.float64)
    return Dataset(x, labels.astype(np.int64), task="classification", n_classes=n_classes,
                   provenance=f"idx:{images_path}")


def write_idx(images, labels, images_path, labels_path) -> None:
    """Inverse of :func:`load_idx` for uint8 image stacks; handy for fixtures."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    Path(images_path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def make_folds(n_or_dataset, spec: FoldSpec = FoldSpec()) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded random train/test splits, one permutation per fold."""
    n = n_or_dataset if isinstance(n_or_dataset, (int, np.integer)) else len(n_or_dataset)
    n_test = int(round(spec.test_fraction * n))
    if n < 2 or n_test < 1 or n_test >= n:
        raise DataError(f"cannot split {n} rows with test fraction {spec.test_fraction}")
    folds = []
    for k in range(spec.n_folds):
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(k,)))
        perm = rng.permutation(n)
        folds.append((np.sort(perm[n_test:]), np.sort(perm[:n_test])))
    return folds


def fit_standardization(train: Dataset) -> Standardization:
    x = train.features
    sd = x.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    if train.task == "regression":
        y_sd = float(train.targets.std())
        return Standardization(x.mean(axis=0), sd, float(train.targets.mean()), y_sd if y_sd > 0 else 1.0)
    return Standardization(x.mean(axis=0), sd)


def standardize(train: Dataset, *others: Dataset):
    """Scale features (and regression targets) with training statistics only.

    Returns ``(standardized_datasets, params)`` where the first dataset is the
    standardized ``train``. Zero-variance columns are centered but not scaled.
    Feature ranges of every output keep describing the *raw* training split so
    per-dimension perturbation sizes stay tied to it.
    """
    params = fit_standardization(train)
    out = []
    for ds in (train, *others):
        y = params.transform_y(ds.targets) if ds.task == "regression" else ds.targets
        out.append(replace(
            ds,
            features=params.transform_x(ds.features),
            targets=y,
            feature_min=train.feature_min,
            feature_max=train.feature_max,
            standardization=params,
        ))
    return out, params


def toy_cubic(n: int = 20, noise_sd: float = 3.0, x_range=(-4.0, 4.0), seed: int = 0) -> Dataset:
    """``y = x**3 + N(0, noise_sd**2)`` with ``x`` uniform on ``x_range``."""
    if n < 1:
        raise DataError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(x_range[0], x_range[1], size=n)
    y = x**3 + noise_sd * rng.standard_normal(n)
    return Dataset(x[:, None], y, provenance=f"toy_cubic(n={n}, seed={seed})")


def heteroscedastic(n: int = 500, seed: int = 0, x_range=(-3.0, 3.0)) -> Dataset:
    """Synthetic regression set with input-dependent noise.

    ``y = sin(2x) + 0.5 x + N(0, s(x)^2)`` with ``s(x) = 0.1 + 0.4 |x|``; used
    where a real benchmark table is not available.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(x_range[0], x_range[1], size=n)
    y = heteroscedastic_mean(x) + heteroscedastic_sd(x) * rng.standard_normal(n)
    return Dataset(x[:, None], y, provenance=f"heteroscedastic(n={n}, seed={seed})")


def heteroscedastic_mean(x):
    return np.sin(2.0 * x) + 0.5 * x


def heteroscedastic_sd(x):
    return 0.1 + 0.4 * np.abs(x)


def bootstrap_sample(n_or_dataset, seed: int) -> np.ndarray:
    """``N`` indices drawn uniformly with replacement."""
    n = n_or_dataset if isinstance(n_or_dataset, (int, np.integer)) else len(n_or_dataset)
    if n < 1:
        raise DataError("cannot bootstrap an empty dataset")
    return np.random.default_rng(seed).integers(0, n, size=n)


def class_split(dataset: Dataset, known) -> tuple[Dataset, Dataset]:
    """Split rows by label into known and unknown classes.

    Known labels are renumbered ``0..len(known)-1`` in sorted order; every
    unknown row gets :data:`UNKNOWN_LABEL`.
    """
    if dataset.task != "classification":
        raise DataError("class_split needs a classification dataset")
    known = sorted(set(int(k) for k in known))
    present = set(np.unique(dataset.targets).tolist())
    if not known:
        raise DataError("known class set is empty")
    if present <= set(known):
        raise DataError("known classes cover every label; nothing left as unknown")
    if len(known) < 2:
        raise DataError("need at least two known classes")
    remap = np.full(max(dataset.n_classes, max(known) + 1), UNKNOWN_LABEL, dtype=np.int64)
    remap[known] = np.arange(len(known))
    is_known = np.isin(dataset.targets, known)
    k_idx, u_idx = np.flatnonzero(is_known), np.flatnonzero(~is_known)
    if len(k_idx) == 0:
        raise DataError("no rows belong to the known classes")
    kn = Dataset(dataset.features[k_idx], remap[dataset.targets[k_idx]], task="classification",
                 n_classes=len(known), provenance=f"{dataset.provenance}[known={known}]")
    un = Dataset(dataset.features[u_idx], np.full(len(u_idx), UNKNOWN_LABEL), task="classification",
                 n_classes=len(known), provenance=f"{dataset.provenance}[unknown]")
    return kn, un


def load_digits() -> Dataset:
    """scikit-learn's bundled 8x8 digit images (1797 rows, pixel values 0-16)."""
    from sklearn.datasets import load_digits as _sk_digits

    d = _sk_digits()
    return Dataset(d.data.astype(np.float64), d.target.astype(np.int64), task="classification",
                   n_classes=10, provenance="sklearn.load_digits")


def gaussian_blobs(n: int = 1000, n_classes: int = 10, dim: int = 20, spread: float = 1.0,
                   seed: int = 0) -> Dataset:
    """Separable synthetic classification surrogate: isotropic clusters."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 3.0, size=(n_classes, dim))
    y = rng.integers(0, n_classes, size=n)
    x = centers[y] + spread * rng.standard_normal((n, dim))
    return Dataset(x, y, task="classification", n_classes=n_classes,
                   provenance=f"blobs(n={n}, seed={seed})")
