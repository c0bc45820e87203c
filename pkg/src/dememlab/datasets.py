"""Synthetic 2-D datasets and CSV loading, with features normalized to [0,1].

Generators are deterministic from their seed and keep classes balanced to
within one sample. Min-max normalization is idempotent on already-normalized
data, so a saved dataset reloads to identical values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError

Array = np.ndarray

KINDS = ("two_gaussians", "rings", "xor_grid")


@dataclass
class Dataset:
    """Feature matrix in [0,1]^D plus integer class labels."""

    features: Array
    labels: Array

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise InputError(f"features must be rank-2, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise InputError("labels must be a vector matching the feature rows")
        if not np.all(np.isfinite(self.features)):
            raise InputError("features must be finite")
        if self.labels.size and self.labels.min() < 0:
            raise InputError("labels must be non-negative")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def subset(self, index) -> "Dataset":
        return Dataset(self.features[index], self.labels[index])

    def drop(self, i: int) -> "Dataset":
        keep = np.arange(self.n) != i
        return self.subset(keep)


def _minmax(features: Array) -> Array:
    """Map each column onto [0,1]; constant columns map to 0."""
    lo = features.min(axis=0)
    hi = features.max(axis=0)
    span = hi - lo
    out = np.zeros_like(features)
    nonconst = span > 0
    out[:, nonconst] = (features[:, nonconst] - lo[nonconst]) / span[nonconst]
    return out


def _balanced_counts(n: int, groups: int) -> list[int]:
    base, extra = divmod(n, groups)
    return [base + (1 if i < extra else 0) for i in range(groups)]


def generate_dataset(kind: str, n: int, noise: float, seed: int) -> Dataset:
    """Generate a deterministic 2-class dataset of the given kind."""
    if kind not in KINDS:
        raise InputError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    if n < 4:
        raise InputError(f"n must be at least 4, got {n}")
    if noise < 0:
        raise InputError(f"noise must be non-negative, got {noise}")
    rng = np.random.default_rng(seed)

    if kind == "two_gaussians":
        means = np.array([[0.25, 0.25], [0.75, 0.75]])
        counts = _balanced_counts(n, 2)
        xs, ys = [], []
        for cls, count in enumerate(counts):
            xs.append(means[cls] + noise * rng.standard_normal((count, 2)))
            ys.append(np.full(count, cls))
    elif kind == "rings":
        radii = (0.22, 0.42)
        counts = _balanced_counts(n, 2)
        xs, ys = [], []
        for cls, count in enumerate(counts):
            theta = rng.uniform(0.0, 2.0 * np.pi, size=count)
            r = radii[cls] + noise * rng.standard_normal(count)
            xs.append(0.5 + np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
            ys.append(np.full(count, cls))
    else:  # xor_grid
        centers = np.array([[0.25, 0.25], [0.75, 0.75], [0.25, 0.75], [0.75, 0.25]])
        blob_cls = [0, 0, 1, 1]
        # Interleave classes when distributing the remainder to keep balance.
        order = [0, 2, 1, 3]
        counts = [0, 0, 0, 0]
        for i, c in enumerate(_balanced_counts(n, 4)):
            counts[order[i]] = c
        xs, ys = [], []
        for center, cls, count in zip(centers, blob_cls, counts):
            xs.append(center + noise * rng.standard_normal((count, 2)))
            ys.append(np.full(count, cls))

    features = _minmax(np.concatenate(xs))
    labels = np.concatenate(ys).astype(np.int64)
    return Dataset(features, labels)


def save_csv(dataset: Dataset, path) -> None:
    """Write features and label with a header row, shortest round-trip floats."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"x{i}" for i in range(dataset.dim)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path) -> Dataset:
    """Load a header-prefixed CSV whose final column is an integer label.

    Features are validated finite and min-max normalized per column; labels
    are remapped to contiguous indices in sorted order.
    """
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    rows = [r for r in rows if r]
    if not rows:
        raise FormatError(f"empty file: {path}")
    header, data = rows[0], rows[1:]
    if not data:
        raise FormatError(f"no data rows in {path}")
    if len(header) < 2:
        raise FormatError("need at least one feature column and a label column")
    width = len(header)

    features = np.empty((len(data), width - 1))
    raw_labels = np.empty(len(data), dtype=np.int64)
    for r, row in enumerate(data, start=1):
        if len(row) != width:
            raise FormatError(f"row {r} has {len(row)} cells, expected {width}")
        for c, cell in enumerate(row[:-1], start=1):
            try:
                value = float(cell)
            except ValueError:
                raise FormatError(
                    f"non-numeric value {cell!r} at row {r}, column {c}") from None
            features[r - 1, c - 1] = value
        try:
            label = float(row[-1])
        except ValueError:
            raise FormatError(
                f"non-numeric value {row[-1]!r} at row {r}, column {width}") from None
        if not label.is_integer():
            raise FormatError(f"non-integer label {row[-1]!r} at row {r}")
        raw_labels[r - 1] = int(label)

    if not np.all(np.isfinite(features)):
        bad = np.argwhere(~np.isfinite(features))[0]
        raise FormatError(f"non-finite value at row {bad[0] + 1}, column {bad[1] + 1}")
    classes = np.unique(raw_labels)
    if classes.size < 2:
        raise FormatError("dataset has a single class")
    labels = np.searchsorted(classes, raw_labels)
    return Dataset(_minmax(features), labels)
