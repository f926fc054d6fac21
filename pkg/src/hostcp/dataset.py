"""Labelled datasets: synthetic generation, CSV I/O, label corruption, minibatching."""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DataFormatError, ShapeError

__all__ = [
    "LabeledDataset",
    "FlipMask",
    "MinibatchPlan",
    "gen_synthetic",
    "load_csv",
    "save_csv",
    "flip_labels",
    "restore_labels",
    "make_minibatches",
    "train_test_split",
    "split_indices",
    "round_half_up",
]


def round_half_up(x):
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if X.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ShapeError(f"{y.shape[0] if y.ndim else 0} labels for {X.shape[0]} rows")
        if y.size and not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integers")
        y = y.astype(np.int64)
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes)

    def with_labels(self, labels):
        return LabeledDataset(self.features, labels, self.num_classes)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (self.num_classes == other.num_classes
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))

    __hash__ = None


@dataclass(frozen=True)
class FlipMask:
    flipped: np.ndarray
    original_labels: np.ndarray

    @property
    def indices(self):
        return np.flatnonzero(self.flipped)

    @property
    def count(self):
        return int(self.flipped.sum())


@dataclass(frozen=True)
class MinibatchPlan:
    k: int
    assignment: np.ndarray
    order: np.ndarray

    def batch(self, b):
        """Row indices of minibatch ``b`` in ascending order."""
        return np.flatnonzero(self.assignment == b)

    def batches(self):
        return [self.batch(b) for b in self.order]

    def sizes(self):
        return np.bincount(self.assignment, minlength=self.k)


def gen_synthetic(n, d, seed):
    """Binary labels from a median-thresholded cubic polynomial of Gaussian features."""
    if n < 2:
        raise ValueError("synthetic data needs n >= 2")
    if d < 1:
        raise ValueError("synthetic data needs d >= 1")
    rng = np.random.default_rng(seed)
    w1, w2, w3 = rng.standard_normal((3, d))
    X = rng.standard_normal((n, d))
    score = X @ w1 + (X * X) @ w2 + (X * X * X) @ w3
    # rank-based threshold keeps the classes balanced within one even with ties
    order = np.argsort(score, kind="stable")
    y = np.zeros(n, dtype=np.int64)
    y[order[n - n // 2:]] = 1
    return LabeledDataset(X, y, 2)


def load_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("empty file", line=1) from None
        header = [h.strip() for h in header]
        if "label" not in header:
            raise DataFormatError("missing column 'label'", line=1)
        feats = [h for h in header if h != "label"]
        if not feats:
            raise DataFormatError("no feature columns", line=1)
        expected = [f"f{i}" for i in range(len(feats))]
        if feats != expected:
            raise DataFormatError(f"feature columns must be {','.join(expected)}, got {','.join(feats)}", line=1)
        col = {h: i for i, h in enumerate(header)}
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"expected {len(header)} cells, got {len(row)}", line=lineno)
            try:
                rows.append([float(row[col[f]]) for f in feats])
            except ValueError:
                raise DataFormatError("non-numeric feature cell", line=lineno) from None
            cell = row[col["label"]].strip()
            if not cell.isdigit():
                raise DataFormatError(f"label {cell!r} is not a nonnegative integer", line=lineno)
            labels.append(int(cell))
    if not rows:
        raise DataFormatError("file has a header but no data rows", line=2)
    X = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise DataFormatError("non-finite feature value")
    y = np.array(labels, dtype=np.int64)
    return LabeledDataset(X, y, int(y.max()) + 1)


def save_csv(ds, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(ds.d)] + ["label"])
        for x, label in zip(ds.features, ds.labels):
            # repr round-trips float64 exactly
            writer.writerow([repr(float(v)) for v in x] + [int(label)])


def flip_labels(ds, fraction, seed):
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    count = round_half_up(fraction * ds.n)
    idx = np.sort(rng.choice(ds.n, size=count, replace=False))
    labels = ds.labels.copy()
    original = labels[idx].copy()
    if ds.num_classes == 2:
        labels[idx] = 1 - labels[idx]
    elif ds.num_classes > 2:
        shift = rng.integers(1, ds.num_classes, size=count)
        labels[idx] = (labels[idx] + shift) % ds.num_classes
    else:
        raise ValueError("cannot flip labels of a single-class dataset")
    flipped = np.zeros(ds.n, dtype=bool)
    flipped[idx] = True
    return ds.with_labels(labels), FlipMask(flipped, original)


def restore_labels(ds, mask, rows=None):
    """Undo a flip. ``rows`` restricts restoration to a subset of the flipped rows."""
    idx = mask.indices
    keep = np.ones(len(idx), dtype=bool) if rows is None else np.isin(idx, rows)
    labels = ds.labels.copy()
    labels[idx[keep]] = mask.original_labels[keep]
    return ds.with_labels(labels)


def make_minibatches(ds_or_n, k, seed):
    n = ds_or_n if isinstance(ds_or_n, (int, np.integer)) else ds_or_n.n
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    for b, part in enumerate(np.array_split(perm, k)):
        assignment[part] = b
    return MinibatchPlan(k, assignment, rng.permutation(k))


def split_indices(n, test_fraction, seed):
    """Sorted ``(train_rows, test_rows)`` of a seeded random split."""
    n_test = round_half_up(test_fraction * n)
    if not 0 < n_test < n:
        raise ValueError("test split must leave both parts nonempty")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def train_test_split(ds, test_fraction, seed):
    train_rows, test_rows = split_indices(ds.n, test_fraction, seed)
    return ds.subset(train_rows), ds.subset(test_rows)
