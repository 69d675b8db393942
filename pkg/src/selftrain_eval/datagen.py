"""Synthetic shifted datasets and CSV I/O.

CSV layout: header ``f0,...,f{d-1},label``, one row per example, UTF-8,
comma separated, ``\\n`` line endings.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CsvParseError, RejectedInputError
from .rng import stream

SHIFT_KINDS = ("mean_shift", "rotation", "label_shift", "feature_noise")


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=int)
        if x.ndim != 2 or y.ndim != 1 or len(x) != len(y):
            raise RejectedInputError("features must be (m, d) and labels length m")
        if self.num_classes < 1:
            raise RejectedInputError("num_classes must be >= 1")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise RejectedInputError(f"label out of range [0, {self.num_classes})")
        if not np.all(np.isfinite(x)):
            raise RejectedInputError("features must be finite")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=int)
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes)


@dataclass(frozen=True)
class ShiftSpec:
    kind: str
    magnitude: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SHIFT_KINDS:
            raise RejectedInputError(f"unknown shift kind {self.kind!r}")
        if not self.magnitude >= 0:
            raise RejectedInputError("shift magnitude must be >= 0")


def _simplex_centers(k: int, d: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """K centers with all pairwise distances >= separation."""
    if d >= k:
        # scaled, randomly rotated standard basis: pairwise distance exactly separation
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        return (separation / np.sqrt(2.0)) * q[:, :k].T
    # fewer dims than classes: points on a circle in the first two dims
    angles = 2 * np.pi * np.arange(k) / k
    radius = separation / (2 * np.sin(np.pi / k))
    centers = np.zeros((k, d))
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1] = radius * np.sin(angles)
    return centers


def gen_gaussian_mixture(K: int, d: int, per_class_count: int, separation: float,
                         seed: int) -> LabeledDataset:
    """Unit-variance isotropic clusters, one per class, ``per_class_count`` rows each."""
    if K < 2 or d < 2 or not separation > 0:
        raise RejectedInputError("need K >= 2, d >= 2, separation > 0")
    centers = _simplex_centers(K, d, separation, stream(seed, "centers"))
    rng = stream(seed, "samples")
    labels = np.repeat(np.arange(K), per_class_count)
    x = centers[labels] + rng.normal(size=(len(labels), d))
    return LabeledDataset(x, labels, K)


def gaussian_mixture_pair(K: int, d: int, per_class_count: int, separation: float,
                          seed: int, sample_tag: str) -> LabeledDataset:
    """Another draw from the same mixture as ``gen_gaussian_mixture(..., seed)``.

    Centers depend only on ``seed``; ``sample_tag`` selects an independent
    sample (for held-out source data or the test set).
    """
    centers = _simplex_centers(K, d, separation, stream(seed, "centers"))
    rng = stream(seed, "samples", sample_tag)
    labels = np.repeat(np.arange(K), per_class_count)
    x = centers[labels] + rng.normal(size=(len(labels), d))
    return LabeledDataset(x, labels, K)


def gen_two_moons(count_per_class: int, noise_sd: float, seed: int) -> LabeledDataset:
    """Class 0 on the upper unit half-circle, class 1 on the shifted lower one."""
    if not noise_sd >= 0:
        raise RejectedInputError("noise_sd must be >= 0")
    t = np.linspace(0.0, np.pi, count_per_class)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    x = np.vstack([upper, lower])
    if noise_sd > 0:
        x = x + stream(seed, "moons").normal(scale=noise_sd, size=x.shape)
    labels = np.repeat([0, 1], count_per_class)
    return LabeledDataset(x, labels, 2)


def apply_shift(dataset: LabeledDataset, spec: ShiftSpec) -> LabeledDataset:
    x = dataset.features.copy()
    y = dataset.labels
    m, d = x.shape
    rng = stream(spec.seed, "shift", spec.kind)
    if spec.kind == "mean_shift":
        x += spec.magnitude * np.ones(d) / np.sqrt(d)
    elif spec.kind == "rotation":
        if d < 2:
            raise RejectedInputError("rotation needs at least two feature dims")
        c, s = np.cos(spec.magnitude), np.sin(spec.magnitude)
        x[:, :2] = x[:, :2] @ np.array([[c, s], [-s, c]])
    elif spec.kind == "feature_noise":
        if spec.magnitude > 0:
            x += rng.normal(scale=spec.magnitude, size=x.shape)
    else:  # label_shift
        k = dataset.num_classes
        prior = spec.magnitude ** np.arange(k, dtype=float)
        if not np.all(np.isfinite(prior)) or prior.sum() == 0:
            raise RejectedInputError("label_shift magnitude gives a degenerate prior")
        prior /= prior.sum()
        counts = dataset.class_counts()
        # largest sample with class proportions proportional to the prior
        present = prior > 0
        with np.errstate(over="ignore"):  # subnormal priors give inf, i.e. unconstrained
            total = int(np.floor(np.min(counts[present] / prior[present]))) if present.any() else 0
        keep = []
        for c in range(k):
            want = int(np.floor(total * prior[c]))
            members = np.flatnonzero(y == c)
            keep.append(np.sort(rng.choice(members, size=min(want, len(members)), replace=False)))
        idx = np.sort(np.concatenate(keep)) if keep else np.array([], dtype=int)
        return dataset.subset(idx)
    return LabeledDataset(x, y.copy(), dataset.num_classes)


def save_csv(dataset: LabeledDataset, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(dataset.dim)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def _read_rows(path):
    path = Path(path)
    if not path.exists():
        raise RejectedInputError(f"no such file: {path}")
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1] != "label" or any(
                h != f"f{i}" for i, h in enumerate(header[:-1])):
            raise CsvParseError("header must be f0,...,f{d-1},label", 1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvParseError(f"expected {len(header)} cells, got {len(row)}", lineno)
            yield lineno, row


def load_csv(path, num_classes: int | None = None) -> LabeledDataset:
    """Read a labelled CSV. ``num_classes`` defaults to ``max(label) + 1``."""
    feats, labels = [], []
    for lineno, row in _read_rows(path):
        try:
            feats.append([float(v) for v in row[:-1]])
            labels.append(int(row[-1]))
        except ValueError:
            raise CsvParseError("non-numeric cell", lineno) from None
        if labels[-1] < 0 or (num_classes is not None and labels[-1] >= num_classes):
            raise RejectedInputError(f"line {lineno}: label {labels[-1]} out of range")
    k = num_classes if num_classes is not None else (max(labels) + 1 if labels else 1)
    x = np.array(feats, dtype=float).reshape(len(labels), -1) if labels else np.zeros((0, 0))
    return LabeledDataset(x, np.array(labels, dtype=int), k)


def load_csv_features(path) -> np.ndarray:
    """Read only the feature columns; the label column is never parsed."""
    feats = []
    for lineno, row in _read_rows(path):
        try:
            feats.append([float(v) for v in row[:-1]])
        except ValueError:
            raise CsvParseError("non-numeric cell", lineno) from None
    return np.array(feats, dtype=float)
