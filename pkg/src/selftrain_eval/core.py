"""Ensemble outputs and pseudo-label sets shared by the trainers, the
self-training loop, the metrics and the theory simulator.

An ensemble is consumed only through its per-point vote distribution
(``votes()``: an ``m x K`` matrix whose row ``j`` is the law of ``h(x_j)``
under ``h ~ T``). Trained ensembles give empirical fractions over their N
members; the simulator can hand over exact distributions instead.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import RejectedInputError


@dataclass(frozen=True)
class EnsemblePredictions:
    """Labels (N x m) and class probabilities (N x m x K) of N members."""

    labels: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if probs.ndim != 3 or labels.shape != probs.shape[:2]:
            raise RejectedInputError("labels must be N x m and probs N x m x K")
        if probs.shape[0] < 1:
            raise RejectedInputError("an ensemble needs at least one member")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_probs(cls, probs) -> "EnsemblePredictions":
        probs = np.asarray(probs, dtype=float)
        return cls(probs.argmax(axis=2), probs)

    @classmethod
    def from_labels(cls, labels, num_classes: int) -> "EnsemblePredictions":
        labels = np.atleast_2d(np.asarray(labels, dtype=int))
        return cls(labels, np.eye(num_classes)[labels])

    @property
    def num_models(self) -> int:
        return self.probs.shape[0]

    @property
    def num_points(self) -> int:
        return self.probs.shape[1]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[2]

    def votes(self) -> np.ndarray:
        k = self.num_classes
        counts = np.zeros((self.num_points, k))
        for row in self.labels:
            counts[np.arange(self.num_points), row] += 1
        return counts / self.num_models

    def mean_probs(self) -> np.ndarray:
        return self.probs.mean(axis=0)

    def to_csv(self, path) -> None:
        """One row per (member, point): ``member,point,label,p0..p{K-1}``."""
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["member", "point", "label"] + [f"p{k}" for k in range(self.num_classes)])
            for i in range(self.num_models):
                for j in range(self.num_points):
                    w.writerow([i, j, int(self.labels[i, j])]
                               + [repr(float(p)) for p in self.probs[i, j]])


@dataclass(frozen=True)
class ExactEnsemble:
    """An ensemble given by its exact per-point label distribution (m x K)."""

    dist: np.ndarray

    def __post_init__(self):
        dist = np.asarray(self.dist, dtype=float)
        if dist.ndim != 2 or dist.shape[1] < 1:
            raise RejectedInputError("dist must be m x K")
        if np.any(dist < -1e-12) or not np.allclose(dist.sum(axis=1), 1.0, atol=1e-9):
            raise RejectedInputError("each row of dist must be a probability vector")
        object.__setattr__(self, "dist", dist)

    @property
    def num_points(self) -> int:
        return self.dist.shape[0]

    @property
    def num_classes(self) -> int:
        return self.dist.shape[1]

    def votes(self) -> np.ndarray:
        return self.dist

    def sample(self, n_models: int, rng: np.random.Generator) -> EnsemblePredictions:
        """Draw ``n_models`` members i.i.d.: each member labels each point independently."""
        cdf = np.cumsum(self.dist, axis=1)
        cdf[:, -1] = 1.0
        u = rng.random((n_models, self.num_points, 1))
        labels = (u > cdf[None, :, :]).sum(axis=2)
        return EnsemblePredictions.from_labels(labels, self.num_classes)


def votes_of(ens) -> np.ndarray:
    """Vote distribution of an ensemble object or a raw ``m x K`` matrix."""
    if hasattr(ens, "votes"):
        return ens.votes()
    v = np.asarray(ens, dtype=float)
    if v.ndim != 2:
        raise RejectedInputError("expected an ensemble or an m x K vote matrix")
    return v


def majority_vote(votes: np.ndarray) -> np.ndarray:
    """Row-wise argmax with ties resolved to the lowest class index."""
    return np.asarray(votes).argmax(axis=1)


@dataclass(frozen=True)
class PseudoLabelSet:
    """Pseudo-labelled points ``{(index into U_X, label)}`` with sorted unique indices."""

    indices: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int).ravel()
        lab = np.asarray(self.labels, dtype=int).ravel()
        if idx.shape != lab.shape:
            raise RejectedInputError("indices and labels differ in length")
        order = np.argsort(idx, kind="stable")
        idx, lab = idx[order], lab[order]
        if np.any(np.diff(idx) == 0):
            raise RejectedInputError("pseudo-label indices must be unique")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "labels", lab)

    @classmethod
    def empty(cls) -> "PseudoLabelSet":
        return cls(np.zeros(0, dtype=int), np.zeros(0, dtype=int))

    def __len__(self) -> int:
        return len(self.indices)

    def index_set(self) -> frozenset[int]:
        return frozenset(int(i) for i in self.indices)

    def validate(self, f_labels, num_classes: int) -> None:
        f_labels = np.asarray(f_labels)
        if len(self) == 0:
            return
        if self.indices.min() < 0 or self.indices.max() >= len(f_labels):
            raise RejectedInputError("pseudo-label index out of range")
        if self.labels.min() < 0 or self.labels.max() >= num_classes:
            raise RejectedInputError("pseudo-label out of range")
        if np.any(self.labels == f_labels[self.indices]):
            raise RejectedInputError("a pseudo-label equals the prediction of f")

    def materialize(self, features) -> tuple[np.ndarray, np.ndarray]:
        """``(X, y)`` training pairs drawn from the unlabeled features."""
        x = np.asarray(features, dtype=float)
        return x[self.indices], self.labels.copy()
