"""Comparison methods: confidence averages and threshold-based error detectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RejectedInputError

TRUST_CAP = 1e12


@dataclass
class BaselineOutput:
    method: str
    estimated_accuracy: float | None = None
    flagged_indices: list[int] | None = None
    threshold: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.estimated_accuracy is None and self.flagged_indices is None:
            raise RejectedInputError("a baseline output needs an estimate or a flag set")

    def to_dict(self) -> dict:
        d = {"method": self.method, "estimated_accuracy": self.estimated_accuracy,
             "threshold": self.threshold, "metadata": self.metadata}
        if self.flagged_indices is not None:
            d["flagged_indices"] = list(self.flagged_indices)
        return d


def _probs2(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 2:
        raise RejectedInputError("expected an m x K probability matrix")
    return p


def avg_conf(f_probs) -> float:
    """Mean of the top-class probability."""
    p = _probs2(f_probs)
    return float(p.max(axis=1).mean())


def ens_avg_conf(ens_probs) -> float:
    """Mean top-class probability of the member-averaged prediction (N x m x K input)."""
    p = np.asarray(ens_probs, dtype=float)
    if p.ndim != 3:
        raise RejectedInputError("expected an N x m x K probability tensor")
    return float(p.mean(axis=0).max(axis=1).mean())


def calibrate_threshold(scores, rate: float) -> float:
    """Threshold flagging (``score < threshold``) the ``ceil(rate * n)`` lowest scores.

    With ties at the cut every tied score is flagged, so the flagged share
    is the smallest achievable share >= ``rate``.
    """
    s = np.sort(np.asarray(scores, dtype=float).ravel())
    if s.size == 0:
        raise RejectedInputError("scores must be nonempty")
    if not 0 <= rate <= 1:
        raise RejectedInputError("rate must lie in [0, 1]")
    k = int(np.ceil(rate * s.size - 1e-9))
    if k == 0:
        return float(np.nextafter(s[0], -np.inf))
    return float(np.nextafter(s[k - 1], np.inf))


def msp_detect(f_probs, threshold: float) -> list[int]:
    """Indices whose maximum softmax probability is below ``threshold``."""
    if not np.isfinite(threshold):
        raise RejectedInputError("threshold must be finite")
    p = _probs2(f_probs)
    return np.flatnonzero(p.max(axis=1) < threshold).tolist()


def _kth_distance(train: np.ndarray, test: np.ndarray, k: int) -> np.ndarray:
    d2 = ((test[:, None, :] - train[None, :, :]) ** 2).sum(axis=2)
    kk = min(k, train.shape[0])
    return np.sqrt(np.partition(d2, kk - 1, axis=1)[:, kk - 1])


def trust_score(train_features, train_labels, test_features, f_labels, k: int = 10,
                num_classes: int | None = None) -> np.ndarray:
    """Ratio of the distance to the nearest other class over the distance to
    the predicted class, each measured to that class's k-th nearest training
    point (fewer points in a class: its farthest one). Zero denominators
    give ``TRUST_CAP``.
    """
    if k < 1:
        raise RejectedInputError("k must be >= 1")
    xtr = np.asarray(train_features, dtype=float)
    ytr = np.asarray(train_labels, dtype=int)
    xte = np.asarray(test_features, dtype=float)
    f = np.asarray(f_labels, dtype=int)
    if xtr.ndim != 2 or xte.ndim != 2 or xtr.shape[1] != xte.shape[1]:
        raise RejectedInputError("train and test features must be 2-D with equal width")
    kk = num_classes if num_classes is not None else int(max(ytr.max(), f.max())) + 1
    present = np.bincount(ytr, minlength=kk)
    if np.any(present[:kk] == 0):
        missing = np.flatnonzero(present[:kk] == 0).tolist()
        raise RejectedInputError(f"classes {missing} are absent from the training set")
    dist = np.stack([_kth_distance(xtr[ytr == c], xte, k) for c in range(kk)], axis=1)
    rows = np.arange(len(xte))
    own = dist[rows, f]
    other = dist.copy()
    other[rows, f] = np.inf
    nearest_other = other.min(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(own > 0, nearest_other / np.where(own > 0, own, 1.0), TRUST_CAP)
    return np.minimum(score, TRUST_CAP)


def trust_detect(scores, threshold: float) -> list[int]:
    if not np.isfinite(threshold):
        raise RejectedInputError("threshold must be finite")
    return np.flatnonzero(np.asarray(scores) < threshold).tolist()
