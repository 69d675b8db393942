"""Self-training loop for error detection and accuracy estimation.

Each iteration asks a trainer for an ensemble given the current pseudo-label
set R, then rebuilds R from scratch: points where the ensemble disagrees with
the pre-trained model ``f`` (majority vote differs from ``f``, or agreement
rate below a threshold ``tau``) are flagged and receive a label != f(x).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np

from .core import EnsemblePredictions, PseudoLabelSet, majority_vote, votes_of
from .errors import RejectedInputError
from .rng import stream

log = logging.getLogger(__name__)


class EnsembleTrainer(Protocol):
    """Anything that maps ``(D, U_X, R, iteration)`` to an ensemble over ``U_X``."""

    def __call__(self, source, unlabeled: np.ndarray, pseudo: PseudoLabelSet,
                 iteration: int): ...


@dataclass(frozen=True)
class FrameworkConfig:
    iterations: int = 5
    mode: str = "majority_vote"  # or "threshold"
    tau: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise RejectedInputError("iterations must be >= 1")
        if self.mode not in ("majority_vote", "threshold"):
            raise RejectedInputError(f"unknown mode {self.mode!r}")
        if self.mode == "threshold" and not 0 < self.tau < 1:
            raise RejectedInputError("tau must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "mode": self.mode, "tau": self.tau,
                "seed": self.seed}


@dataclass
class IterationRecord:
    iteration: int
    pseudo: PseudoLabelSet
    mean_agreement: float
    majority_hist: list[int]

    @property
    def r_indices(self) -> list[int]:
        return [int(i) for i in self.pseudo.indices]

    @property
    def r_size(self) -> int:
        return len(self.pseudo)


@dataclass
class RunResult:
    iterations: list[IterationRecord]
    num_points: int
    config: FrameworkConfig
    conditions: Any = None  # ConditionReport in evaluation mode
    ensembles: list = field(default_factory=list, repr=False)

    @property
    def final_pseudo(self) -> PseudoLabelSet:
        return self.iterations[-1].pseudo

    @property
    def final_R(self) -> frozenset[int]:
        return self.final_pseudo.index_set()

    @property
    def estimated_accuracy(self) -> float:
        return estimate_accuracy(self.final_R, self.num_points)

    def estimate_at(self, t: int) -> float:
        """Estimate after iteration ``t`` (1-based)."""
        return estimate_accuracy(self.iterations[t - 1].pseudo.index_set(), self.num_points)

    def to_dict(self) -> dict:
        out = {
            "estimated_accuracy": self.estimated_accuracy,
            "iterations": [{"iteration": r.iteration, "r_size": r.r_size,
                            "indices": r.r_indices,
                            "mean_agreement": r.mean_agreement} for r in self.iterations],
            "seed": self.config.seed,
            "config": self.config.to_dict(),
        }
        if self.conditions is not None:
            out["conditions"] = self.conditions.to_dict()
        return out


def agreement_with_f(ens, f_labels) -> np.ndarray:
    """Per-point fraction of ensemble mass on ``f(x)``."""
    v = votes_of(ens)
    f_labels = np.asarray(f_labels, dtype=int)
    if len(f_labels) != len(v):
        raise RejectedInputError("f_labels and ensemble cover different point counts")
    return v[np.arange(len(v)), f_labels]


def _random_other_label(f: int, k: int, seed: int, iteration: int, j: int) -> int:
    r = int(stream(seed, "pseudo-tie", iteration, j).integers(0, k - 1))
    return r if r < f else r + 1


def construct_R_threshold(ens, f_labels, tau: float, seed: int = 0,
                          iteration: int = 0) -> PseudoLabelSet:
    """Flag points with agreement < tau.

    Pseudo-label is the majority vote when it differs from f(x); otherwise a
    uniformly random label != f(x) drawn from the stream
    ``(seed, iteration, point index)``.
    """
    if not 0 < tau < 1:
        raise RejectedInputError("tau must lie in (0, 1)")
    v = votes_of(ens)
    k = v.shape[1]
    if k < 2:
        raise RejectedInputError("no valid pseudo-label exists with a single class")
    f_labels = np.asarray(f_labels, dtype=int)
    ar = agreement_with_f(v, f_labels)
    idx = np.flatnonzero(ar < tau)
    maj = majority_vote(v[idx])
    labels = maj.copy()
    for pos in np.flatnonzero(maj == f_labels[idx]):
        j = int(idx[pos])
        labels[pos] = _random_other_label(int(f_labels[j]), k, seed, iteration, j)
    return PseudoLabelSet(idx, labels)


def construct_R_majority(ens, f_labels) -> PseudoLabelSet:
    """Flag points whose majority vote (lowest-index tie-break) differs from f(x)."""
    v = votes_of(ens)
    f_labels = np.asarray(f_labels, dtype=int)
    if len(f_labels) != len(v):
        raise RejectedInputError("f_labels and ensemble cover different point counts")
    maj = majority_vote(v)
    idx = np.flatnonzero(maj != f_labels)
    return PseudoLabelSet(idx, maj[idx])


def estimate_accuracy(r_indices, m: int) -> float:
    r = set(int(i) for i in r_indices)
    if any(i < 0 or i >= m for i in r):
        raise RejectedInputError("R_X index out of range")
    return 1.0 - len(r) / m


def detect_errors(result: RunResult) -> frozenset[int]:
    return result.final_R


def run_self_training(trainer: EnsembleTrainer, f_labels, source, unlabeled,
                      config: FrameworkConfig = FrameworkConfig(), *, true_labels=None,
                      keep_ensembles: bool = False) -> RunResult:
    """Run T iterations starting from an empty R.

    ``true_labels`` switches on evaluation mode: the condition report is
    filled per iteration. Nothing else reads them.
    """
    if config.iterations < 1:
        raise RejectedInputError("iterations must be >= 1")
    from .metrics import ConditionReport, measure_conditions

    f_labels = np.asarray(f_labels, dtype=int)
    x_u = np.asarray(unlabeled, dtype=float)
    if len(f_labels) != len(x_u):
        raise RejectedInputError("f_labels must cover U_X")
    pseudo = PseudoLabelSet.empty()
    records, ensembles = [], []
    report = ConditionReport() if true_labels is not None else None
    for t in range(1, config.iterations + 1):
        ens = trainer(source, x_u, pseudo, t)
        v = votes_of(ens)
        if v.shape[0] != len(x_u):
            raise RejectedInputError("trainer returned predictions for the wrong point count")
        if config.mode == "threshold":
            new = construct_R_threshold(v, f_labels, config.tau, config.seed, t)
        else:
            new = construct_R_majority(v, f_labels)
        new.validate(f_labels, v.shape[1])
        if report is not None:
            report.append(measure_conditions(v, f_labels, true_labels, pseudo, new, t))
        if t > 1 and np.array_equal(new.indices, pseudo.indices):
            log.info("iteration %d: R_X unchanged (%d points)", t, len(new))
        records.append(IterationRecord(
            t, new, float(agreement_with_f(v, f_labels).mean()),
            np.bincount(majority_vote(v), minlength=v.shape[1]).tolist()))
        if keep_ensembles:
            ensembles.append(ens)
        pseudo = new
    return RunResult(records, len(x_u), config, report, ensembles)


class FixedTrainer:
    """Returns the same ensemble every iteration (oracle / degenerate stubs)."""

    def __init__(self, ensemble):
        self.ensemble = ensemble

    def __call__(self, source, unlabeled, pseudo, iteration):
        return self.ensemble


def oracle_trainer(true_labels, num_classes: int, n_models: int = 5) -> FixedTrainer:
    """Every member predicts the true label (evaluation-only stub)."""
    labels = np.tile(np.asarray(true_labels, dtype=int), (n_models, 1))
    return FixedTrainer(EnsemblePredictions.from_labels(labels, num_classes))


def degenerate_trainer(f_labels, num_classes: int, n_models: int = 5) -> FixedTrainer:
    """Every member copies f: the ensemble can never disagree with it."""
    labels = np.tile(np.asarray(f_labels, dtype=int), (n_models, 1))
    return FixedTrainer(EnsemblePredictions.from_labels(labels, num_classes))
