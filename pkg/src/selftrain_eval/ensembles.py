"""Ensemble trainers over the numpy MLP.

* RI: N members pre-trained on the source data from different random
  initializations, then fine-tuned for one epoch on source + pseudo-labels.
  Pre-trained members are cached, so each self-training iteration only
  repeats the fine-tune.
* RM: the pre-trained model is fine-tuned for N epochs with an extra MMD
  penalty between source and target representations; the end-of-epoch
  snapshots form the ensemble.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .core import EnsemblePredictions, PseudoLabelSet
from .errors import RejectedInputError
from .numkernel import MlpModel, MmdTerm, TrainConfig, forward, init_mlp, sgd_fit
from .rng import derive_seed

__all__ = ["EnsemblePredictions", "TrainerSpec", "RICache", "train_ri", "train_rm",
           "predict_all", "RITrainer", "RMTrainer"]


@dataclass(frozen=True)
class TrainerSpec:
    kind: str = "RI"
    n_models: int = 5
    pseudo_weight: float = 0.1
    alpha: float = 0.0
    base: TrainConfig = TrainConfig()
    finetune_lr: float | None = None  # RI: base lr; RM: base lr / 10
    encoder_widths: tuple[int, ...] = (32, 32)
    predictor_widths: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("RI", "RM"):
            raise RejectedInputError(f"unknown trainer kind {self.kind!r}")
        if self.n_models < 1:
            raise RejectedInputError("N must be >= 1")
        if not self.pseudo_weight >= 0:
            raise RejectedInputError("pseudo_weight must be >= 0")
        if not self.alpha >= 0:
            raise RejectedInputError("alpha must be >= 0")
        if self.finetune_lr is not None and not self.finetune_lr >= 0:
            raise RejectedInputError("finetune_lr must be >= 0")

    def resolved_finetune_lr(self) -> float:
        if self.finetune_lr is not None:
            return self.finetune_lr
        return self.base.learning_rate if self.kind == "RI" else self.base.learning_rate / 10.0


def _source_xy(source) -> tuple[np.ndarray, np.ndarray, int | None]:
    if hasattr(source, "features"):
        return source.features, source.labels, getattr(source, "num_classes", None)
    x, y = source
    return np.asarray(x, dtype=float), np.asarray(y, dtype=int), None


def _digest(*arrays: np.ndarray) -> str:
    h = hashlib.blake2b(digest_size=16)
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str((a.dtype, a.shape)).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass
class RICache:
    """Pre-trained RI members keyed by (source data, pre-train settings, member)."""

    members: dict = field(default_factory=dict)
    hits: int = 0
    misses: int = 0

    def __len__(self) -> int:
        return len(self.members)


def _pretrain_member(x, y, k, spec: TrainerSpec, i: int) -> MlpModel:
    model = init_mlp(x.shape[1], spec.encoder_widths, spec.predictor_widths, k,
                     seed=derive_seed(spec.seed, "member", i))
    cfg = replace(spec.base, seed=derive_seed(spec.seed, "pretrain", i))
    return sgd_fit(model, (x, y), config=cfg)


def pretrain_members(source, spec: TrainerSpec, num_classes: int | None = None,
                     cache: RICache | None = None) -> list[MlpModel]:
    x, y, k = _source_xy(source)
    k = num_classes or k
    if k is None:
        raise RejectedInputError("num_classes is required for a bare (X, y) source")
    key = (_digest(x, y), k, spec.encoder_widths, spec.predictor_widths, spec.base, spec.seed)
    out = []
    for i in range(spec.n_models):
        if cache is not None and (key, i) in cache.members:
            cache.hits += 1
            out.append(cache.members[(key, i)].copy())
            continue
        member = _pretrain_member(x, y, k, spec, i)
        if cache is not None:
            cache.misses += 1
            cache.members[(key, i)] = member.copy()
        out.append(member)
    return out


def train_ri(source, unlabeled, pseudo: PseudoLabelSet, spec: TrainerSpec,
             num_classes: int | None = None, cache: RICache | None = None,
             iteration: int = 0) -> list[MlpModel]:
    """Pre-train (or fetch) N members, then fine-tune each for one epoch on
    ``CE(D) + pseudo_weight * CE(R)``."""
    if spec.kind != "RI":
        raise RejectedInputError("train_ri needs a spec with kind='RI'")
    x, y, _ = _source_xy(source)
    pre = pretrain_members(source, spec, num_classes, cache)
    pseudo_xy = pseudo.materialize(unlabeled) if len(pseudo) else None
    lr = spec.resolved_finetune_lr()
    members = []
    for i, model in enumerate(pre):
        cfg = replace(spec.base, learning_rate=lr, epochs=1,
                      seed=derive_seed(spec.seed, "finetune", i, iteration))
        members.append(sgd_fit(model, (x, y), pseudo_xy, spec.pseudo_weight, None, cfg))
    return members


def train_rm(source, unlabeled, pseudo: PseudoLabelSet, spec: TrainerSpec, h0: MlpModel,
             iteration: int = 0) -> list[MlpModel]:
    """Fine-tune ``h0`` for N epochs on ``CE(D) + pseudo_weight * CE(R) +
    alpha * MMD^2(phi(D), phi(U_X))`` and return the end-of-epoch snapshots."""
    if spec.kind != "RM":
        raise RejectedInputError("train_rm needs a spec with kind='RM'")
    x, y, _ = _source_xy(source)
    pseudo_xy = pseudo.materialize(unlabeled) if len(pseudo) else None
    term = MmdTerm(np.asarray(unlabeled, dtype=float), spec.alpha) if spec.alpha > 0 else None
    cfg = replace(spec.base, learning_rate=spec.resolved_finetune_lr(), epochs=spec.n_models,
                  seed=derive_seed(spec.seed, "rm", iteration))
    snaps: list[MlpModel] = []
    sgd_fit(h0, (x, y), pseudo_xy, spec.pseudo_weight, term, cfg,
            on_epoch_end=lambda epoch, model: snaps.append(model))
    return snaps


def predict_all(members, unlabeled) -> EnsemblePredictions:
    members = list(members)
    if not members:
        raise RejectedInputError("need at least one member")
    x = np.asarray(unlabeled, dtype=float)
    probs = np.stack([forward(h, x)[1] for h in members])
    return EnsemblePredictions(probs.argmax(axis=2), probs)


class RITrainer:
    """Self-training adapter: ``(D, U_X, R, t) -> EnsemblePredictions``."""

    def __init__(self, spec: TrainerSpec, num_classes: int | None = None):
        self.spec = spec
        self.num_classes = num_classes
        self.cache = RICache()
        self.members: list[MlpModel] = []

    def __call__(self, source, unlabeled, pseudo: PseudoLabelSet, iteration: int):
        self.members = train_ri(source, unlabeled, pseudo, self.spec, self.num_classes,
                                self.cache, iteration)
        return predict_all(self.members, unlabeled)


class RMTrainer:
    def __init__(self, spec: TrainerSpec, h0: MlpModel):
        self.spec = spec
        self.h0 = h0
        self.members: list[MlpModel] = []

    def __call__(self, source, unlabeled, pseudo: PseudoLabelSet, iteration: int):
        self.members = train_rm(source, unlabeled, pseudo, self.spec, self.h0, iteration)
        return predict_all(self.members, unlabeled)
