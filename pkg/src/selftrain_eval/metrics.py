"""Task metrics and evaluation-mode condition measurements.

Everything here that takes ``true_labels`` is evaluation-only. Ensemble
arguments may be an ``EnsemblePredictions``, an ``ExactEnsemble`` or a raw
``m x K`` vote matrix; probabilities over ``h ~ T`` are read off the vote
matrix, so two independent draws ``h1, h2`` disagree at ``x`` with
probability ``1 - sum_k p_k(x)^2`` (with-replacement semantics).

Set memberships defined by ``Pr[...] >= level`` use an absolute slack of
``TOL`` so that vote fractions like 4/5 are not lost to rounding in the
level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import PseudoLabelSet, votes_of
from .errors import UndefinedConditionError

TOL = 1e-12


def _idx(s) -> np.ndarray:
    if isinstance(s, PseudoLabelSet):
        return s.indices
    return np.array(sorted(int(i) for i in s), dtype=int)


def misclassified(f_labels, true_labels) -> frozenset[int]:
    f, y = np.asarray(f_labels), np.asarray(true_labels)
    return frozenset(int(i) for i in np.flatnonzero(f != y))


# ---------------------------------------------------------------------------
# task metrics
# ---------------------------------------------------------------------------

def f1_error_detection(r_x, w_x) -> float:
    """F1 of flagged set ``r_x`` against the true error set ``w_x``.

    Returns 0 when either set or their intersection is empty.
    """
    r, w = set(int(i) for i in r_x), set(int(i) for i in w_x)
    hit = len(r & w)
    if not r or not w or not hit:
        return 0.0
    precision, recall = hit / len(r), hit / len(w)
    return 2 * precision * recall / (precision + recall)


def accuracy(f_labels, true_labels) -> float:
    return float(np.mean(np.asarray(f_labels) == np.asarray(true_labels)))


def estimation_error(estimate: float, f_labels, true_labels) -> float:
    return abs(float(estimate) - accuracy(f_labels, true_labels))


# ---------------------------------------------------------------------------
# condition measurements
# ---------------------------------------------------------------------------

def _correct_prob(v: np.ndarray, true_labels) -> np.ndarray:
    y = np.asarray(true_labels, dtype=int)
    return v[np.arange(len(v)), y]


def measure_nu(ens, f_labels, true_labels) -> tuple[float, float]:
    """``(average, max)`` ensemble error over points where f is correct."""
    v = votes_of(ens)
    f, y = np.asarray(f_labels), np.asarray(true_labels)
    correct = np.flatnonzero(f == y)
    if correct.size == 0:
        raise UndefinedConditionError("f is wrong everywhere; nu is undefined")
    err = 1.0 - _correct_prob(v, y)[correct]
    return math.fsum(err) / correct.size, float(err.max())


def measure_gamma(ens, f_labels, r_x) -> float | None:
    """Mean agreement with f over ``r_x``; ``None`` when ``r_x`` is empty."""
    idx = _idx(r_x)
    if idx.size == 0:
        return None
    v = votes_of(ens)
    f = np.asarray(f_labels, dtype=int)
    return math.fsum(v[idx, f[idx]]) / idx.size


def sigma_x2_all(ens) -> np.ndarray:
    v = votes_of(ens)
    return 1.0 - (v ** 2).sum(axis=1)


def sigma_x2(ens, j: int) -> float:
    v = votes_of(ens)
    return float(1.0 - (v[j] ** 2).sum())


def measure_sigma2(ens, b_x) -> float | None:
    """Mean ``sigma_x^2`` over ``b_x``; ``None`` when ``b_x`` is empty."""
    idx = _idx(b_x)
    if idx.size == 0:
        return None
    return math.fsum(sigma_x2_all(ens)[idx]) / idx.size


def partition_gb(ens, f_labels, true_labels, r_x, nu_bar: float):
    """Split ``W_X \\ R_X`` into confidently-correct ``G_X`` and the rest ``B_X``."""
    v = votes_of(ens)
    w = misclassified(f_labels, true_labels)
    rest = np.array(sorted(w - set(int(i) for i in _idx(r_x))), dtype=int)
    if rest.size == 0:
        return frozenset(), frozenset()
    good = _correct_prob(v, true_labels)[rest] >= 1.0 - nu_bar - TOL
    return (frozenset(int(i) for i in rest[good]), frozenset(int(i) for i in rest[~good]))


@dataclass
class IdealizedQuantities:
    nu_max: float
    s_x: frozenset
    gamma_pseudo_err: float
    r: float
    sigma2_all: float
    sigma2_b: float | None
    b: float | None  # None when r == 0

    def to_dict(self) -> dict:
        return {"nu_max": self.nu_max, "s_size": len(self.s_x),
                "gamma_pseudo_err": self.gamma_pseudo_err, "r": self.r,
                "sigma2_all": self.sigma2_all, "sigma2_b": self.sigma2_b, "b": self.b}


def idealized_quantities(ens, f_labels, true_labels, pseudo: PseudoLabelSet,
                         beta: float) -> IdealizedQuantities:
    """Point-wise quantities of the idealized analysis.

    ``b`` uses the average of ``sigma_x^2`` over all of U_X (``sigma2_all``);
    ``sigma2_b`` is the B_X-restricted average, reported alongside.
    ``r = |W_X \\ R_X \\ S_X| / |U_X|``.
    """
    v = votes_of(ens)
    f, y = np.asarray(f_labels, dtype=int), np.asarray(true_labels, dtype=int)
    m = len(v)
    correct = np.flatnonzero(f == y)
    cp = _correct_prob(v, y)
    nu_max = float((1.0 - cp[correct]).max()) if correct.size else 0.0
    w = misclassified(f, y)
    r_set = pseudo.index_set()
    rest = np.array(sorted(w - r_set), dtype=int)
    s_x = frozenset(int(i) for i in rest[cp[rest] >= 1.0 - beta - TOL]) if rest.size else frozenset()
    if len(pseudo):
        gamma = float((1.0 - v[pseudo.indices, pseudo.labels]).max())
    else:
        gamma = 0.0
    r = (len(rest) - len(s_x)) / m
    sx2 = sigma_x2_all(v)
    sigma2_all = math.fsum(sx2) / m
    b_set = [i for i in rest if i not in s_x]
    sigma2_b = math.fsum(sx2[b_set]) / len(b_set) if b_set else None
    base = 2 * nu_max - nu_max ** 2
    b = (sigma2_all - base * (1.0 - r)) / r if r > 0 else None
    return IdealizedQuantities(nu_max, s_x, gamma, r, sigma2_all, sigma2_b, b)


@dataclass
class ConditionRecord:
    iteration: int
    nu: float  # point-wise max error on correct points
    nu_bar: float  # average error on correct points
    gamma_agree: float | None
    sigma2: float | None  # average sigma_x^2 over B_X
    sigma2_all: float  # average sigma_x^2 over U_X
    sigma_x2: list[float]
    g_size: int
    b_size: int
    w_size: int
    w_and_r_size: int
    r_prev_size: int
    r_size: int

    def to_dict(self, with_pointwise: bool = False) -> dict:
        d = {k: getattr(self, k) for k in (
            "iteration", "nu", "nu_bar", "gamma_agree", "sigma2", "sigma2_all", "g_size",
            "b_size", "w_size", "w_and_r_size", "r_prev_size", "r_size")}
        if with_pointwise:
            d["sigma_x2"] = self.sigma_x2
        return d


def measure_conditions(ens, f_labels, true_labels, pseudo_prev: PseudoLabelSet,
                       pseudo_new: PseudoLabelSet, iteration: int) -> ConditionRecord:
    """Conditions of the ensemble trained with ``pseudo_prev`` in one iteration.

    ``gamma``, ``G_X`` and ``B_X`` refer to the pseudo-labelled set the
    ensemble was trained with.
    """
    v = votes_of(ens)
    nu_bar, nu_max = measure_nu(v, f_labels, true_labels)
    r_prev = pseudo_prev.index_set()
    g, b = partition_gb(v, f_labels, true_labels, r_prev, nu_bar)
    w = misclassified(f_labels, true_labels)
    sx2 = sigma_x2_all(v)
    return ConditionRecord(
        iteration=iteration, nu=nu_max, nu_bar=nu_bar,
        gamma_agree=measure_gamma(v, f_labels, r_prev),
        sigma2=measure_sigma2(v, b), sigma2_all=math.fsum(sx2) / len(v),
        sigma_x2=sx2.tolist(), g_size=len(g), b_size=len(b), w_size=len(w),
        w_and_r_size=len(w & r_prev), r_prev_size=len(r_prev), r_size=len(pseudo_new))


@dataclass
class ConditionReport:
    records: list[ConditionRecord] = field(default_factory=list)

    def append(self, rec: ConditionRecord) -> None:
        self.records.append(rec)

    @property
    def nu_tilde(self) -> float:
        """Max over iterations of the average error on correct points."""
        return max(r.nu_bar for r in self.records)

    @property
    def nu_max_tilde(self) -> float:
        return max(r.nu for r in self.records)

    @property
    def gamma_tilde(self) -> float | None:
        vals = [r.gamma_agree for r in self.records if r.gamma_agree is not None]
        return max(vals) if vals else None

    @property
    def sigma2_L(self) -> float | None:
        vals = [r.sigma2 for r in self.records if r.sigma2 is not None]
        return min(vals) if vals else None

    @property
    def sigma2_all_L(self) -> float:
        return min(r.sigma2_all for r in self.records)

    def to_dict(self, with_pointwise: bool = False) -> dict:
        def pct(x):
            return None if x is None else 100.0 * x

        agg = {"nu_tilde": self.nu_tilde, "nu_max_tilde": self.nu_max_tilde,
               "gamma_tilde": self.gamma_tilde, "sigma2_L": self.sigma2_L,
               "sigma2_all_L": self.sigma2_all_L}
        return {
            "fraction": agg,
            "percent": {k: pct(v) for k, v in agg.items()},
            "iterations": [r.to_dict(with_pointwise) for r in self.records],
            "metadata": {
                "sigma2": "mean sigma_x^2 over B_X (G_X/B_X relative to the R the ensemble "
                          "was trained with)",
                "sigma2_all": "mean sigma_x^2 over all of U_X; which of the two the "
                              "published diversity table uses is not stated, both reported",
                "gamma_tilde": "null when every iteration had an empty R",
            },
        }


# ---------------------------------------------------------------------------
# agreement-rate identities
# ---------------------------------------------------------------------------

@dataclass
class Decomposition:
    acc: float
    ar: float
    e_T: float
    e_f: float
    cov: float
    lhs: float
    rhs: float
    multiclass_lo: float
    multiclass_hi: float


def decomposition_check(f_labels, h_labels, true_labels) -> Decomposition:
    """``acc - ar`` against ``e_T (1 - 2 e_f) - 2 Cov(e_f, e_h)``.

    ``h_labels`` is ``m`` (one model) or ``N x m``; expectations run over
    (point, member) pairs with members weighted uniformly. The identity is
    exact for K = 2; for K > 2 ``lhs`` lies in ``[multiclass_lo, multiclass_hi]``.
    """
    f = np.asarray(f_labels, dtype=int)
    y = np.asarray(true_labels, dtype=int)
    h = np.atleast_2d(np.asarray(h_labels, dtype=int))
    ef_x = (f != y).astype(float)
    eh = (h != y[None, :]).astype(float)
    acc = 1.0 - ef_x.mean()
    ar = float((h == f[None, :]).mean())
    e_T = float(eh.mean())
    e_f = float(ef_x.mean())
    cov = float((eh * ef_x[None, :]).mean()) - e_f * e_T
    lhs = acc - ar
    rhs = e_T * (1 - 2 * e_f) - 2 * cov
    return Decomposition(acc, ar, e_T, e_f, cov, lhs, rhs, rhs, e_T * (1 - e_f) - cov)


def agreement_rate(ens, f_labels) -> float:
    v = votes_of(ens)
    f = np.asarray(f_labels, dtype=int)
    return float(v[np.arange(len(v)), f].mean())


def calibration_gap(confidences, f_labels, true_labels) -> float:
    """``|ar(f, T) - acc(f)|`` with ``C_k(x)`` given as an ``m x K`` matrix or ensemble."""
    return abs(agreement_rate(confidences, f_labels) - accuracy(f_labels, true_labels))
