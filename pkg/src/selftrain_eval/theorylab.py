"""Closed-form guarantees for the self-training framework and a synthetic
ensemble process on which their hypotheses can be checked exactly.

Bound evaluators never raise on violated hypotheses; they report them in
``violations`` and still evaluate the formulas, because measured conditions
on real runs routinely miss the worst-case hypotheses.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import EnsemblePredictions, ExactEnsemble, PseudoLabelSet, votes_of
from .errors import InfeasibleTargetsError, RejectedInputError
from .framework import FrameworkConfig, agreement_with_f, run_self_training
from .metrics import (TOL, idealized_quantities, measure_gamma, measure_nu, measure_sigma2,
                      misclassified, partition_gb)
from .rng import stream


def _ceil(x: float) -> float:
    """Ceiling that ignores float noise just above an integer."""
    if math.isinf(x):
        return math.inf
    return float(math.ceil(x - 1e-9))


# ---------------------------------------------------------------------------
# bound evaluators
# ---------------------------------------------------------------------------

@dataclass
class BoundInputs:
    nu_tilde: float
    gamma_tilde: float
    sigma2_L: float
    e_f: float
    eta: float | None = None
    tau: float | None = None
    delta: float | None = None
    K: int = 2
    T: int | None = None
    epsilon_target: float | None = None

    def __post_init__(self):
        for name in ("nu_tilde", "gamma_tilde", "sigma2_L", "e_f"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise RejectedInputError(f"{name} must lie in [0, 1]")
        if self.K < 2:
            raise RejectedInputError("K must be >= 2")
        if self.eta is not None and self.tau is not None:
            if abs(self.tau - math.sqrt(1 - self.eta)) > 1e-12:
                raise RejectedInputError("tau must equal sqrt(1 - eta)")

    def resolved_eta(self) -> float:
        """``eta`` as given, from ``tau``, or the midpoint of (0, 3 B_eta / 4)."""
        if self.eta is not None:
            eta = self.eta
        elif self.tau is not None:
            eta = 1.0 - self.tau ** 2
        else:
            eta = 3.0 * min(self.sigma2_L, 1.0 - self.nu_tilde ** 2) / 8.0
        if not 0 < eta < 1:
            raise RejectedInputError("eta must lie in (0, 1)")
        return eta

    def resolved_delta(self) -> float:
        return self.delta if self.delta is not None else self.sigma2_L / 8.0


@dataclass
class Bounds:
    epsilon: float
    acc_err_bound: float
    sym_diff_bound: float  # |W_X sym-diff R_X| / |U_X|
    max_iterations: float
    tau: float
    eta: float
    delta: float | None
    violations: list[str] = field(default_factory=list)

    @property
    def preconditions_ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        d = asdict(self)
        d["preconditions_ok"] = self.preconditions_ok
        if math.isinf(self.max_iterations):
            d["max_iterations"] = None
        return d


def theorem1_bounds(inputs: BoundInputs) -> Bounds:
    """Accuracy and error-set guarantees for threshold ``tau = sqrt(1 - eta)``.

    ``epsilon = (g/tau) (1 + (nu/(1-tau)) (1-e_f)/e_f) / (s/4 - delta + g/tau)``
    with ``g`` the agreement bound on R_X, ``nu`` the error bound on correct
    points and ``s`` the diversity lower bound; at most ``ceil(1/delta)``
    iterations are needed.
    """
    if inputs.e_f <= 0:
        raise RejectedInputError("e_f must be > 0 (epsilon is undefined)")
    nu, g, s, e_f = inputs.nu_tilde, inputs.gamma_tilde, inputs.sigma2_L, inputs.e_f
    eta = inputs.resolved_eta()
    delta = inputs.resolved_delta()
    tau = math.sqrt(1.0 - eta)
    violations = []
    b_eta = min(s, 1.0 - nu ** 2)
    if not 0 < eta < 0.75 * b_eta:
        violations.append("eta in (0, 3*min(sigma2_L, 1 - nu^2)/4)")
    if not 0 < delta < s / 4:
        violations.append("delta in (0, sigma2_L/4)")
    if not s > 0:
        violations.append("sigma2_L > 0")
    fp = nu / (1.0 - tau)
    g_tau = g / tau
    denom = s / 4.0 - delta + g_tau
    if denom > 0:
        eps = g_tau * (1.0 + fp * (1.0 - e_f) / e_f) / denom
    else:
        eps = math.inf
        violations.append("sigma2_L/4 - delta + gamma/tau > 0")
    acc = max(fp * (1.0 - e_f), eps * e_f)
    sym = fp * (1.0 - e_f) + eps * e_f
    iters = _ceil(1.0 / delta) if delta > 0 else math.inf
    return Bounds(eps, acc, sym, iters, tau, eta, delta, violations)


def corollary_bounds(inputs: BoundInputs) -> Bounds:
    """The ``tau = 3/4`` special case (``eta = 7/16``, ``delta = 4 g / 3``)."""
    if inputs.e_f <= 0:
        raise RejectedInputError("e_f must be > 0 (epsilon is undefined)")
    nu, g, s, e_f = inputs.nu_tilde, inputs.gamma_tilde, inputs.sigma2_L, inputs.e_f
    violations = []
    if not nu < 0.5:
        violations.append("nu < 1/2")
    if not s > 7.0 / 12.0:
        violations.append("sigma2 > 7/12")
    if not s >= 16.0 * g / 3.0:
        violations.append("sigma2_L >= 16*gamma/3")
    if g <= 0:
        violations.append("gamma > 0 (iteration count infinite)")
    eps = 16.0 * g / (3.0 * s) * (1.0 + 4.0 * nu * (1.0 - e_f) / e_f) if s > 0 else math.inf
    acc = max(4.0 * nu * (1.0 - e_f), eps * e_f)
    sym = 4.0 * nu * (1.0 - e_f) + eps * e_f
    iters = _ceil(3.0 / (4.0 * g)) if g > 0 else math.inf
    return Bounds(eps, acc, sym, iters, 0.75, 7.0 / 16.0, 4.0 * g / 3.0, violations)


@dataclass
class IdealizedBounds:
    b: float | None
    eta_lo: float
    eta_hi_lemma: float | None  # min(b, 1 - nu^2, 1 - 1/K)
    eta_hi_theorem: float | None  # min(b/K, 1 - nu^2, 1 - 1/K)
    eta_interval_empty: bool
    T_needed: float | None
    violations: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["T_needed"] is not None and math.isinf(d["T_needed"]):
            d["T_needed"] = None
        return d


def idealized_bounds(nu: float, sigma2: float, r: float, K: int, sigma2_L: float | None = None,
                     epsilon_target: float | None = None) -> IdealizedBounds:
    """Derived diversity ``b``, admissible ``eta`` range and iterations needed.

    ``b = (sigma2 - (2 nu - nu^2)(1 - r)) / r``;
    ``T_needed = ceil(ln(1/eps) / sigma2_L)``.
    """
    if epsilon_target is not None and not 0 < epsilon_target < 1:
        raise RejectedInputError("epsilon_target must lie in (0, 1)")
    base = 2 * nu - nu ** 2
    violations = []
    if not nu < 0.5:
        violations.append("nu < 1/2")
    if not sigma2 >= K * base:
        violations.append("sigma2 >= K*(2*nu - nu^2)")
    caps = min(1.0 - nu ** 2, 1.0 - 1.0 / K)
    if r > 0:
        b = (sigma2 - base * (1.0 - r)) / r
        hi_lemma, hi_thm = min(b, caps), min(b / K, caps)
        empty = not hi_thm > base
    else:
        b = hi_lemma = hi_thm = None
        empty = True
        violations.append("r > 0 (b undefined)")
    if empty:
        violations.append("eta interval non-empty")
    t_needed = None
    if epsilon_target is not None and sigma2_L is not None:
        t_needed = _ceil(math.log(1.0 / epsilon_target) / sigma2_L) if sigma2_L > 0 else math.inf
    return IdealizedBounds(b, base, hi_lemma, hi_thm, empty, t_needed, violations)


# ---------------------------------------------------------------------------
# synthetic ensemble process
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticEnsembleSpec:
    """Targets for a synthetic ensemble process over ``m`` points.

    ``regime="idealized"``: every correctly-classified point gets error
    exactly ``nu``; every pseudo-labelled point puts mass ``gamma`` on f(x)
    and ``1 - gamma`` on its pseudo-label.
    ``regime="relaxed"``: two-point mixtures over points. A fraction
    ``nu / (1 - p_lo)`` of correct points has correct-probability ``p_lo``,
    the rest 1; a fraction ``gamma / p_r_hi`` of pseudo-labelled points
    agrees with f with probability ``p_r_hi``, the rest 0.

    In both regimes the still-undetected errors are split each iteration:
    a ``confident_frac`` share is predicted correctly with certainty, and of
    the remainder a ``sigma2 / (1 - 1/K)`` share (rounded up) is uniform over
    all K classes while the others copy f. The mean ``sigma_x^2`` over that
    remainder therefore equals ``sigma2`` up to rounding (from above).
    ``n_models=None`` gives exact distributions (probability mode);
    otherwise that many members are sampled.
    """

    m: int
    K: int
    e_f: float
    regime: str = "idealized"
    nu: float = 0.0
    gamma: float = 0.0
    sigma2: float = 0.5
    confident_frac: float = 0.0
    n_models: int | None = None
    seed: int = 0
    p_lo: float = 0.5
    p_r_hi: float = 0.9

    def check(self) -> None:
        if self.regime not in ("idealized", "relaxed"):
            raise RejectedInputError(f"unknown regime {self.regime!r}")
        if self.m < 1 or self.K < 2:
            raise RejectedInputError("need m >= 1 and K >= 2")
        if not 0 < self.e_f < 1:
            raise InfeasibleTargetsError("0 < e_f < 1")
        if not 0 <= self.sigma2 <= 1 - 1 / self.K + 1e-12:
            raise InfeasibleTargetsError("0 <= sigma2 <= 1 - 1/K", f"sigma2={self.sigma2}")
        if not 0 <= self.confident_frac <= 1:
            raise InfeasibleTargetsError("0 <= confident_frac <= 1")
        if self.regime == "idealized":
            if not 0 <= self.nu <= 1:
                raise InfeasibleTargetsError("0 <= nu <= 1")
            if not 0 <= self.gamma <= 1:
                raise InfeasibleTargetsError("0 <= gamma <= 1")
        else:
            if not 0 <= self.p_lo < 1 or not 0 < self.p_r_hi <= 1:
                raise InfeasibleTargetsError("0 <= p_lo < 1 and 0 < p_r_hi <= 1")
            if not 0 <= self.nu <= 1 - self.p_lo:
                raise InfeasibleTargetsError("nu <= 1 - p_lo", f"nu={self.nu}, p_lo={self.p_lo}")
            if not 0 <= self.gamma <= self.p_r_hi:
                raise InfeasibleTargetsError("gamma <= p_r_hi",
                                             f"gamma={self.gamma}, p_r_hi={self.p_r_hi}")
        if self.n_models is not None and self.n_models < 1:
            raise RejectedInputError("n_models must be >= 1")

    @property
    def diverse_share(self) -> float:
        return min(1.0, self.sigma2 / (1.0 - 1.0 / self.K))


def _count(share: float, n: int) -> int:
    return min(n, int(math.ceil(share * n - 1e-9)))


class SyntheticProcess:
    """Ground truth plus an iteration-indexed ensemble generator.

    Calling the object with ``(source, unlabeled, pseudo, iteration)`` returns
    the ensemble for that iteration, so it plugs into ``run_self_training``.
    """

    def __init__(self, spec: SyntheticEnsembleSpec):
        spec.check()
        self.spec = spec
        rng = stream(spec.seed, "synthetic", "truth")
        m, k = spec.m, spec.K
        self.true_labels = rng.integers(0, k, size=m)
        n_wrong = int(round(spec.e_f * m))
        wrong = np.sort(rng.choice(m, size=n_wrong, replace=False))
        self.f_labels = self.true_labels.copy()
        shift = rng.integers(1, k, size=n_wrong)
        self.f_labels[wrong] = (self.true_labels[wrong] + shift) % k
        self.w_x = frozenset(int(i) for i in wrong)
        self.unlabeled = np.zeros((m, 1))

    @property
    def num_points(self) -> int:
        return self.spec.m

    def distribution(self, pseudo: PseudoLabelSet, iteration: int) -> np.ndarray:
        sp = self.spec
        m, k = sp.m, sp.K
        rng = stream(sp.seed, "synthetic", "iteration", iteration)
        y, f = self.true_labels, self.f_labels
        dist = np.zeros((m, k))
        in_r = np.zeros(m, dtype=bool)
        in_r[pseudo.indices] = True
        is_w = y != f

        correct = np.flatnonzero(~is_w & ~in_r)
        wrong_lab = (y[correct] + rng.integers(1, k, size=correct.size)) % k
        if sp.regime == "idealized":
            p_ok = np.full(correct.size, 1.0 - sp.nu)
        else:
            p_ok = np.ones(correct.size)
            n_lo = _count(sp.nu / (1.0 - sp.p_lo), correct.size) if sp.nu > 0 else 0
            p_ok[rng.permutation(correct.size)[:n_lo]] = sp.p_lo
        dist[correct, y[correct]] += p_ok
        dist[correct, wrong_lab] += 1.0 - p_ok

        r_idx, r_lab = pseudo.indices, pseudo.labels
        if sp.regime == "idealized":
            agree = np.full(r_idx.size, sp.gamma)
        else:
            agree = np.zeros(r_idx.size)
            n_hi = _count(sp.gamma / sp.p_r_hi, r_idx.size) if sp.gamma > 0 else 0
            agree[rng.permutation(r_idx.size)[:n_hi]] = sp.p_r_hi
        dist[r_idx, f[r_idx]] += agree
        dist[r_idx, r_lab] += 1.0 - agree

        rest = rng.permutation(np.flatnonzero(is_w & ~in_r))
        n_conf = int(round(sp.confident_frac * rest.size))
        conf, rest = rest[:n_conf], rest[n_conf:]
        n_div = _count(sp.diverse_share, rest.size) if sp.sigma2 > 0 else 0
        div, copy = rest[:n_div], rest[n_div:]
        dist[conf, y[conf]] = 1.0
        dist[div] = 1.0 / k
        dist[copy, f[copy]] = 1.0
        return dist

    def __call__(self, source, unlabeled, pseudo: PseudoLabelSet, iteration: int):
        exact = ExactEnsemble(self.distribution(pseudo, iteration))
        if self.spec.n_models is None:
            return exact
        return exact.sample(self.spec.n_models,
                            stream(self.spec.seed, "synthetic", "members", iteration))


def gen_synthetic_process(spec: SyntheticEnsembleSpec) -> SyntheticProcess:
    return SyntheticProcess(spec)


def random_pseudo(process: SyntheticProcess, frac_of_w: float, frac_of_correct: float,
                  seed: int) -> PseudoLabelSet:
    """A pseudo-label set covering given shares of W_X and of the correct points."""
    rng = stream(seed, "random-pseudo")
    w = np.array(sorted(process.w_x), dtype=int)
    c = np.array(sorted(set(range(process.num_points)) - process.w_x), dtype=int)
    pick = np.concatenate([
        rng.choice(w, size=int(round(frac_of_w * w.size)), replace=False) if w.size else w,
        rng.choice(c, size=int(round(frac_of_correct * c.size)), replace=False) if c.size else c,
    ]).astype(int)
    k = process.spec.K
    f = process.f_labels[pick]
    labels = (f + rng.integers(1, k, size=pick.size)) % k
    return PseudoLabelSet(pick, labels)


# ---------------------------------------------------------------------------
# lemma checks
# ---------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    lhs: float
    rhs: float
    passed: bool
    relation: str = "<="

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs,
                "relation": self.relation, "pass": self.passed}


def _le(name: str, lhs: float, rhs: float) -> Check:
    # boundary equality counts as a pass
    return Check(name, float(lhs), float(rhs), bool(lhs <= rhs + 1e-9))


@dataclass
class LemmaReport:
    eta: float
    tau: float
    quantities: dict
    preconditions: list[Check]
    checks: list[Check]

    @property
    def preconditions_ok(self) -> bool:
        return all(c.passed for c in self.preconditions)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {"eta": self.eta, "tau": self.tau, "quantities": self.quantities,
                "preconditions": [c.to_dict() for c in self.preconditions],
                "checks": [c.to_dict() for c in self.checks]}


def verify_lemma_constructR(ens, f_labels, true_labels, pseudo: PseudoLabelSet, eta: float,
                            nu: float | None = None, gamma: float | None = None) -> LemmaReport:
    """Check the four conclusions of the one-step lemma on an instance.

    ``nu``/``gamma`` default to the measured average error on correct points
    and average agreement with f on R_X; passing smaller claimed values is
    how a violated hypothesis shows up as a failed conclusion.
    """
    v = votes_of(ens)
    f, y = np.asarray(f_labels, dtype=int), np.asarray(true_labels, dtype=int)
    nu_bar, _ = measure_nu(v, f, y)
    nu = nu_bar if nu is None else nu
    gamma_m = measure_gamma(v, f, pseudo) or 0.0
    gamma = gamma_m if gamma is None else gamma
    g_x, b_x = partition_gb(v, f, y, pseudo.index_set(), nu)
    sigma2 = measure_sigma2(v, b_x)
    s2 = 0.0 if sigma2 is None else sigma2
    tau = math.sqrt(1.0 - eta)
    ar = agreement_with_f(v, f)
    r_new = set(int(i) for i in np.flatnonzero(ar < tau))
    w = misclassified(f, y)
    m = len(v)
    n_correct = m - len(w)
    r_old = pseudo.index_set()

    upper = min(s2, 1.0 - nu ** 2)
    pre = [Check("eta > 0", 0.0, eta, eta > 0, "<"),
           Check("eta < min(sigma2, 1 - nu^2)", eta, upper, eta < upper, "<")]
    checks = [
        _le("|R'_X & (U_X - W_X)| <= nu/(1-tau) |U_X - W_X|",
            len(r_new - w), nu / (1.0 - tau) * n_correct),
        _le("(1 - gamma/tau) |R_X| <= |R_X & R'_X|",
            (1.0 - gamma / tau) * len(r_old), len(r_old & r_new)),
        _le("|G_X - R'_X| <= 0 (G_X subset of R'_X)", len(g_x - r_new), 0),
        _le("(sigma2 - eta)/(1 - eta) |B_X| <= |R'_X & B_X|",
            (s2 - eta) / (1.0 - eta) * len(b_x), len(r_new & b_x)),
    ]
    q = {"nu_bar": nu_bar, "nu_used": nu, "gamma_measured": gamma_m, "gamma_used": gamma,
         "sigma2": sigma2, "g_size": len(g_x), "b_size": len(b_x), "w_size": len(w),
         "r_size": len(r_old), "r_new_size": len(r_new)}
    return LemmaReport(eta, tau, q, pre, checks)


def verify_lemma_idealized(ens, f_labels, true_labels, pseudo: PseudoLabelSet, beta: float,
                           eta: float) -> LemmaReport:
    """Check the point-wise lemma: ``R'_X`` stays inside ``W_X`` and grows by
    at least ``(b - eta)/(1 - 1/K - eta)`` of the undetected, non-confident errors."""
    v = votes_of(ens)
    f, y = np.asarray(f_labels, dtype=int), np.asarray(true_labels, dtype=int)
    k = v.shape[1]
    iq = idealized_quantities(v, f, y, pseudo, beta)
    nu = iq.nu_max
    base = 2 * nu - nu ** 2
    tau = math.sqrt(1.0 - eta)
    ar = agreement_with_f(v, f)
    r_new = set(int(i) for i in np.flatnonzero(ar < tau))
    w = misclassified(f, y)
    r_old = pseudo.index_set()
    b = iq.b if iq.b is not None else 0.0
    hi = min(b, 1.0 - nu ** 2, 1.0 - 1.0 / k)
    pre = [Check("nu < 1/2", nu, 0.5, nu < 0.5, "<"),
           Check("beta <= nu", beta, nu, beta <= nu + TOL),
           Check("gamma <= nu", iq.gamma_pseudo_err, nu, iq.gamma_pseudo_err <= nu + TOL),
           Check("sigma2 >= 2nu - nu^2", base, iq.sigma2_all, iq.sigma2_all >= base - TOL),
           Check("R_X subset of W_X", len(r_old - w), 0, not (r_old - w)),
           Check("eta in (2nu - nu^2, min(b, 1 - nu^2, 1 - 1/K))", eta, hi,
                 base < eta < hi, "<")]
    rest = len(w) - len(r_old) - len(iq.s_x)
    frac = (b - eta) / (1.0 - 1.0 / k - eta)
    checks = [
        _le("|R'_X - W_X| <= 0 (R'_X subset of W_X)", len(r_new - w), 0),
        _le("|R_X| + |S_X| + frac*(|W_X| - |R_X| - |S_X|) <= |R'_X|",
            len(r_old) + len(iq.s_x) + frac * rest, len(r_new)),
    ]
    return LemmaReport(eta, tau, iq.to_dict(), pre, checks)


@dataclass
class SweepResult:
    trials: int
    skipped: int
    violations: int
    failures: list[dict]

    def to_dict(self) -> dict:
        return asdict(self)


def lemma_sweep(trials: int = 1000, m: int = 5000, Ks=(2, 3, 10), seed: int = 0,
                max_failures: int = 20) -> SweepResult:
    """Random feasible instances (both regimes, probability mode), every
    conclusion of the one-step lemma checked; idealized instances also get
    the point-wise lemma. Instances whose measured quantities miss the
    hypotheses are redrawn and counted in ``skipped``."""
    violations, skipped, done, attempt = 0, 0, 0, 0
    failures = []
    while done < trials:
        rng = stream(seed, "sweep", attempt)
        attempt += 1
        k = int(Ks[int(rng.integers(len(Ks)))])
        regime = "idealized" if rng.random() < 0.5 else "relaxed"
        e_f = float(rng.uniform(0.1, 0.6))
        if regime == "idealized":
            nu = float(rng.uniform(0.0, 0.15))
            gamma = float(rng.uniform(0.0, nu))
        else:
            nu = float(rng.uniform(0.0, 0.2))
            gamma = float(rng.uniform(0.0, 0.2))
        spec = SyntheticEnsembleSpec(
            m=m, K=k, e_f=e_f, regime=regime, nu=nu, gamma=gamma,
            sigma2=float(rng.uniform(0.05, 1 - 1 / k)),
            confident_frac=float(rng.uniform(0.0, 0.5)), seed=int(rng.integers(2 ** 62)))
        proc = SyntheticProcess(spec)
        pseudo = random_pseudo(proc, float(rng.uniform(0.0, 0.9)),
                               0.0 if regime == "idealized" else float(rng.uniform(0.0, 0.05)),
                               seed=int(rng.integers(2 ** 62)))
        ens = proc(None, proc.unlabeled, pseudo, 1)
        v = votes_of(ens)
        nu_bar, _ = measure_nu(v, proc.f_labels, proc.true_labels)
        _, b_x = partition_gb(v, proc.f_labels, proc.true_labels, pseudo.index_set(), nu_bar)
        s2 = measure_sigma2(v, b_x)
        upper = min(s2 or 0.0, 1.0 - nu_bar ** 2)
        if not upper > 0:
            skipped += 1
            continue
        eta = float(rng.uniform(0.0, upper))
        if eta <= 0:
            skipped += 1
            continue
        reports = [verify_lemma_constructR(v, proc.f_labels, proc.true_labels, pseudo, eta)]
        if regime == "idealized":
            iq = idealized_quantities(v, proc.f_labels, proc.true_labels, pseudo, beta=nu)
            base = 2 * iq.nu_max - iq.nu_max ** 2
            hi = min(iq.b if iq.b is not None else 0.0, 1 - iq.nu_max ** 2, 1 - 1 / k)
            if hi > base:
                eta2 = float(rng.uniform(base, hi))
                if base < eta2 < hi:
                    reports.append(verify_lemma_idealized(
                        v, proc.f_labels, proc.true_labels, pseudo, iq.nu_max, eta2))
        if not all(r.preconditions_ok for r in reports):
            skipped += 1
            continue
        done += 1
        bad = [r for r in reports if not r.passed]
        if bad:
            violations += 1
            if len(failures) < max_failures:
                failures.append({"attempt": attempt - 1, "spec": asdict(spec),
                                 "reports": [r.to_dict() for r in bad]})
    return SweepResult(trials, skipped, violations, failures)


# ---------------------------------------------------------------------------
# geometric convergence
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceTrace:
    trace: list[int]  # |W_X - R_X| after t iterations, t = 0..T
    bound: list[float]  # slack * (1 - sigma2_L)^t |W_X|
    sigma2_L: float
    eta: float
    tau: float
    slack: float
    sigma2_measured: list[float | None]
    false_positives: list[int]

    @property
    def holds(self) -> bool:
        return all(t <= b + 1e-9 for t, b in zip(self.trace, self.bound))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["holds"] = self.holds
        return d


def verify_geometric_convergence(spec: SyntheticEnsembleSpec, T: int,
                                 eta: float | None = None) -> ConvergenceTrace:
    """Run the threshold framework on the synthetic process and compare the
    number of undetected errors against ``(1 - sigma2)^t |W_X|``.

    Exact distributions (``spec.n_models=None``) get no slack; sampled
    ensembles get a factor 1.05.
    """
    if spec.regime != "idealized":
        raise RejectedInputError("geometric convergence is stated for the idealized regime")
    proc = SyntheticProcess(spec)
    nu = spec.nu
    lo, hi = 2 * nu - nu ** 2, min(1 - nu ** 2, 1 - 1 / spec.K)
    if eta is None:
        eta = 0.5 * (lo + hi)
    tau = math.sqrt(1.0 - eta)
    cfg = FrameworkConfig(iterations=T, mode="threshold", tau=tau, seed=spec.seed)
    res = run_self_training(proc, proc.f_labels, None, proc.unlabeled, cfg,
                            true_labels=proc.true_labels)
    w = proc.w_x
    trace = [len(w)] + [len(w - r.pseudo.index_set()) for r in res.iterations]
    fps = [0] + [len(r.pseudo.index_set() - w) for r in res.iterations]
    slack = 1.0 if spec.n_models is None else 1.05
    s = spec.sigma2
    bound = [slack * (1.0 - s) ** t * len(w) for t in range(T + 1)]
    measured = [rec.sigma2 for rec in res.conditions.records]
    return ConvergenceTrace(trace, bound, s, eta, tau, slack, measured, fps)
