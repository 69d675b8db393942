"""The ten acceptance criteria, each at its stated tolerance and time budget.

Every test records one ``criterion N: PASS|FAIL ...`` line, printed with the
test and again in the terminal summary.
"""

import itertools
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

import oracles
from selftrain_eval.cli import bench_rows, load_config
from selftrain_eval.core import EnsemblePredictions
from selftrain_eval.framework import (agreement_with_f, construct_R_majority,
                                      construct_R_threshold)
from selftrain_eval.metrics import (calibration_gap, decomposition_check, estimation_error,
                                    f1_error_detection, idealized_quantities,
                                    measure_conditions, misclassified, partition_gb,
                                    sigma_x2_all)
from selftrain_eval.numkernel import random_grad_checks
from selftrain_eval.rng import stream
from selftrain_eval.theorylab import (BoundInputs, SyntheticEnsembleSpec, corollary_bounds,
                                      idealized_bounds, lemma_sweep, theorem1_bounds,
                                      verify_geometric_convergence)

DESK_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "desk.json"


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def test_criterion_1_gradient_correctness(criterion):
    with Timer() as t:
        errs = random_grad_checks(50, seed=0, with_mmd=True)
    worst = max(errs)
    ok = len(errs) == 50 and worst < 1e-4 and t.seconds < 30
    criterion(1, ok, f"max rel err {worst:.2e} over {len(errs)} models, {t.seconds:.1f}s")
    assert ok


def test_criterion_2_decomposition_identity(criterion):
    with Timer() as t:
        worst = 0.0
        for i in range(100):
            rng = stream(2, "binary", i)
            y, f = rng.integers(0, 2, 1000), rng.integers(0, 2, 1000)
            h = rng.integers(0, 2, (int(rng.integers(1, 6)), 1000))
            d = decomposition_check(f, h, y)
            worst = max(worst, abs(d.lhs - d.rhs))
        bracket_ok = True
        for i in range(100):
            rng = stream(2, "multi", i)
            k = int(rng.integers(3, 8))
            y, f = rng.integers(0, k, 1000), rng.integers(0, k, 1000)
            h = rng.integers(0, k, (int(rng.integers(1, 6)), 1000))
            d = decomposition_check(f, h, y)
            bracket_ok &= d.multiclass_lo - 1e-12 <= d.lhs <= d.multiclass_hi + 1e-12
        table = decomposition_check([0, 1, 0, 1], [0, 1, 1, 0], [0, 0, 1, 1])
        gap = calibration_gap(np.eye(2)[[0, 1, 1, 0]], [0, 1, 0, 1], [0, 0, 1, 1])
    table_ok = (table.acc, table.ar, table.e_T, table.cov, table.lhs, table.rhs, gap) == \
        (0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0)
    ok = worst < 1e-12 and bracket_ok and table_ok and t.seconds < 5
    criterion(2, ok, f"max |lhs-rhs| {worst:.1e}, brackets {bracket_ok}, 4-point table "
                     f"{table_ok}, {t.seconds:.2f}s")
    assert ok


def test_criterion_3_lemma_sweep(criterion):
    with Timer() as t:
        res = lemma_sweep(trials=1000, m=5000, Ks=(2, 3, 10), seed=0)
    ok = res.trials == 1000 and res.violations == 0 and t.seconds < 120
    criterion(3, ok, f"{res.trials} instances, {res.violations} violations "
                     f"({res.skipped} redrawn), {t.seconds:.1f}s")
    assert ok, res.failures


def test_criterion_4_geometric_convergence(criterion):
    settings = [dict(m=5000, K=3, e_f=0.4, sigma2=0.5, seed=0),
                dict(m=5000, K=10, e_f=0.3, nu=0.02, sigma2=0.5, seed=1),
                dict(m=5000, K=2, e_f=0.2, sigma2=0.5, seed=2),
                dict(m=5000, K=3, e_f=0.5, nu=0.05, sigma2=0.5, confident_frac=0.1, seed=3)]
    t_needed = idealized_bounds(0.0, 0.5, 1.0, 3, sigma2_L=0.5, epsilon_target=0.01).T_needed
    details, ok = [], t_needed == 10
    with Timer() as t:
        for kw in settings:
            tr = verify_geometric_convergence(SyntheticEnsembleSpec(**kw), 10)
            within = all(tr.trace[s] <= 0.5 ** s * tr.trace[0] for s in range(11))
            reached = tr.trace[10] <= 0.01 * tr.trace[0]
            ok &= within and reached and tr.slack == 1.0
            details.append(f"K={kw['K']}:{tr.trace[:4]}")
    ok &= t.seconds < 60
    criterion(4, ok, f"T_needed={t_needed}, traces {' '.join(details)}, {t.seconds:.1f}s")
    assert ok


def test_criterion_5_bound_evaluators(criterion):
    with Timer() as t:
        worst, n = 0.0, 0
        for nu, g, s, e_f in itertools.product([0.0, 0.05, 0.1, 0.2, 0.4],
                                               [0.001, 0.01, 0.02, 0.05],
                                               [0.6, 0.7, 0.8, 0.9, 1.0], [0.3]):
            inp = BoundInputs(nu, g, s, e_f, eta=7 / 16, delta=4 * g / 3)
            a, c = theorem1_bounds(inp), corollary_bounds(inp)
            worst = max(worst, abs(a.epsilon - c.epsilon), abs(a.acc_err_bound - c.acc_err_bound))
            n += 1
        row = BoundInputs(0.0315, 0.0057, 0.2654, 1 - 0.2719, eta=7 / 16, delta=4 * 0.0057 / 3)
        thm, cor = theorem1_bounds(row), corollary_bounds(row)
    observed = abs(0.2719 - 0.2750)
    ok = (n == 100 and worst <= 1e-12 and thm.acc_err_bound > observed
          and cor.acc_err_bound > observed and not thm.preconditions_ok
          and not cor.preconditions_ok and t.seconds < 1)
    criterion(5, ok, f"grid {n} pts max diff {worst:.1e}; table row bound "
                     f"{thm.acc_err_bound:.4f} > {observed:.4f}, flags {thm.violations + cor.violations}, "
                     f"{t.seconds:.3f}s")
    assert ok


def test_criterion_6_threshold_equivalence(criterion):
    with Timer() as t:
        mismatches = 0
        for i in range(200):
            rng = stream(6, i)
            n = 2 * int(rng.integers(0, 8)) + 1
            bias = rng.random(100)
            labels = (rng.random((n, 100)) < bias).astype(int)
            f = rng.integers(0, 2, 100)
            e = EnsemblePredictions.from_labels(labels, 2)
            a, b = construct_R_majority(e, f), construct_R_threshold(e, f, 0.5, seed=i)
            if not (np.array_equal(a.indices, b.indices) and np.array_equal(a.labels, b.labels)):
                mismatches += 1
    ok = mismatches == 0 and t.seconds < 5
    criterion(6, ok, f"200 ensembles, {mismatches} mismatches, {t.seconds:.2f}s")
    assert ok


def test_criterion_7_desk_end_to_end(criterion):
    cfg = load_config(DESK_CONFIG)
    with Timer() as t:
        header, rows = bench_rows(cfg)
    col = {h: i for i, h in enumerate(header)}
    by = {m: [r for r in rows if r[col["method"]] == m] for m in ("ours-ri", "avg-conf", "msp")}
    assert all(len(v) == 10 for v in by.values())

    def mean(method, name):
        return float(np.mean([r[col[name]] for r in by[method]]))

    acc = mean("ours-ri", "true_accuracy")
    e1, e5 = mean("ours-ri", "err_T1"), mean("ours-ri", "err_T5")
    e_ac = mean("avg-conf", "estimation_error")
    f1_ri, f1_msp = mean("ours-ri", "f1"), mean("msp", "f1")
    a, b, c = e5 <= e1 - 0.005, e5 < e_ac, f1_ri > f1_msp
    ok = a and b and c and 0.6 <= acc <= 0.8 and t.seconds < 300
    criterion(7, ok, f"acc(f) {acc:.3f}; (a) err T5 {e5:.4f} vs T1 {e1:.4f} [{a}]; "
                     f"(b) vs avg-conf {e_ac:.4f} [{b}]; (c) F1 {f1_ri:.3f} vs MSP "
                     f"{f1_msp:.3f} [{c}]; {t.seconds:.1f}s")
    assert ok


def test_criterion_8_condition_oracles(criterion):
    tol = 1e-12
    worst = 0.0
    with Timer() as t:
        for i in range(100):
            rng = stream(8, i)
            m, n, k = int(rng.integers(5, 51)), int(rng.integers(1, 8)), int(rng.integers(2, 5))
            y = rng.integers(0, k, m)
            f = y.copy()
            wrong = rng.choice(m, size=int(rng.integers(1, m // 2 + 1)), replace=False)
            f[wrong] = (y[wrong] + rng.integers(1, k, wrong.size)) % k
            noise = rng.integers(0, k, (n, m))
            pick = rng.random((n, m))
            labels = np.where(pick < 0.5, y, np.where(pick < 0.75, f, noise))
            e = EnsemblePredictions.from_labels(labels, k)
            pseudo = construct_R_majority(e, f)
            beta = float(rng.uniform(0.0, 0.5))
            ref = oracles.brute_conditions(labels.tolist(), k, f.tolist(), y.tolist(),
                                           pseudo.indices.tolist(), pseudo.labels.tolist(),
                                           Fraction(beta))
            rec = measure_conditions(e, f, y, pseudo, pseudo, 1)
            iq = idealized_quantities(e, f, y, pseudo, beta)
            g, b = partition_gb(e, f, y, pseudo, rec.nu_bar)
            assert g == ref["G"] and b == ref["B"] and iq.s_x == ref["S"]
            pairs = [(rec.nu, ref["nu_max"]), (rec.nu_bar, ref["nu_bar"]),
                     (rec.gamma_agree, ref["gamma"]), (rec.sigma2, ref["sigma2"]),
                     (iq.r, ref["r"]), (iq.b, ref["b"]),
                     (iq.gamma_pseudo_err, ref["gamma_pseudo_err"]),
                     (rec.sigma2_all, ref["sigma2_all"])]
            pairs += list(zip(rec.sigma_x2, ref["sigma_x2"]))
            w = misclassified(f, y)
            pairs.append((f1_error_detection(pseudo.index_set(), w),
                          oracles.brute_f1(pseudo.index_set(), w)))
            est = float(rng.random())
            pairs.append((estimation_error(est, f, y), oracles.brute_estimation_error(est, f, y)))
            for got, want in pairs:
                assert (got is None) == (want is None)
                if got is not None:
                    worst = max(worst, abs(got - float(want)))
    ok = worst <= tol and t.seconds < 10
    criterion(8, ok, f"100 instances, max deviation {worst:.1e}, {t.seconds:.2f}s")
    assert ok


def test_criterion_9_agreement_bound(criterion):
    worst_ar, worst_div = -math.inf, -math.inf
    with Timer() as t:
        for i in range(1000):
            rng = stream(9, i)
            k, n, m = int(rng.integers(2, 11)), int(rng.integers(1, 12)), 30
            concentration = rng.uniform(0.05, 5.0)
            p = rng.dirichlet(np.full(k, concentration), size=m)
            cdf = np.cumsum(p, axis=1)
            labels = np.minimum((rng.random((n, m, 1)) > cdf[None]).sum(axis=2), k - 1)
            e = EnsemblePredictions.from_labels(labels, k)
            f = rng.integers(0, k, m)
            s2 = sigma_x2_all(e)
            ar = agreement_with_f(e, f)
            worst_ar = max(worst_ar, float(np.max(ar - np.sqrt(np.clip(1 - s2, 0, None)))))
            worst_div = max(worst_div, float(np.max(s2 - (1 - 1 / k))))
    ok = worst_ar <= 1e-12 and worst_div <= 1e-12 and t.seconds < 5
    criterion(9, ok, f"1000 ensembles, max(ar - sqrt(1-s2)) {worst_ar:.2e}, "
                     f"max(s2 - (1-1/K)) {worst_div:.2e}, {t.seconds:.2f}s")
    assert ok


def test_criterion_10_calibration(criterion):
    m = 10_000
    hits, gaps = 0, []
    with Timer() as t:
        for trial in range(20):
            rng = stream(10, trial)
            k = int(rng.integers(2, 6))
            conf = rng.dirichlet(np.full(k, 0.7), size=m)
            cdf = np.cumsum(conf, axis=1)
            y = np.minimum((rng.random((m, 1)) > cdf).sum(axis=1), k - 1)
            f = conf.argmax(axis=1)
            gap = calibration_gap(conf, f, y)
            gaps.append(gap)
            hits += gap <= 3 / math.sqrt(m)
    ok = hits >= 18 and t.seconds < 10
    criterion(10, ok, f"{hits}/20 trials within 3/sqrt(m)={3 / math.sqrt(m):.3f}, "
                      f"max gap {max(gaps):.4f}, {t.seconds:.2f}s")
    assert ok
