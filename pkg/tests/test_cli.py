import csv
import json
from pathlib import Path

import numpy as np
import pytest

from selftrain_eval.cli import load_config, main
from selftrain_eval.datagen import gen_gaussian_mixture, save_csv

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SMALL = ["--set", "data.dim=4", "--set", "data.per_class=30", "--set", "model.encoder_widths=[8]",
         "--set", "model.epochs=5", "--set", "trainer.pretrain_epochs=5",
         "--set", "trainer.n_models=3", "--set", "framework.iterations=2"]


def run(tmp_path, *args, name="out"):
    out = tmp_path / name
    rc = main(list(args) + ["--out", str(out)])
    report = out / "report.json"
    return rc, (json.loads(report.read_text()) if report.exists() else None), out


def strip_time(report):
    report = dict(report)
    report.pop("timestamp")
    return report


def walk_keys(obj):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield k
            yield from walk_keys(v)
    elif isinstance(obj, list):
        for v in obj:
            yield from walk_keys(v)


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg["method"] == "ours-ri" and cfg["evaluation_mode"] is False

    def test_unknown_key_named(self, tmp_path):
        with pytest.raises(Exception) as exc:
            load_config(overrides=["data.bogus=1"])
        assert "data.bogus" in str(exc.value)

    def test_type_error_named(self):
        with pytest.raises(Exception) as exc:
            load_config(overrides=["framework.iterations=\"five\""])
        assert "framework.iterations" in str(exc.value)

    def test_alias(self):
        assert load_config(overrides=["method=identity"])["method"] == "degenerate"

    def test_file_and_override(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"framework": {"iterations": 3}}))
        cfg = load_config(p, ["framework.tau=0.7"], seed=5, evaluation=True)
        assert cfg["framework"] == {"iterations": 3, "mode": "majority_vote", "tau": 0.7}
        assert cfg["seed"] == 5 and cfg["evaluation_mode"]

    def test_bad_config_exit_code(self, tmp_path):
        rc, _, _ = run(tmp_path, "estimate", "--set", "data.bogus=1")
        assert rc == 2


class TestEstimate:
    def test_oracle_matches_truth(self, tmp_path):
        rc, rep, _ = run(tmp_path, "estimate", "--eval", "--set", "method=oracle", *SMALL)
        assert rc == 0
        ev = rep["evaluation"]
        assert rep["estimated_accuracy"] == ev["true_accuracy"]
        assert ev["estimation_error"] == 0.0

    def test_oracle_without_eval_rejected(self, tmp_path):
        rc, _, _ = run(tmp_path, "estimate", "--set", "method=oracle", *SMALL)
        assert rc == 2

    def test_no_label_fields_without_eval(self, tmp_path):
        rc, rep, _ = run(tmp_path, "estimate", *SMALL)
        assert rc == 0
        keys = set(walk_keys(rep))
        assert not keys & {"evaluation", "true_accuracy", "estimation_error", "f1",
                           "conditions"}

    def test_deterministic_modulo_timestamp(self, tmp_path):
        _, a, _ = run(tmp_path, "estimate", "--eval", *SMALL, name="a")
        _, b, _ = run(tmp_path, "estimate", "--eval", *SMALL, name="b")
        assert strip_time(a) == strip_time(b)

    @pytest.mark.parametrize("method", ["ours-rm", "avg-conf", "ens-avg-conf", "msp",
                                        "trust-score"])
    def test_every_method_runs(self, tmp_path, method):
        rc, rep, _ = run(tmp_path, "estimate", "--eval", "--set", f"method={method}",
                         "--set", "baselines.ens_members=2", "--set", "baselines.trust_k=3",
                         *SMALL)
        assert rc == 0
        assert 0.0 <= rep["estimated_accuracy"] <= 1.0

    def test_csv_source_features_only_without_eval(self, tmp_path):
        src = gen_gaussian_mixture(2, 3, 20, 4.0, seed=0)
        tgt = gen_gaussian_mixture(2, 3, 10, 4.0, seed=1)
        save_csv(src, tmp_path / "src.csv")
        rows = ["f0,f1,f2,label"] + [",".join(map(repr, r.tolist())) + ",hidden"
                                     for r in tgt.features]
        (tmp_path / "tgt.csv").write_text("\n".join(rows) + "\n")
        rc, rep, _ = run(tmp_path, "estimate", "--set", "data.source=\"csv\"",
                         "--set", f"data.source_csv=\"{tmp_path / 'src.csv'}\"",
                         "--set", f"data.target_csv=\"{tmp_path / 'tgt.csv'}\"",
                         "--set", "model.encoder_widths=[4]", "--set", "model.epochs=3",
                         "--set", "trainer.pretrain_epochs=3", "--set", "trainer.n_models=2",
                         "--set", "framework.iterations=1")
        assert rc == 0 and rep["num_points"] == 20


class TestDetect:
    def test_oracle_f1_one(self, tmp_path):
        rc, rep, _ = run(tmp_path, "detect", "--eval", "--set", "method=oracle", *SMALL)
        assert rc == 0 and rep["evaluation"]["f1"] == 1.0

    def test_degenerate_no_flags(self, tmp_path):
        rc, rep, _ = run(tmp_path, "detect", "--eval", "--set", "method=degenerate", *SMALL)
        assert rc == 0
        assert rep["flagged_indices"] == [] and rep["evaluation"]["f1"] == 0.0

    def test_majority_equals_threshold_binary_odd(self, tmp_path):
        common = ["--set", "data.num_classes=2", "--set", "trainer.n_models=5", *SMALL[:-4],
                  "--set", "framework.iterations=2"]
        _, a, _ = run(tmp_path, "detect", *common, name="mv")
        _, b, _ = run(tmp_path, "detect", *common, "--set", "framework.mode=\"threshold\"",
                      "--set", "framework.tau=0.5", name="th")
        assert a["flagged_indices"] == b["flagged_indices"]


class TestConditions:
    def test_needs_eval(self, tmp_path):
        rc, _, _ = run(tmp_path, "conditions", *SMALL)
        assert rc == 2

    def test_oracle_rows(self, tmp_path):
        rc, rep, out = run(tmp_path, "conditions", "--eval", "--set", "method=oracle", *SMALL)
        assert rc == 0
        rows = rep["conditions"]["iterations"]
        assert all(r["nu"] == 0.0 and r["nu_bar"] == 0.0 for r in rows)
        assert rows[0]["gamma_agree"] is None and rows[1]["gamma_agree"] == 0.0
        with (out / "table.csv").open() as fh:
            assert len(list(csv.DictReader(fh))) == 2

    def test_degenerate_rows(self, tmp_path):
        rc, rep, _ = run(tmp_path, "conditions", "--eval", "--set", "method=degenerate", *SMALL)
        assert rc == 0
        assert all(r["sigma2"] == 0.0 for r in rep["conditions"]["iterations"])

    def test_ours_rates_in_range(self, tmp_path):
        rc, rep, _ = run(tmp_path, "conditions", "--eval", *SMALL)
        assert rc == 0
        for r in rep["conditions"]["iterations"]:
            for key in ("nu", "nu_bar", "gamma_agree", "sigma2", "sigma2_all"):
                assert r[key] is None or 0.0 <= r[key] <= 1.0


class TestTheory:
    def test_example_config(self, tmp_path):
        rc, rep, _ = run(tmp_path, "theory", "--config", str(CONFIGS / "theory_example.json"))
        assert rc == 0
        assert rep["bounds"]["theorem1"]["epsilon"] == pytest.approx(0.010911 / 0.160911,
                                                                     abs=1e-5)
        assert rep["bounds"]["idealized"]["b"] == pytest.approx(1.01)
        assert rep["bounds"]["idealized"]["T_needed"] == 10
        assert rep["trace"][0] == 800 and rep["trace"][3] <= 100
        assert all(c["pass"] for c in rep["checks"])

    def test_table_row_config_flags(self, tmp_path):
        rc, rep, _ = run(tmp_path, "theory", "--config", str(CONFIGS / "table_row.json"))
        assert rc == 0
        assert not rep["bounds"]["theorem1"]["preconditions_ok"]
        assert rep["bounds"]["theorem1"]["acc_err_bound"] > 0.0031

    def test_infeasible_targets_exit(self, tmp_path, capsys):
        rc, _, _ = run(tmp_path, "theory", "--set",
                       'theory.synthetic={"m": 100, "K": 3, "e_f": 0.3, "sigma2": 0.9}')
        assert rc == 2
        assert "0 <= sigma2 <= 1 - 1/K" in capsys.readouterr().err

    def test_unknown_theory_key(self, tmp_path):
        rc, _, _ = run(tmp_path, "theory", "--set", 'theory.bounds={"nu": 0.1}')
        assert rc == 2

    def test_sweep_zero_violations(self, tmp_path):
        rc, rep, _ = run(tmp_path, "theory", "--set", "theory.sweep.trials=1000",
                         "--set", "theory.sweep.m=500")
        assert rc == 0
        assert rep["details"]["sweep"]["violations"] == 0

    def test_failed_check_exit_one(self, tmp_path):
        # nu and eta far outside the hypotheses: diverse points land in G_X but stay unflagged
        rc, rep, _ = run(tmp_path, "theory", "--set",
                         'theory.synthetic={"m": 500, "K": 3, "e_f": 0.4, "nu": 0.8, "sigma2": 0.5}',
                         "--set", "theory.lemma_eta=0.95")
        assert rc == 1
        failed = [c["name"] for c in rep["checks"] if not c["pass"]]
        assert failed == ["|G_X - R'_X| <= 0 (G_X subset of R'_X)"]
        assert not all(c["pass"] for c in rep["details"]["lemma"]["preconditions"])


class TestBench:
    def test_grid_rows_and_determinism(self, tmp_path):
        cfg = str(CONFIGS / "bench_small.json")
        rc, rep, out = run(tmp_path, "bench", "--config", cfg, name="a")
        assert rc == 0 and rep["rows"] == 12
        with (out / "table.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 12
        assert {"err_T1", "err_T2", "err_T3"} <= set(rows[0])
        keys = [(r["pair"], r["method"], int(r["seed"])) for r in rows]
        assert keys == sorted(keys)
        summary = (out / "summary.md").read_text()
        assert summary.count("±") >= 4
        _, _, out2 = run(tmp_path, "bench", "--config", cfg, name="b")
        assert (out / "table.csv").read_text() == (out2 / "table.csv").read_text()

    def test_ablation_variants(self, tmp_path):
        rc, rep, out = run(tmp_path, "bench", "--config", str(CONFIGS / "bench_small.json"),
                           "--set", "bench.ablation.n_models=[2]",
                           "--set", "bench.ablation.pseudo_weight=[0.5]",
                           "--set", "bench.seeds=[0]")
        assert rc == 0
        with (out / "table.csv").open() as fh:
            variants = {(r["method"], r["variant"]) for r in csv.DictReader(fh)}
        assert ("ours-ri", "n_models=2") in variants
        assert ("ours-ri", "pseudo_weight=0.5") in variants
        assert ("msp", "n_models=2") not in variants


class TestGradcheck:
    def test_passes(self, tmp_path):
        rc, rep, _ = run(tmp_path, "gradcheck", "--set", "gradcheck.models=5")
        assert rc == 0 and rep["pass"] and len(rep["errors"]) == 5
        assert np.max(rep["errors"]) < 1e-4
