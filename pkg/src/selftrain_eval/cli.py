"""Command-line entry point.

Commands: estimate, detect, conditions, theory, bench, gradcheck.
Configuration is a JSON file merged over built-in defaults, then ``--set
dotted.key=value`` overrides (values parsed as JSON, falling back to a
string). Unknown keys are rejected with their dotted path.

Exit codes: 0 success, 1 a verification check failed, 2 bad input or
configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import datetime as _dt
import inspect
import io
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines
from .core import PseudoLabelSet
from .datagen import (LabeledDataset, ShiftSpec, apply_shift, gaussian_mixture_pair,
                      gen_gaussian_mixture, load_csv, load_csv_features)
from .ensembles import RITrainer, RMTrainer, TrainerSpec
from .errors import NumericalFailureError, RejectedInputError, UndefinedConditionError
from .framework import (FrameworkConfig, degenerate_trainer, oracle_trainer, run_self_training)
from .metrics import accuracy, f1_error_detection, misclassified
from .numkernel import MlpModel, TrainConfig, encode, forward, init_mlp, random_grad_checks, sgd_fit
from .rng import derive_seed
from . import theorylab as tl

log = logging.getLogger("selftrain_eval")

SELF_TRAINING = ("ours-ri", "ours-rm", "oracle", "degenerate")
BASELINES = ("avg-conf", "ens-avg-conf", "msp", "trust-score")
METHODS = SELF_TRAINING + BASELINES
ALIASES = {"identity": "degenerate"}

DEFAULTS: dict = {
    "seed": 0,
    "evaluation_mode": False,
    "method": "ours-ri",
    "data": {
        "source": "gaussian_mixture",  # or "csv"
        "num_classes": 3,
        "dim": 10,
        "per_class": 200,
        "separation": 3.0,
        "shift": {"kind": "mean_shift", "magnitude": 2.5},
        "source_csv": None,
        "test_csv": None,
        "target_csv": None,
    },
    "model": {
        "encoder_widths": [32, 32],
        "predictor_widths": [],
        "learning_rate": 0.05,
        "momentum": 0.9,
        "epochs": 30,
        "batch_size": 32,
    },
    "framework": {"iterations": 5, "mode": "majority_vote", "tau": 0.5},
    "trainer": {"n_models": 5, "pseudo_weight": 0.1, "alpha": 1.0, "finetune_lr": None,
                "pretrain_epochs": 30},
    "baselines": {"ens_members": 10, "trust_k": 10},
    "theory": {
        "bounds": None,
        "idealized": None,
        "synthetic": None,
        "lemma_eta": None,
        "convergence_T": 0,
        "sweep": {"trials": 0, "m": 5000, "Ks": [2, 3, 10]},
    },
    "bench": {
        "pairs": [{"name": "gm-mean-shift", "data": {}}],
        "methods": ["ours-ri", "avg-conf", "msp"],
        "seeds": [0, 1, 2],
        "ablation": {"n_models": [], "pseudo_weight": []},
    },
    "gradcheck": {"models": 50, "with_mmd": True, "step": 1e-5, "tolerance": 1e-4},
}

# keys whose default is None or whose content is free-form
_FREE = {"data.source_csv", "data.test_csv", "data.target_csv", "trainer.finetune_lr",
         "theory.bounds", "theory.idealized", "theory.synthetic", "theory.lemma_eta"}
_FREE_LISTS = {"bench.pairs"}


class ConfigError(RejectedInputError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _type_ok(default, value) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return True


def _validate(defaults: dict, cfg: dict, prefix: str = "") -> None:
    for key, value in cfg.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown config key: {path}")
        default = defaults[key]
        if path in _FREE or path in _FREE_LISTS:
            if path in _FREE_LISTS and not isinstance(value, list):
                raise ConfigError(f"{path}: expected a list")
            continue
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: expected an object")
            _validate(default, value, path + ".")
        elif not _type_ok(default, value):
            raise ConfigError(f"{path}: expected {type(default).__name__}, "
                              f"got {type(value).__name__}")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_dotted(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted}: {k} is not an object")
    node[keys[-1]] = value


def load_config(path=None, overrides=(), seed=None, evaluation=None) -> dict:
    user: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            user = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigError("config root must be an object")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, text = item.split("=", 1)
        _set_dotted(user, key.strip(), _parse_value(text))
    if seed is not None:
        user["seed"] = seed
    if evaluation:
        user["evaluation_mode"] = True
    _validate(DEFAULTS, user)
    cfg = _merge(DEFAULTS, user)
    cfg["method"] = ALIASES.get(cfg["method"], cfg["method"])
    if cfg["method"] not in METHODS:
        raise ConfigError(f"method: unknown method {cfg['method']!r}")
    if not 0 <= cfg["seed"] < 2 ** 64:
        raise ConfigError("seed: must be an unsigned 64-bit integer")
    return cfg


# ---------------------------------------------------------------------------
# data and models
# ---------------------------------------------------------------------------

@dataclass
class Problem:
    source: LabeledDataset
    test: LabeledDataset  # held-out source data (threshold calibration)
    target_x: np.ndarray
    target_y: np.ndarray | None  # only in evaluation mode
    num_classes: int


def load_problem(cfg: dict, evaluation: bool) -> Problem:
    d, seed = cfg["data"], cfg["seed"]
    if d["source"] == "gaussian_mixture":
        k, dim, n, sep = d["num_classes"], d["dim"], d["per_class"], d["separation"]
        source = gen_gaussian_mixture(k, dim, n, sep, seed)
        test = gaussian_mixture_pair(k, dim, n, sep, seed, "test")
        shift = ShiftSpec(d["shift"]["kind"], float(d["shift"]["magnitude"]), seed)
        target = apply_shift(gaussian_mixture_pair(k, dim, n, sep, seed, "target"), shift)
        return Problem(source, test, target.features,
                       target.labels if evaluation else None, k)
    if d["source"] == "csv":
        for key in ("source_csv", "target_csv"):
            if not d[key]:
                raise ConfigError(f"data.{key}: required when data.source is 'csv'")
        source = load_csv(d["source_csv"])
        k = source.num_classes
        test = load_csv(d["test_csv"], k) if d["test_csv"] else source
        if evaluation:
            target = load_csv(d["target_csv"], k)
            return Problem(source, test, target.features, target.labels, k)
        return Problem(source, test, load_csv_features(d["target_csv"]), None, k)
    raise ConfigError(f"data.source: unknown source {d['source']!r}")


def _train_config(cfg: dict, seed: int, epochs: int | None = None) -> TrainConfig:
    m = cfg["model"]
    return TrainConfig(learning_rate=float(m["learning_rate"]), momentum=float(m["momentum"]),
                       epochs=int(epochs if epochs is not None else m["epochs"]),
                       batch_size=int(m["batch_size"]), seed=seed)


def train_model(cfg: dict, problem: Problem, member: int | None = None) -> MlpModel:
    """The pre-trained model ``f`` (``member=None``) or one independently seeded copy."""
    tags = ("f",) if member is None else ("ens-avg", member)
    seed = derive_seed(cfg["seed"], *tags)
    m = cfg["model"]
    model = init_mlp(problem.source.dim, m["encoder_widths"], m["predictor_widths"],
                     problem.num_classes, seed=seed)
    return sgd_fit(model, problem.source, config=_train_config(cfg, seed))


def _trainer_spec(cfg: dict, kind: str) -> TrainerSpec:
    t, m = cfg["trainer"], cfg["model"]
    return TrainerSpec(kind=kind, n_models=int(t["n_models"]),
                       pseudo_weight=float(t["pseudo_weight"]), alpha=float(t["alpha"]),
                       base=_train_config(cfg, derive_seed(cfg["seed"], "trainer"),
                                          t["pretrain_epochs"]),
                       finetune_lr=t["finetune_lr"],
                       encoder_widths=tuple(m["encoder_widths"]),
                       predictor_widths=tuple(m["predictor_widths"]),
                       seed=derive_seed(cfg["seed"], "ensemble", kind))


# ---------------------------------------------------------------------------
# methods
# ---------------------------------------------------------------------------

@dataclass
class MethodResult:
    method: str
    estimated_accuracy: float
    flagged: list[int]
    estimates_by_iteration: list[float] | None = None
    run: object = None
    threshold: float | None = None
    metadata: dict | None = None


def run_method(method: str, cfg: dict, problem: Problem, f: MlpModel) -> MethodResult:
    method = ALIASES.get(method, method)
    x_u = problem.target_x
    _, f_probs = forward(f, x_u)
    f_labels = f_probs.argmax(axis=1)
    k = problem.num_classes
    fw = cfg["framework"]
    if method in SELF_TRAINING:
        if method == "ours-ri":
            trainer = RITrainer(_trainer_spec(cfg, "RI"), k)
        elif method == "ours-rm":
            trainer = RMTrainer(_trainer_spec(cfg, "RM"), f)
        elif method == "oracle":
            if problem.target_y is None:
                raise ConfigError("method: 'oracle' needs evaluation mode (--eval)")
            trainer = oracle_trainer(problem.target_y, k, cfg["trainer"]["n_models"])
        else:
            trainer = degenerate_trainer(f_labels, k, cfg["trainer"]["n_models"])
        fc = FrameworkConfig(iterations=int(fw["iterations"]), mode=fw["mode"],
                             tau=float(fw["tau"]), seed=cfg["seed"])
        run = run_self_training(trainer, f_labels, problem.source, x_u, fc,
                                true_labels=problem.target_y)
        return MethodResult(method, run.estimated_accuracy, sorted(run.final_R),
                            [run.estimate_at(t) for t in range(1, fc.iterations + 1)], run)
    if method == "avg-conf":
        return MethodResult(method, baselines.avg_conf(f_probs), [])
    if method == "ens-avg-conf":
        n = int(cfg["baselines"]["ens_members"])
        members = [train_model(cfg, problem, i) for i in range(n)]
        probs = np.stack([forward(h, x_u)[1] for h in members])
        return MethodResult(method, baselines.ens_avg_conf(probs), [],
                            metadata={"members": n})
    # detectors calibrated on held-out source data at f's error rate there
    test_probs = forward(f, problem.test.features)[1]
    rate = 1.0 - accuracy(test_probs.argmax(axis=1), problem.test.labels)
    if method == "msp":
        thr = baselines.calibrate_threshold(test_probs.max(axis=1), rate)
        flagged = baselines.msp_detect(f_probs, thr)
        meta = {"calibration_error_rate": rate}
    else:
        kk = int(cfg["baselines"]["trust_k"])
        reps_src = encode(f, problem.source.features)
        ts_test = baselines.trust_score(reps_src, problem.source.labels,
                                        encode(f, problem.test.features),
                                        test_probs.argmax(axis=1), kk, k)
        thr = baselines.calibrate_threshold(ts_test, rate)
        ts = baselines.trust_score(reps_src, problem.source.labels, encode(f, x_u),
                                   f_labels, kk, k)
        flagged = baselines.trust_detect(ts, thr)
        meta = {"calibration_error_rate": rate, "k": kk,
                "representation": "encoder output of the pre-trained model"}
    m = len(x_u)
    return MethodResult(method, 1.0 - len(flagged) / m, flagged, threshold=thr, metadata=meta)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _header(command: str, cfg: dict) -> dict:
    return {"command": command, "seed": cfg["seed"], "config": cfg,
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}


def _estimate_report(command: str, cfg: dict, problem: Problem, f: MlpModel,
                     res: MethodResult, with_flags: bool) -> dict:
    f_labels = forward(f, problem.target_x)[1].argmax(axis=1)
    rep = _header(command, cfg)
    rep.update({"method": res.method, "num_points": len(problem.target_x),
                "estimated_accuracy": res.estimated_accuracy,
                "estimates_by_iteration": res.estimates_by_iteration,
                "threshold": res.threshold, "method_metadata": res.metadata})
    if res.run is not None:
        rep["r_sizes"] = [r.r_size for r in res.run.iterations]
    if with_flags:
        rep["flagged_indices"] = res.flagged
    if problem.target_y is not None:
        y = problem.target_y
        acc = accuracy(f_labels, y)
        ev = {"true_accuracy": acc, "estimation_error": abs(res.estimated_accuracy - acc),
              "f1": f1_error_detection(res.flagged, misclassified(f_labels, y))}
        if res.estimates_by_iteration is not None:
            ev["estimation_error_by_iteration"] = [abs(e - acc)
                                                   for e in res.estimates_by_iteration]
        if res.run is not None and res.run.conditions is not None:
            ev["conditions"] = res.run.conditions.to_dict()
        rep["evaluation"] = ev
    return rep


def _prepare(cfg: dict):
    evaluation = bool(cfg["evaluation_mode"])
    problem = load_problem(cfg, evaluation)
    f = train_model(cfg, problem)
    return problem, f


def cmd_estimate(cfg: dict, out: Path) -> int:
    problem, f = _prepare(cfg)
    res = run_method(cfg["method"], cfg, problem, f)
    rep = _estimate_report("estimate", cfg, problem, f, res, with_flags=False)
    write_json(out / "report.json", rep)
    print(f"estimated accuracy: {res.estimated_accuracy:.4f}")
    if "evaluation" in rep:
        print(f"true accuracy: {rep['evaluation']['true_accuracy']:.4f} "
              f"(error {rep['evaluation']['estimation_error']:.4f})")
    return 0


def cmd_detect(cfg: dict, out: Path) -> int:
    problem, f = _prepare(cfg)
    res = run_method(cfg["method"], cfg, problem, f)
    rep = _estimate_report("detect", cfg, problem, f, res, with_flags=True)
    write_json(out / "report.json", rep)
    print(f"flagged {len(res.flagged)} of {len(problem.target_x)} points")
    if "evaluation" in rep:
        print(f"F1: {rep['evaluation']['f1']:.4f}")
    return 0


def cmd_conditions(cfg: dict, out: Path) -> int:
    if not cfg["evaluation_mode"]:
        raise ConfigError("evaluation_mode: the conditions command needs --eval")
    if cfg["method"] not in SELF_TRAINING:
        raise ConfigError(f"method: conditions need a self-training method, "
                          f"got {cfg['method']!r}")
    problem, f = _prepare(cfg)
    res = run_method(cfg["method"], cfg, problem, f)
    cond = res.run.conditions.to_dict()
    rep = _header("conditions", cfg)
    rep.update({"method": res.method, "conditions": cond})
    write_json(out / "report.json", rep)
    cols = ["iteration", "nu", "nu_bar", "gamma_agree", "sigma2", "sigma2_all", "g_size",
            "b_size", "w_size", "w_and_r_size", "r_prev_size", "r_size"]
    rows = [[_clean(r[c]) for c in cols] for r in cond["iterations"]]
    _write_csv(out / "table.csv", cols, rows)
    agg = cond["fraction"]
    print("nu_tilde={nu_tilde} gamma_tilde={gamma_tilde} sigma2_L={sigma2_L}".format(**agg))
    return 0


def _kwargs(target, given: dict, path: str) -> dict:
    """Reject keys that ``target`` (a dataclass or function) does not accept."""
    if not isinstance(given, dict):
        raise ConfigError(f"{path}: expected an object")
    if dataclasses.is_dataclass(target):
        names = {f.name for f in dataclasses.fields(target)}
    else:
        names = set(inspect.signature(target).parameters)
    for key in given:
        if key not in names:
            raise ConfigError(f"unknown config key: {path}.{key}")
    return given


def cmd_theory(cfg: dict, out: Path) -> int:
    th = cfg["theory"]
    rep = _header("theory", cfg)
    bounds, checks, trace = {}, [], None
    if th["bounds"] is not None:
        inputs = tl.BoundInputs(**_kwargs(tl.BoundInputs, th["bounds"], "theory.bounds"))
        bounds["theorem1"] = tl.theorem1_bounds(inputs).to_dict()
        bounds["corollary"] = tl.corollary_bounds(inputs).to_dict()
    if th["idealized"] is not None:
        bounds["idealized"] = tl.idealized_bounds(
            **_kwargs(tl.idealized_bounds, th["idealized"], "theory.idealized")).to_dict()
    extra = {}
    if th["synthetic"] is not None:
        spec = tl.SyntheticEnsembleSpec(
            **_kwargs(tl.SyntheticEnsembleSpec, th["synthetic"], "theory.synthetic"))
        spec.check()
        proc = tl.SyntheticProcess(spec)
        if th["lemma_eta"] is not None:
            ens = proc(None, proc.unlabeled, PseudoLabelSet.empty(), 1)
            lemma = tl.verify_lemma_constructR(ens, proc.f_labels, proc.true_labels,
                                               PseudoLabelSet.empty(), float(th["lemma_eta"]))
            checks += [c.to_dict() for c in lemma.checks]
            extra["lemma"] = lemma.to_dict()
        if th["convergence_T"]:
            conv = tl.verify_geometric_convergence(spec, int(th["convergence_T"]))
            trace = conv.trace
            checks.append({"name": "|W_X - R_X| <= (1 - sigma2)^t |W_X| for all t",
                           "lhs": None, "rhs": None, "relation": "<=", "pass": conv.holds})
            extra["convergence"] = conv.to_dict()
    sw = th["sweep"]
    if sw["trials"]:
        res = tl.lemma_sweep(int(sw["trials"]), int(sw["m"]), tuple(sw["Ks"]), seed=cfg["seed"])
        checks.append({"name": f"lemma sweep: {res.trials} instances, zero violations",
                       "lhs": res.violations, "rhs": 0, "relation": "<=",
                       "pass": res.violations == 0})
        extra["sweep"] = res.to_dict()
    rep.update({"bounds": bounds, "checks": checks, "trace": trace, "details": extra})
    write_json(out / "report.json", rep)
    for name, b in bounds.items():
        eps = b.get("epsilon", b.get("b"))
        print(f"{name}: {eps} violations={b.get('violations')}")
    failed = [c["name"] for c in checks if not c["pass"]]
    for name in failed:
        print(f"FAILED: {name}", file=sys.stderr)
    return 1 if failed else 0


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, float) else v)
                    for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _mean_std(vals):
    vals = [v for v in vals if v is not None]
    if not vals:
        return None, None
    a = np.asarray(vals, dtype=float)
    return float(a.mean()), float(a.std(ddof=1)) if len(a) > 1 else 0.0


def bench_rows(cfg: dict) -> tuple[list[str], list[list]]:
    b = cfg["bench"]
    t_max = int(cfg["framework"]["iterations"])
    header = ["pair", "method", "variant", "seed", "true_accuracy", "estimated_accuracy",
              "estimation_error", "f1"] + [f"err_T{t}" for t in range(1, t_max + 1)]
    cells = []
    for pair in b["pairs"]:
        if not isinstance(pair, dict) or "name" not in pair:
            raise ConfigError("bench.pairs: each pair needs a 'name'")
        unknown = set(pair) - {"name", "data"}
        if unknown:
            raise ConfigError(f"bench.pairs.{pair['name']}: unknown keys {sorted(unknown)}")
        variants = [("default", {})]
        for key in ("n_models", "pseudo_weight"):
            for v in b["ablation"][key]:
                variants.append((f"{key}={v}", {"trainer": {key: v}}))
        for method in b["methods"]:
            method = ALIASES.get(method, method)
            if method not in METHODS:
                raise ConfigError(f"bench.methods: unknown method {method!r}")
            for variant, over in variants:
                if variant != "default" and method not in ("ours-ri", "ours-rm"):
                    continue
                for seed in b["seeds"]:
                    cells.append((pair, method, variant, over, int(seed)))
    rows = []
    for pair, method, variant, over, seed in cells:
        sub = {"data": pair.get("data", {}), "seed": seed, "evaluation_mode": True,
               "method": method, **over}
        _validate(DEFAULTS, sub)
        c = _merge(cfg, sub)
        problem = load_problem(c, evaluation=True)
        f = train_model(c, problem)
        res = run_method(method, c, problem, f)
        f_labels = forward(f, problem.target_x)[1].argmax(axis=1)
        acc = accuracy(f_labels, problem.target_y)
        f1 = f1_error_detection(res.flagged, misclassified(f_labels, problem.target_y)) \
            if method not in ("avg-conf", "ens-avg-conf") else None
        per_t = [abs(e - acc) for e in res.estimates_by_iteration] \
            if res.estimates_by_iteration is not None else [None] * t_max
        rows.append([pair["name"], method, variant, seed, acc, res.estimated_accuracy,
                     abs(res.estimated_accuracy - acc), f1] + per_t)
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    return header, rows


def cmd_bench(cfg: dict, out: Path) -> int:
    header, rows = bench_rows(cfg)
    _write_csv(out / "table.csv", header, rows)
    groups: dict = {}
    for r in rows:
        groups.setdefault((r[0], r[1], r[2]), []).append(r)
    summary = []
    lines = ["| pair | method | variant | seeds | est. error (mean ± std) | F1 (mean ± std) |",
             "|---|---|---|---|---|---|"]
    for (pair, method, variant), rs in sorted(groups.items()):
        em, es = _mean_std([r[6] for r in rs])
        fm, fs = _mean_std([r[7] for r in rs])
        per_t = [_mean_std([r[8 + t] for r in rs])[0] for t in range(len(header) - 8)]
        summary.append({"pair": pair, "method": method, "variant": variant, "n": len(rs),
                        "estimation_error_mean": em, "estimation_error_std": es,
                        "f1_mean": fm, "f1_std": fs, "estimation_error_by_T": per_t})
        f1_cell = "n/a" if fm is None else f"{fm:.3f} ± {fs:.3f}"
        lines.append(f"| {pair} | {method} | {variant} | {len(rs)} | {em:.4f} ± {es:.4f} "
                     f"| {f1_cell} |")
    (out / "summary.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    rep = _header("bench", cfg)
    rep.update({"rows": len(rows), "summary": summary})
    write_json(out / "report.json", rep)
    print("\n".join(lines))
    return 0


def cmd_gradcheck(cfg: dict, out: Path) -> int:
    g = cfg["gradcheck"]
    errs = random_grad_checks(int(g["models"]), seed=cfg["seed"], with_mmd=bool(g["with_mmd"]),
                              step=float(g["step"]))
    worst = max(errs)
    ok = worst < float(g["tolerance"])
    rep = _header("gradcheck", cfg)
    rep.update({"max_relative_error": worst, "errors": errs, "pass": ok})
    write_json(out / "report.json", rep)
    print(f"max relative error over {len(errs)} models: {worst:.3e} "
          f"({'pass' if ok else 'FAIL'})")
    return 0 if ok else 1


COMMANDS = {"estimate": cmd_estimate, "detect": cmd_detect, "conditions": cmd_conditions,
            "theory": cmd_theory, "bench": cmd_bench, "gradcheck": cmd_gradcheck}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selftrain-eval",
        description="Unsupervised accuracy estimation and error detection with "
                    "self-trained ensembles.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a dotted config key (repeatable)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, help="global seed")
        p.add_argument("--eval", action="store_true",
                       help="evaluation mode: read target labels and report errors")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    stage = "config"
    try:
        cfg = load_config(args.config, args.set, args.seed, args.eval)
        args.out.mkdir(parents=True, exist_ok=True)
        stage = args.command
        return COMMANDS[args.command](cfg, args.out)
    except (RejectedInputError, UndefinedConditionError) as exc:
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return 2
    except NumericalFailureError as exc:
        print(f"numerical failure [{stage}]: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
