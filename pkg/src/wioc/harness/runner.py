"""Experiment pipelines: simulate, fit, evaluate, report.

Reports hold only quantities that are a pure function of the config, so two
runs of one config write byte-identical ``report.json`` files. Wall-clock
times go to ``timing.json`` alongside.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..baselines import BcFitOptions, bc_fit, bc_score
from ..core import EmpiricalMeasure, exact_w1, rank_metrics
from ..cost_models import CostModel, make_cost
from ..envs import (kl_scores, make_demonstrations, oracle_scores, ranking_outcomes,
                    recommender_task, sample_baseline, split_count, w_scores)
from ..errors import ConfigError, InvalidInputError, NumericError, WiocError
from ..extensions import ExtFitOptions, fit_joint, fit_policy
from ..generator import Generator, noise_batch
from ..io import dumps_exact, write_measure_csv
from ..kl_ioc import KlFitOptions, fit_kl, optimal_weights, sample_reweighted
from ..w_ioc import WFitOptions, fit_w, optimal_measure
from .config import ExperimentConfig
from .schemas import validate

REPORT_VERSION = 1
METRICS = ("top1", "top5", "w1", "theta_error", "w1_ratio")
EVAL_NOISE = 256


@dataclass
class Fitted:
    """What a method learned: a cost (KL/W-style methods) and/or a generator."""
    model: Optional[CostModel] = None
    generator: Optional[Generator] = None


def _initial_model(cfg: ExperimentConfig, K: int, seed: int) -> CostModel:
    m = cfg.model
    rng = np.random.default_rng([seed, 0x4D49])
    return make_cost(m.family, K, None if m.theta0 is None else np.asarray(m.theta0), rng=rng,
                     feature_map=m.feature_map, hidden=m.hidden)


def fit_method(cfg: ExperimentConfig, demos: EmpiricalMeasure, baseline: EmpiricalMeasure, seed: int,
               model: Optional[CostModel] = None, log_path=None, checkpoint_dir=None) -> Fitted:
    f = cfg.fit
    method = cfg.method
    if model is None and method in ("kl", "maxent", "w", "joint"):
        model = _initial_model(cfg, demos.dim, seed)
    if method in ("kl", "maxent"):
        res = fit_kl(demos, baseline, cfg.gamma, model, KlFitOptions(f.lr_kl, f.batch_size, f.epochs, seed),
                     uniform_baseline=method == "maxent", log_path=log_path)
        return Fitted(model=res.model)
    if method == "w":
        opts = WFitOptions(iterations=f.iterations, n_critic=f.n_critic, lr_critic=f.lr_critic,
                           lr_theta=f.lr_theta, batch_size=f.batch_size, refresh_every=f.refresh_every,
                           clip_bound=f.clip_bound, seed=seed, transport=cfg.transport)
        res = fit_w(demos, baseline, cfg.gamma, model, opts, log_path=log_path, checkpoint_dir=checkpoint_dir)
        return Fitted(model=res.model)
    if method == "bc":
        res = bc_fit(demos, f.noise_dim, BcFitOptions(f.bc_steps, f.lr_bc, f.batch_size, seed=seed),
                     log_path=log_path)
        return Fitted(generator=res.policy)
    ext = ExtFitOptions(iterations=f.iterations, n_critic=f.n_critic, lr_critic=f.lr_critic,
                        lr_generator=f.lr_generator, lr_theta=f.lr_theta, noise_dim=f.noise_dim,
                        batch_size=f.batch_size, clip_bound=f.clip_bound, seed=seed, transport=cfg.transport)
    if method == "policy_direct":
        res = fit_policy(demos, baseline, cfg.lam, ext, log_path=log_path)
        return Fitted(generator=res.generator)
    if method == "joint":
        res = fit_joint(demos, baseline, cfg.gamma, cfg.lam, model, ext, log_path=log_path)
        return Fitted(model=res.model, generator=res.generator)
    raise ConfigError(f"unknown method {method!r}")


def predicted_measure(cfg: ExperimentConfig, fitted: Fitted, baseline: EmpiricalMeasure, seed: int) -> EmpiricalMeasure:
    """The method's model of the demonstrator's trajectory distribution."""
    if cfg.method in ("w", "joint"):
        return optimal_measure(fitted.model, baseline, cfg.gamma, cfg.transport)[0]
    if cfg.method in ("kl", "maxent"):
        support = np.unique(baseline.points, axis=0) if cfg.method == "maxent" else baseline.points
        sol = optimal_weights(fitted.model.value(support), cfg.gamma)
        return sample_reweighted(EmpiricalMeasure(support), sol.weights, baseline.n,
                                 np.random.default_rng([seed, 0x5051]))
    return fitted.generator.measure(noise_batch(fitted.generator.noise_dim, baseline.n, seed))


def matched_w1(A: EmpiricalMeasure, B: EmpiricalMeasure, seed: int) -> float:
    """``exact_w1`` after resampling the larger measure, with replacement, down to the smaller size."""
    if A.n == B.n:
        return exact_w1(A, B)
    rng = np.random.default_rng([seed, 0x524D])
    if A.n > B.n:
        A = A.resample(B.n, rng)
    else:
        B = B.resample(A.n, rng)
    return exact_w1(A, B)


def _theta_error(cfg, fitted, theta_true) -> Optional[float]:
    if fitted.model is None or fitted.model.theta.shape != np.shape(theta_true):
        return None
    return float(np.linalg.norm(fitted.model.theta - np.asarray(theta_true)))


def _mean(values) -> Optional[float]:
    vals = [v for v in values if v is not None]
    if not vals or len(vals) != len(values):
        return None
    return math.fsum(vals) / len(vals)


def _tag(p: float) -> str:
    return f"p{int(round(p * 100)):02d}"


class Run:
    """Directory layout and bookkeeping for one experiment."""

    def __init__(self, cfg: ExperimentConfig, out=None):
        self.cfg = cfg
        self.out = Path(out or cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        for sub in ("logs", "checkpoints", "data"):
            (self.out / sub).mkdir(exist_ok=True)

    def log_path(self, seed, p, user=None) -> Path:
        suffix = "" if user is None else f"_u{user:03d}"
        return self.out / "logs" / f"{self.cfg.method}_s{seed}_{_tag(p)}{suffix}.jsonl"

    def ckpt_dir(self, seed, p) -> Path:
        d = self.out / "checkpoints" / f"{self.cfg.method}_s{seed}_{_tag(p)}"
        d.mkdir(exist_ok=True)
        return d


# ----------------------------------------------------------------------------
# recovery task: baseline sampler + known cost


def recovery_data(cfg: ExperimentConfig, seed: int):
    baseline = sample_baseline(cfg.env.spec(seed))
    t = cfg.truth
    truth = make_cost(t.family, baseline.dim, np.asarray(t.theta), feature_map=t.feature_map)
    n = t.n_demos or None
    demos = make_demonstrations(truth, baseline, cfg.gamma, t.demo_mode, n=n, seed=seed, opts=cfg.transport)
    return baseline, truth, demos


def simulate(cfg: ExperimentConfig, out=None) -> List[Path]:
    """Write every seed's generated data as trajectory CSV plus a metadata sidecar."""
    run = Run(cfg, out)
    written = []
    for seed in cfg.seeds:
        d = run.out / "data" / f"seed{seed}"
        d.mkdir(exist_ok=True)
        if cfg.task == "recovery":
            baseline, truth, demos = recovery_data(cfg, seed)
            write_measure_csv(d / "baseline.csv", baseline)
            write_measure_csv(d / "demos.csv", demos)
            meta = {"theta_true": truth.theta, "family": truth.family, "seed": seed,
                    "spec": cfg.echo()["env"], "demo_mode": cfg.truth.demo_mode}
            (d / "demos.json").write_text(dumps_exact(meta) + "\n")
            written += [d / "baseline.csv", d / "demos.csv", d / "demos.json"]
        else:
            task = _recommender(cfg, seed, cfg.p[0])
            write_measure_csv(d / "items.csv", EmpiricalMeasure(task.items))
            users = [{"theta_true": u.theta_true, "baseline_items": u.baseline_items.tolist(),
                      "events": u.events.tolist()} for u in task.users]
            (d / "users.json").write_text(dumps_exact({"seed": seed, "spec": task.meta, "users": users}) + "\n")
            written += [d / "items.csv", d / "users.json"]
    return written


def _recovery_entry(cfg, run, seed, p) -> dict:
    baseline, truth, demos = recovery_data(cfg, seed)
    n_train = split_count(demos.n, p)
    if n_train < 1 or n_train >= demos.n:
        raise ConfigError(f"split p={p} of {demos.n} demos leaves an empty side")
    train, test = demos.subset(np.arange(n_train)), demos.subset(np.arange(n_train, demos.n))
    fitted = fit_method(cfg, train, baseline, seed, log_path=run.log_path(seed, p),
                        checkpoint_dir=run.ckpt_dir(seed, p))
    _save_fitted(fitted, run.ckpt_dir(seed, p))
    pred = predicted_measure(cfg, fitted, baseline, seed)
    ratio = matched_w1(demos, pred, seed) / matched_w1(demos, baseline, seed)
    return {"top1": None, "top5": None, "w1": matched_w1(test, pred, seed),
            "theta_error": _theta_error(cfg, fitted, truth.theta), "w1_ratio": ratio,
            "theta_hat": None if fitted.model is None else fitted.model.theta.tolist()}


def _recommender(cfg, seed, p):
    e = cfg.env
    return recommender_task(e.n_users, e.n_items, e.K, seed, p=p, gamma=cfg.gamma, n_baseline=e.n_baseline,
                            n_events=e.n_events, popularity=e.popularity, theta_scale=e.theta_scale, cost=e.cost)


def method_scores(cfg, task, user, fitted) -> np.ndarray:
    if cfg.method in ("kl", "maxent"):
        return kl_scores(task, user, fitted.model.theta)
    if cfg.method in ("w", "joint"):
        return w_scores(task, user, fitted.model.theta)
    return bc_score(fitted.generator, task.items, EVAL_NOISE, 0)


def _recommender_entry(cfg, run, seed, p) -> dict:
    task = _recommender(cfg, seed, p)
    outcomes, oracle, w1s, errs = [], [], [], []
    for u, user in enumerate(task.users):
        demos = task.demos(user)
        model = task.cost_model(np.zeros(task.items.shape[1])) if cfg.method in ("kl", "maxent", "w", "joint") else None
        fitted = fit_method(cfg, demos, user.baseline, seed, model=model, log_path=run.log_path(seed, p, u))
        _save_fitted(fitted, run.ckpt_dir(seed, p), f"_u{u:03d}")
        outcomes += ranking_outcomes(method_scores(cfg, task, user, fitted), user.test_items)
        oracle += ranking_outcomes(oracle_scores(task, user), user.test_items)
        test = EmpiricalMeasure(task.items[user.test_items])
        w1s.append(matched_w1(test, predicted_measure(cfg, fitted, user.baseline, seed), seed))
        errs.append(_theta_error(cfg, fitted, user.theta_true))
    return {"top1": rank_metrics(outcomes, 1), "top5": rank_metrics(outcomes, 5),
            "w1": math.fsum(w1s) / len(w1s), "theta_error": _mean(errs), "w1_ratio": None,
            "oracle_top1": rank_metrics(oracle, 1), "oracle_top5": rank_metrics(oracle, 5),
            "n_outcomes": len(outcomes)}


def _save_fitted(fitted: Fitted, d: Path, suffix: str = "") -> None:
    if fitted.model is not None:
        fitted.model.save(d / f"theta{suffix}.json")
    if fitted.generator is not None:
        fitted.generator.save(d / f"generator{suffix}.json")


def _averages(cfg, per_seed) -> List[dict]:
    rows = []
    for p in cfg.p:
        entries = [e for e in per_seed if e["p"] == p and e["status"] == "ok"]
        row = {"p": p, "n_seeds": len(entries)}
        keys = list(METRICS) + (["oracle_top1", "oracle_top5"] if cfg.task == "recommender" else [])
        for k in keys:
            row[k] = _mean([e[k] for e in entries]) if entries else None
        rows.append(row)
    return rows


def run_experiment(cfg: ExperimentConfig, out=None) -> dict:
    """Fit and evaluate every ``(seed, p)``; write ``report.json`` and ``timing.json``.

    A failing stage is recorded in the report (``status: failed``) and the
    remaining runs continue; artifacts already written are kept.
    """
    run = Run(cfg, out)
    per_seed, timing, failures = [], [], []
    for seed in cfg.seeds:
        for p in cfg.p:
            t0 = time.perf_counter()
            entry = {"seed": seed, "p": p}
            try:
                body = (_recommender_entry if cfg.task == "recommender" else _recovery_entry)(cfg, run, seed, p)
                entry.update(status="ok", **body)
            except WiocError as exc:
                kind = "numeric" if isinstance(exc, NumericError) else "config"
                entry.update(status="failed", **{k: None for k in METRICS})
                failures.append({"seed": seed, "p": p, "kind": kind, "error": str(exc)})
            per_seed.append(entry)
            timing.append({"seed": seed, "p": p, "seconds": time.perf_counter() - t0})
    report = {"schema_version": REPORT_VERSION, "method": cfg.method, "task": cfg.task,
              "config": cfg.echo(), "per_seed": per_seed, "average": _averages(cfg, per_seed),
              "failures": failures}
    report = json.loads(dumps_exact(report))
    validate(report, "report")
    (run.out / "report.json").write_text(dumps_exact(report) + "\n")
    (run.out / "timing.json").write_text(json.dumps({"method": cfg.method, "runs": timing}, indent=1) + "\n")
    return report


def load_report(path) -> dict:
    report = json.loads(Path(path).read_text())
    validate(report, "report")
    return report


def tidy_rows(report: dict) -> List[dict]:
    """One row per (method, p, metric, seed); missing metrics are skipped."""
    rows = []
    keys = list(METRICS) + (["oracle_top1", "oracle_top5"] if report["task"] == "recommender" else [])
    for e in report["per_seed"]:
        for k in keys:
            if e.get(k) is not None:
                rows.append({"method": report["method"], "p": e["p"], "metric": k, "seed": e["seed"],
                             "value": e[k]})
    return rows


TIDY_COLUMNS = ("method", "p", "metric", "seed", "value")
COMPARE_COLUMNS = ("method", "p", "top1", "top5", "w1", "time_s")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)  # shortest text that parses back to the same double
    return str(v)


def write_csv(path, rows: Sequence[dict], columns) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])


def read_csv(path) -> List[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_tidy(report: dict, path) -> Path:
    write_csv(path, tidy_rows(report), TIDY_COLUMNS)
    return Path(path)


def _timing(out: Path) -> Dict[float, float]:
    f = out / "timing.json"
    if not f.exists():
        return {}
    per_p: Dict[float, List[float]] = {}
    for r in json.loads(f.read_text())["runs"]:
        per_p.setdefault(r["p"], []).append(r["seconds"])
    return {p: sum(v) / len(v) for p, v in per_p.items()}


def compare_methods(configs: Sequence[ExperimentConfig], out) -> List[dict]:
    """Run every config and tabulate one row per method and p, plus a theta_true oracle row.

    Rows are ordered by method name (oracle last), then p.
    """
    if not configs:
        raise InvalidInputError("no configs to compare")
    ref = configs[0]
    for c in configs[1:]:
        if c.echo()["env"] != ref.echo()["env"] or tuple(c.seeds) != tuple(ref.seeds) or tuple(c.p) != tuple(ref.p) \
                or c.gamma != ref.gamma:
            raise InvalidInputError("compared configs must share env, seeds, p and gamma")
    out = Path(out)
    rows = []
    oracle: Dict[float, dict] = {}
    for cfg in sorted(configs, key=lambda c: c.method):
        sub = out / cfg.method
        report = run_experiment(cfg, sub)
        times = _timing(sub)
        for avg in report["average"]:
            rows.append({"method": cfg.method, "p": avg["p"], "top1": avg["top1"], "top5": avg["top5"],
                         "w1": avg["w1"], "time_s": times.get(avg["p"])})
            if ref.task == "recommender" and avg["p"] not in oracle:
                oracle[avg["p"]] = {"method": "oracle", "p": avg["p"], "top1": avg["oracle_top1"],
                                    "top5": avg["oracle_top5"], "w1": None, "time_s": None}
    if ref.task == "recovery":
        for p in ref.p:
            oracle[p] = {"method": "oracle", "p": p, "top1": None, "top5": None,
                         "w1": _oracle_recovery_w1(ref, p), "time_s": None}
    rows.sort(key=lambda r: (r["method"], r["p"]))
    rows += [oracle[p] for p in sorted(oracle)]
    write_csv(out / "comparison.csv", rows, COMPARE_COLUMNS)
    validate(read_csv(out / "comparison.csv"), "comparison")
    return rows


def _oracle_recovery_w1(cfg, p) -> float:
    vals = []
    for seed in cfg.seeds:
        baseline, truth, demos = recovery_data(cfg, seed)
        test = demos.subset(np.arange(split_count(demos.n, p), demos.n))
        if cfg.truth.demo_mode == "w":
            pred = optimal_measure(truth, baseline, cfg.gamma, cfg.transport)[0]
        else:
            sol = optimal_weights(truth.value(baseline.points), cfg.gamma)
            pred = sample_reweighted(baseline, sol.weights, baseline.n, np.random.default_rng([seed, 0x5051]))
        vals.append(matched_w1(test, pred, seed))
    return math.fsum(vals) / len(vals)


def run_fits(cfg: ExperimentConfig, out=None) -> List[Path]:
    """Fit every ``(seed, p)`` and write checkpoints and training logs only."""
    run = Run(cfg, out)
    for seed in cfg.seeds:
        for p in cfg.p:
            if cfg.task == "recovery":
                baseline, _, demos = recovery_data(cfg, seed)
                train = demos.subset(np.arange(split_count(demos.n, p)))
                fitted = fit_method(cfg, train, baseline, seed, log_path=run.log_path(seed, p),
                                    checkpoint_dir=run.ckpt_dir(seed, p))
                _save_fitted(fitted, run.ckpt_dir(seed, p))
            else:
                task = _recommender(cfg, seed, p)
                for u, user in enumerate(task.users):
                    model = task.cost_model(np.zeros(task.items.shape[1])) \
                        if cfg.method in ("kl", "maxent", "w", "joint") else None
                    fitted = fit_method(cfg, task.demos(user), user.baseline, seed, model=model,
                                        log_path=run.log_path(seed, p, u))
                    _save_fitted(fitted, run.ckpt_dir(seed, p), f"_u{u:03d}")
    return sorted((run.out / "checkpoints").rglob("*.json"))
