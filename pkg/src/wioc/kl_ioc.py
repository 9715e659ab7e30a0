"""KL-regularized inverse optimal control.

The optimal controlled measure reweights the baseline sample by
``exp(-c/gamma)``; the cost parameters are fit by maximum likelihood of the
demonstrations under that reweighting. All reductions go through
``math.fsum`` so results do not depend on summation order.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .core import EmpiricalMeasure
from .cost_models import CostModel
from .errors import InvalidInputError, NumericError
from .optim import Adam


def fsum_rows(x: np.ndarray) -> np.ndarray:
    """Exactly rounded sum over axis 0."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return np.float64(math.fsum(x))
    flat = x.reshape(x.shape[0], -1)
    return np.array([math.fsum(flat[:, j]) for j in range(flat.shape[1])]).reshape(x.shape[1:])


def logsumexp(s) -> float:
    s = np.asarray(s, dtype=float).ravel()
    m = float(np.max(s))
    if not math.isfinite(m):
        return m
    return m + math.log(math.fsum(np.exp(s - m)))


@dataclass(frozen=True)
class KlSolution:
    weights: np.ndarray
    log_partition: float  # log E_P[exp(-c/gamma)]
    gamma: float


def _check_gamma(gamma):
    if not gamma > 0:
        raise InvalidInputError(f"gamma must be positive, got {gamma}")


def optimal_weights(costs, gamma: float) -> KlSolution:
    """Softmax of ``-costs/gamma``: the optimal measure's weight on each baseline sample."""
    _check_gamma(gamma)
    c = np.asarray(costs, dtype=float).ravel()
    if c.size < 1 or not np.all(np.isfinite(c)):
        raise InvalidInputError("costs must be a nonempty finite vector")
    s = -c / gamma
    e = np.exp(s - np.max(s))
    total = math.fsum(e)
    return KlSolution(e / total, float(np.max(s)) + math.log(total) - math.log(c.size), float(gamma))


def kl_objective_value(solution: KlSolution, costs, gamma: float) -> float:
    """``E_Q[c] + gamma * KL(Q || P)`` evaluated directly from the weights (P uniform)."""
    c = np.asarray(costs, dtype=float).ravel()
    w = solution.weights
    if c.shape != w.shape:
        raise InvalidInputError(f"{c.size} costs for {w.size} weights")
    n = w.size
    pos = w > 0
    kl = math.fsum(w[pos] * np.log(w[pos] * n))
    return math.fsum(w * c) + gamma * kl


def _support(baseline: EmpiricalMeasure, uniform_baseline: bool) -> np.ndarray:
    if uniform_baseline:
        # MaxEnt form: every distinct baseline trajectory gets equal mass
        return np.unique(baseline.points, axis=0)
    return baseline.points


def _check_measures(demos, baseline):
    if demos.n < 1 or baseline.n < 1:
        raise InvalidInputError("empty measure")
    if demos.dim != baseline.dim:
        raise InvalidInputError(f"demos have K={demos.dim}, baseline K={baseline.dim}")


def log_likelihood(model: CostModel, demos: EmpiricalMeasure, baseline: EmpiricalMeasure,
                   gamma: float, uniform_baseline: bool = False) -> float:
    """``sum_j log dQ/dP(tau_j)`` with the partition taken over the baseline sample."""
    _check_gamma(gamma)
    _check_measures(demos, baseline)
    support = _support(baseline, uniform_baseline)
    nd = demos.n
    lse = logsumexp(-model.value(support) / gamma)
    return math.fsum(-model.value(demos.points) / gamma) - nd * lse + nd * math.log(support.shape[0])


def kl_gradient(model: CostModel, demos: EmpiricalMeasure, baseline: EmpiricalMeasure,
                gamma: float, uniform_baseline: bool = False) -> np.ndarray:
    """Per-demo average gradient of the log-likelihood in theta."""
    _check_gamma(gamma)
    _check_measures(demos, baseline)
    support = _support(baseline, uniform_baseline)
    sol = optimal_weights(model.value(support), gamma)
    g_base = model.grad_theta(support)
    g_demo = model.grad_theta(demos.points)
    expected = fsum_rows(sol.weights[:, None] * g_base)
    grad = -(fsum_rows(g_demo) / demos.n - expected) / gamma
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite KL gradient",
                           trace={"theta": model.theta.tolist(), "log_partition": sol.log_partition})
    return grad


def log_likelihood_grad(model, demos, baseline, gamma, uniform_baseline=False) -> np.ndarray:
    """Gradient of :func:`log_likelihood` itself (a sum over demos)."""
    return demos.n * kl_gradient(model, demos, baseline, gamma, uniform_baseline)


def partition_importance_estimate(model: CostModel, gamma: float, proposal_samples: EmpiricalMeasure,
                                  log_density_ratios) -> float:
    """``log E_Q[exp(-c/gamma) dP/dQ]`` from samples of a proposal ``Q``.

    ``log_density_ratios[s]`` is ``log dP/dQ`` at sample ``s``.
    """
    _check_gamma(gamma)
    r = np.asarray(log_density_ratios, dtype=float).ravel()
    if r.size != proposal_samples.n:
        raise InvalidInputError(f"{r.size} ratios for {proposal_samples.n} samples")
    s = -model.value(proposal_samples.points) / gamma + r
    return logsumexp(s) - math.log(r.size)


def sample_reweighted(baseline: EmpiricalMeasure, weights, n: int, rng: np.random.Generator) -> EmpiricalMeasure:
    """Draw ``n`` baseline rows with the given probabilities."""
    idx = rng.choice(baseline.n, size=n, replace=True, p=np.asarray(weights, dtype=float))
    return baseline.subset(idx)


@dataclass
class KlFitOptions:
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 200
    seed: int = 0
    snapshot_every: int = 0
    snapshot_dir: Optional[str] = None


@dataclass
class KlFitResult:
    model: CostModel
    log: List[dict] = field(default_factory=list)

    @property
    def curve(self) -> List[float]:
        return [-rec["nll"] for rec in self.log]


def fit_kl(demos: EmpiricalMeasure, baseline: EmpiricalMeasure, gamma: float, model: CostModel,
           opts: Optional[KlFitOptions] = None, uniform_baseline: bool = False,
           log_path=None) -> KlFitResult:
    """Maximize the demo log-likelihood over theta with minibatched Adam ascent."""
    opts = opts or KlFitOptions()
    _check_gamma(gamma)
    _check_measures(demos, baseline)
    rng = np.random.default_rng([opts.seed, 0x4B4C])
    adam = Adam(opts.lr)
    theta = model.theta.copy()
    result = KlFitResult(model)
    sink = Path(log_path).open("w") if log_path else None
    try:
        for epoch in range(opts.epochs):
            order = rng.permutation(demos.n)
            for start in range(0, demos.n, opts.batch_size):
                batch = demos.subset(order[start:start + opts.batch_size])
                grad = kl_gradient(model, batch, baseline, gamma, uniform_baseline)
                theta = adam.step(theta, -grad)
                with np.errstate(over="ignore", invalid="ignore"):
                    finite = np.all(np.isfinite(theta)) and np.all(np.isfinite(model.with_theta(theta).value(baseline.points)))
                if not finite:
                    raise NumericError("theta update made the baseline costs non-finite",
                                       trace={"epoch": epoch, "theta": theta.tolist()})
                model = model.with_theta(theta)
            full_grad = kl_gradient(model, demos, baseline, gamma, uniform_baseline)
            nll = -log_likelihood(model, demos, baseline, gamma, uniform_baseline) / demos.n
            rec = {"epoch": epoch, "nll": nll, "grad_norm": float(np.linalg.norm(full_grad))}
            if opts.snapshot_every and opts.snapshot_dir and (epoch + 1) % opts.snapshot_every == 0:
                snap = Path(opts.snapshot_dir) / f"theta_epoch{epoch:05d}.json"
                model.save(snap)
                rec["theta_snapshot_path"] = str(snap)
            result.log.append(rec)
            if sink:
                sink.write(json.dumps(rec) + "\n")
    finally:
        if sink:
            sink.close()
    result.model = model
    return result
