"""Objectives that learn a trajectory generator directly.

``policy_objective``: ``W(demos, Q_pi) + lam * W(Q_pi, P)``, skipping the
cost entirely. ``joint_objective``: ``W(demos, Q*_theta) + lam *
W(Q*_theta, Q_pi)``, learning cost and generator together. Each Wasserstein
term is a dual estimate under its own clipped critic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import EmpiricalMeasure
from .cost_models import DEFAULT_HIDDEN, CostModel, Critic
from .errors import InvalidInputError, NumericError
from .generator import GENERATOR_HIDDEN, Generator
from .optim import Adam
from .w_ioc import (TransportOptions, _pts, dual_estimate, empirical_lipschitz, outer_gradient,
                    solve_transport, w_objective)


@dataclass
class ObjectiveResult:
    value: float
    terms: Tuple[float, float]  # the two dual estimates, before weighting by lam
    grad_generator: np.ndarray  # descent gradient of value in the generator weights
    grad_critics: Tuple[np.ndarray, np.ndarray]  # ascent gradients of each term in its critic
    grad_theta: Optional[np.ndarray] = None
    transported: Optional[EmpiricalMeasure] = None


def _check_lam(lam):
    if not lam >= 0:
        raise InvalidInputError(f"lambda must be nonnegative, got {lam}")


def _term(critic, first, second, normalized):
    value = dual_estimate(critic, first, second)
    if normalized:
        lip = empirical_lipschitz(critic, first, second)
        value = 0.0 if lip == 0.0 else value / lip
    return value


def policy_objective(generator: Generator, noise, demos, baseline, lam: float,
                     critics: Tuple[Critic, Critic], normalized: bool = False) -> ObjectiveResult:
    """``W(demos, Q_pi) + lam * W(Q_pi, baseline)`` with ``Q_pi`` the generator's samples.

    With ``normalized`` each term is divided by its critic's empirical
    Lipschitz constant; gradients always refer to the raw estimates.
    """
    _check_lam(lam)
    f1, f2 = critics
    D, B = _pts(demos), _pts(baseline)
    Z = np.atleast_2d(np.asarray(noise, dtype=float))
    X = generator.sample(Z)
    if D.shape[1] != X.shape[1] or B.shape[1] != X.shape[1]:
        raise InvalidInputError("generator, demos and baseline must share K")
    t1 = _term(f1, D, X, normalized)
    t2 = _term(f2, X, B, normalized)
    _, g1 = f1.values_and_grads(X)
    gout = -g1
    if lam:
        _, g2 = f2.values_and_grads(X)
        gout = gout + lam * g2
    grad_gen = generator.pullback(Z, gout / X.shape[0])
    gc1 = f1.mean_weight_grad(D) - f1.mean_weight_grad(X)
    gc2 = f2.mean_weight_grad(X) - f2.mean_weight_grad(B)
    return ObjectiveResult(t1 + lam * t2, (t1, t2), grad_gen, (gc1, gc2))


def joint_objective(model: CostModel, generator: Generator, noise, demos: EmpiricalMeasure,
                    baseline: EmpiricalMeasure, gamma: float, lam: float, critics: Tuple[Critic, Critic],
                    opts: TransportOptions = TransportOptions(), normalized: bool = False) -> ObjectiveResult:
    """``W(demos, Q*_theta) + lam * W(Q*_theta, Q_pi)``.

    The first term and its theta-gradient are exactly those of
    :func:`wioc.w_ioc.w_objective`; the second term reaches theta through the
    same implicit Jacobians.
    """
    _check_lam(lam)
    f1, f2 = critics
    t1, grad_theta, transported, J = w_objective(model, f1, demos, baseline, gamma, opts)
    if normalized:
        t1 = _term(f1, demos, transported, True)
    Z = np.atleast_2d(np.asarray(noise, dtype=float))
    X = generator.sample(Z)
    T = transported.points
    gc1 = f1.mean_weight_grad(demos.points) - f1.mean_weight_grad(T)
    gc2 = f2.mean_weight_grad(T) - f2.mean_weight_grad(X)
    if lam == 0:
        return ObjectiveResult(t1, (t1, _term(f2, T, X, normalized)), np.zeros(generator.net.n_params),
                               (gc1, gc2), grad_theta, transported)
    t2 = _term(f2, T, X, normalized)
    grad_theta = grad_theta + lam * outer_gradient(f2, T, J)
    _, g2 = f2.values_and_grads(X)
    grad_gen = generator.pullback(Z, -lam * g2 / X.shape[0])
    return ObjectiveResult(t1 + lam * t2, (t1, t2), grad_gen, (gc1, gc2), grad_theta, transported)


@dataclass
class ExtFitOptions:
    iterations: int = 500
    n_critic: int = 5
    lr_critic: float = 5e-5
    lr_generator: float = 1e-3
    lr_theta: float = 1e-3
    noise_dim: int = 2
    n_noise: int = 128
    batch_size: int = 128
    clip_bound: float = 0.01
    critic_hidden: Sequence[int] = DEFAULT_HIDDEN
    generator_hidden: Sequence[int] = GENERATOR_HIDDEN
    seed: int = 0
    transport: TransportOptions = field(default_factory=TransportOptions)


@dataclass
class ExtFitResult:
    generator: Generator
    critics: Tuple[Critic, Critic]
    log: List[dict]
    model: Optional[CostModel] = None


def _ascend(critic: Critic, opt: Adam, grad) -> Critic:
    w = opt.step(critic.weights, -grad)
    if not np.all(np.isfinite(w)):
        raise NumericError("non-finite critic weights")
    return critic.with_weights(w).project()


def _rows(rng, X, size):
    if size >= X.shape[0]:
        return X
    return X[np.sort(rng.choice(X.shape[0], size=size, replace=False))]


def _write_log(log, log_path):
    if log_path:
        with Path(log_path).open("w") as fh:
            for rec in log:
                fh.write(json.dumps(rec) + "\n")


def fit_policy(demos: EmpiricalMeasure, baseline: EmpiricalMeasure, lam: float,
               opts: Optional[ExtFitOptions] = None, generator: Optional[Generator] = None,
               log_path=None) -> ExtFitResult:
    """Train a generator on the direct policy objective."""
    opts = opts or ExtFitOptions()
    _check_lam(lam)
    if demos.dim != baseline.dim:
        raise InvalidInputError("demos and baseline must share K")
    rng = np.random.default_rng([opts.seed, 0x504F])
    K = demos.dim
    if generator is None:
        generator = Generator.init(opts.noise_dim, K, rng, opts.generator_hidden)
    critics = [Critic.init(K, rng, opts.critic_hidden, opts.clip_bound) for _ in range(2)]
    copts = [Adam(opts.lr_critic), Adam(opts.lr_critic)]
    gopt = Adam(opts.lr_generator)
    log = []
    for it in range(opts.iterations):
        for _ in range(opts.n_critic):
            Z = generator.noise(opts.n_noise, rng)
            D = _rows(rng, demos.points, opts.batch_size)
            B = _rows(rng, baseline.points, opts.batch_size)
            res = policy_objective(generator, Z, D, B, lam, tuple(critics))
            critics = [_ascend(c, o, g) for c, o, g in zip(critics, copts, res.grad_critics)]
        Z = generator.noise(opts.n_noise, rng)
        D = _rows(rng, demos.points, opts.batch_size)
        B = _rows(rng, baseline.points, opts.batch_size)
        res = policy_objective(generator, Z, D, B, lam, tuple(critics))
        generator = generator.with_weights(gopt.step(generator.weights, res.grad_generator))
        log.append({"iter": it, "objective": res.value, "terms": list(res.terms)})
    _write_log(log, log_path)
    return ExtFitResult(generator, tuple(critics), log)


def fit_joint(demos: EmpiricalMeasure, baseline: EmpiricalMeasure, gamma: float, lam: float,
              model: CostModel, opts: Optional[ExtFitOptions] = None,
              generator: Optional[Generator] = None, log_path=None) -> ExtFitResult:
    """Train cost and generator together on the joint objective.

    Transport is re-solved for a baseline minibatch at every step, as in
    :func:`wioc.w_ioc.fit_w`.
    """
    opts = opts or ExtFitOptions()
    _check_lam(lam)
    if demos.dim != baseline.dim or model.dim != demos.dim:
        raise InvalidInputError("demos, baseline and cost must share K")
    rng = np.random.default_rng([opts.seed, 0x4A54])
    K = demos.dim
    if generator is None:
        generator = Generator.init(opts.noise_dim, K, rng, opts.generator_hidden)
    critics = [Critic.init(K, rng, opts.critic_hidden, opts.clip_bound) for _ in range(2)]
    copts = [Adam(opts.lr_critic), Adam(opts.lr_critic)]
    gopt, topt = Adam(opts.lr_generator), Adam(opts.lr_theta)
    topts = opts.transport
    log = []
    for it in range(opts.iterations):
        B0 = _rows(rng, baseline.points, opts.batch_size)
        T = solve_transport(model, B0, gamma, topts)[0]
        D = _rows(rng, demos.points, opts.batch_size)
        for _ in range(opts.n_critic):
            X = generator.sample(generator.noise(opts.n_noise, rng))
            g1 = critics[0].mean_weight_grad(D) - critics[0].mean_weight_grad(T)
            g2 = critics[1].mean_weight_grad(T) - critics[1].mean_weight_grad(X)
            critics = [_ascend(c, o, g) for c, o, g in zip(critics, copts, (g1, g2))]
        res = joint_objective(model, generator, generator.noise(opts.n_noise, rng), EmpiricalMeasure(D),
                              EmpiricalMeasure(B0), gamma, lam, tuple(critics), topts)
        theta = topt.step(model.theta, res.grad_theta)
        if not np.all(np.isfinite(theta)):
            raise NumericError("non-finite theta update")
        model = model.with_theta(theta)
        if lam:
            generator = generator.with_weights(gopt.step(generator.weights, res.grad_generator))
        log.append({"iter": it, "objective": res.value, "terms": list(res.terms)})
    _write_log(log, log_path)
    return ExtFitResult(generator, tuple(critics), log, model)
