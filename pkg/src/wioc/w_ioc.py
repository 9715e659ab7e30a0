"""Wasserstein inverse optimal control.

The optimal measure against an empirical baseline is obtained by moving each
baseline trajectory to the minimizer of ``g(theta, tau) = c(theta, tau) +
gamma * d(tau0, tau)``. Cost parameters are then trained adversarially against
a weight-clipped critic, with ``d tau*/d theta`` supplied by the implicit
function theorem.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .core import EmpiricalMeasure, exact_w1
from .cost_models import DEFAULT_HIDDEN, CostModel, Critic
from .errors import InvalidInputError, NumericError, PreconditionError
from .kl_ioc import fsum_rows
from .optim import Adam

DISTANCES = ("smoothed", "squared")
HESSIAN_FLOOR = 1e-10
RIDGE = 1e-8


@dataclass(frozen=True)
class TransportOptions:
    distance: str = "smoothed"
    eps: float = 1e-6
    tol: float = 1e-8
    max_iter: int = 500
    step0: float = 1.0
    shrink: float = 0.5
    c1: float = 1e-4
    max_halvings: int = 60
    noise: float = 1e-13
    # a failed line search with |grad| above this is treated as divergence
    stall_tol: float = 1e-6
    workers: int = 1
    block: int = 256

    def __post_init__(self):
        if self.distance not in DISTANCES:
            raise InvalidInputError(f"distance must be one of {DISTANCES}, got {self.distance!r}")
        if self.distance == "smoothed" and not self.eps > 0:
            raise InvalidInputError("smoothed distance needs eps > 0")


@dataclass(frozen=True)
class TransportResult:
    source: np.ndarray
    target: np.ndarray
    inner_objective: float
    iterations: int
    converged: bool
    grad_norm_final: float


def _regularizer(R: np.ndarray, opts: TransportOptions):
    """Value, gradient and Hessian in tau of d(tau0, tau) with ``R = tau - tau0``."""
    n, K = R.shape
    if opts.distance == "squared":
        return (np.sum(R * R, axis=1), 2.0 * R,
                np.broadcast_to(2.0 * np.eye(K), (n, K, K)))
    d = np.sqrt(np.sum(R * R, axis=1) + opts.eps ** 2)
    grad = R / d[:, None]
    hess = np.eye(K)[None] / d[:, None, None] - np.einsum("ni,nj->nij", R, R) / (d ** 3)[:, None, None]
    return d, grad, hess


def _reg_value(R, opts):
    if opts.distance == "squared":
        return np.sum(R * R, axis=1)
    return np.sqrt(np.sum(R * R, axis=1) + opts.eps ** 2)


def _g(model, T, T0, gamma, opts):
    return model.value(T) + gamma * _reg_value(T - T0, opts)


def _g_grad(model, T, T0, gamma, opts):
    R = T - T0
    if opts.distance == "squared":
        gd = 2.0 * R
    else:
        gd = R / np.sqrt(np.sum(R * R, axis=1) + opts.eps ** 2)[:, None]
    return model.grad_tau(T) + gamma * gd


def inner_objective(model: CostModel, tau, tau0, gamma: float, opts: TransportOptions = TransportOptions()) -> float:
    T = np.atleast_2d(np.asarray(tau, dtype=float))
    T0 = np.atleast_2d(np.asarray(tau0, dtype=float))
    return float(_g(model, T, T0, gamma, opts)[0])


def _solve_block(model, T0, gamma, opts, init, offset):
    """Gradient descent with Armijo backtracking and a secant step refinement, per row."""
    T = T0.copy()
    g = _g(model, T, T0, gamma, opts)
    if init is not None:
        g_init = _g(model, init, T0, gamma, opts)
        better = g_init <= g
        T[better] = init[better]
        g[better] = g_init[better]
    G = _g_grad(model, T, T0, gamma, opts)
    gnorm = np.sqrt(np.sum(G * G, axis=1))
    n = T.shape[0]
    iters = np.zeros(n, dtype=int)
    done = gnorm <= opts.tol
    t_last = np.full(n, opts.step0)
    for _ in range(opts.max_iter):
        idx = np.flatnonzero(~done)
        if idx.size == 0:
            break
        Ti, Gi, gi = T[idx], G[idx], g[idx]
        gn2 = np.sum(Gi * Gi, axis=1)
        # backtracking starts from twice the last accepted step, capped at step0
        t = np.minimum(opts.step0, 2.0 * t_last[idx])
        newT, newg = Ti.copy(), gi.copy()
        accepted = np.zeros(idx.size, dtype=bool)
        pend = np.arange(idx.size)
        for _h in range(opts.max_halvings):
            cand = Ti[pend] - t[pend, None] * Gi[pend]
            gc = _g(model, cand, T0[idx[pend]], gamma, opts)
            ok = np.isfinite(gc) & (gc <= gi[pend] - opts.c1 * t[pend] * gn2[pend])
            # Armijo cannot resolve decreases below the rounding level of g; there the
            # approximate-Armijo test on the directional derivative takes over.
            flat = ~ok & np.isfinite(gc) & (gc <= gi[pend] + opts.noise * np.abs(gi[pend]))
            if np.any(flat):
                f = np.flatnonzero(flat)
                slope = np.sum(_g_grad(model, cand[f], T0[idx[pend[f]]], gamma, opts) * Gi[pend[f]], axis=1)
                ok[f] = slope >= -(1.0 - 2.0 * opts.c1) * gn2[pend[f]]
            newT[pend[ok]] = cand[ok]
            newg[pend[ok]] = gc[ok]
            accepted[pend[ok]] = True
            pend = pend[~ok]
            if pend.size == 0:
                break
            t[pend] *= opts.shrink
        stalled = ~accepted
        if np.any(stalled & (np.sqrt(gn2) > opts.stall_tol)):
            r = int(np.flatnonzero(stalled & (np.sqrt(gn2) > opts.stall_tol))[0])
            raise NumericError(
                f"transport line search failed for trajectory {offset + idx[r]}",
                trace={"index": int(offset + idx[r]), "g": float(gi[r]), "grad_norm": float(np.sqrt(gn2[r])),
                       "iterations": int(iters[idx[r]]), "tau": Ti[r].tolist()})
        done[idx[stalled]] = True
        a = np.flatnonzero(accepted)
        if a.size:
            rows = idx[a]
            Tn, gnew = newT[a], newg[a]
            Gn = _g_grad(model, Tn, T0[rows], gamma, opts)
            # secant refinement of the accepted step along the same ray
            slope0 = -gn2[a]
            slope_t = -np.sum(Gn * Gi[a], axis=1)
            curv = slope_t - slope0
            ts = np.where(curv > 0, t[a] * (-slope0) / np.where(curv > 0, curv, 1.0), t[a])
            try_s = (curv > 0) & (ts != t[a])
            if np.any(try_s):
                s_ = np.flatnonzero(try_s)
                cs = Ti[a[s_]] - ts[s_, None] * Gi[a[s_]]
                gs = _g(model, cs, T0[rows[s_]], gamma, opts)
                Gs = _g_grad(model, cs, T0[rows[s_]], gamma, opts)
                better = np.isfinite(gs) & (
                    (gs < gnew[s_])
                    | ((gs <= gnew[s_] + opts.noise * np.abs(gnew[s_]))
                       & (np.sum(Gs * Gs, axis=1) < np.sum(Gn[s_] ** 2, axis=1))))
                b = s_[better]
                Tn[b], gnew[b], Gn[b] = cs[better], gs[better], Gs[better]
                t[a[b]] = ts[b]
            t_last[rows] = t[a]
            T[rows], g[rows], G[rows] = Tn, gnew, Gn
            iters[rows] += 1
            gn_new = np.sqrt(np.sum(Gn * Gn, axis=1))
            # at the rounding floor a row can keep accepting steps without progress
            stuck = (gnew >= gi[a]) & (gn_new >= np.sqrt(gn2[a]))
            gnorm[rows] = gn_new
            done[rows] |= (gn_new <= opts.tol) | stuck
    if not np.all(np.isfinite(T)):
        raise NumericError("non-finite transport target")
    return T, g, iters, gnorm <= opts.tol, gnorm


def solve_transport(model: CostModel, sources, gamma: float, opts: TransportOptions = TransportOptions(),
                    init=None):
    """Batched inner solve. Returns ``(targets, g, iterations, converged, grad_norm)`` arrays.

    Rows are processed in fixed blocks of ``opts.block`` so the floating-point
    path of each row does not depend on ``opts.workers``.
    """
    if not gamma >= 0:
        raise InvalidInputError(f"gamma must be >= 0, got {gamma}")
    T0 = np.atleast_2d(np.asarray(sources, dtype=float))
    if T0.shape[1] != model.dim:
        raise InvalidInputError(f"sources have K={T0.shape[1]}, cost expects {model.dim}")
    init = None if init is None else np.atleast_2d(np.asarray(init, dtype=float))
    starts = list(range(0, T0.shape[0], opts.block))

    def run(s):
        sl = slice(s, s + opts.block)
        return _solve_block(model, T0[sl], gamma, opts, None if init is None else init[sl], s)

    if opts.workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=opts.workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    return tuple(np.concatenate([p[j] for p in parts]) for j in range(5))


def transport_step(model: CostModel, tau0, gamma: float, opts: TransportOptions = TransportOptions(),
                   init=None) -> TransportResult:
    """Move one baseline trajectory to its minimizer of ``g``, starting from ``tau0``."""
    tau0 = np.asarray(tau0, dtype=float)
    T, g, it, conv, gn = solve_transport(model, tau0[None, :], gamma, opts,
                                         None if init is None else np.asarray(init)[None, :])
    return TransportResult(tau0.copy(), T[0], float(g[0]), int(it[0]), bool(conv[0]), float(gn[0]))


def optimal_measure(model: CostModel, baseline: EmpiricalMeasure, gamma: float,
                    opts: TransportOptions = TransportOptions(), init=None):
    """Transport every baseline trajectory; returns ``(measure, results)`` in input order."""
    if baseline.n < 1:
        raise InvalidInputError("empty baseline")
    try:
        T, g, it, conv, gn = solve_transport(model, baseline.points, gamma, opts, init)
    except NumericError as exc:
        raise NumericError(f"optimal_measure: {exc}", trace=exc.trace) from exc
    results = [TransportResult(baseline.points[i].copy(), T[i], float(g[i]), int(it[i]), bool(conv[i]),
                               float(gn[i])) for i in range(baseline.n)]
    return EmpiricalMeasure(T), results


def implicit_jacobians(model: CostModel, sources, targets, gamma: float,
                       opts: TransportOptions = TransportOptions()) -> np.ndarray:
    """``d tau*/d theta`` for each row, shape ``(n, K, dim theta)``."""
    T0 = np.atleast_2d(np.asarray(sources, dtype=float))
    T = np.atleast_2d(np.asarray(targets, dtype=float))
    _, _, Hc, _, M = model.batch_derivatives(T)
    _, _, Hd = _regularizer(T - T0, opts)
    H = Hc + gamma * Hd
    if not np.all(np.isfinite(H)):
        raise NumericError("non-finite inner Hessian")
    eig_min = np.linalg.eigvalsh(H)[:, 0]
    H = H + (eig_min < HESSIAN_FLOOR)[:, None, None] * (RIDGE * np.eye(H.shape[1]))
    return -np.linalg.solve(H, M.transpose(0, 2, 1))


def implicit_gradient(model: CostModel, result: TransportResult, gamma: float,
                      opts: TransportOptions = TransportOptions()) -> np.ndarray:
    """Jacobian ``d tau*/d theta`` (rows: trajectory coordinates, columns: theta)."""
    if not result.converged:
        raise PreconditionError("implicit gradient needs a converged inner solve")
    return implicit_jacobians(model, result.source, result.target, gamma, opts)[0]


def outer_gradient(critic: Critic, transported, jacobians) -> np.ndarray:
    """Gradient in theta of ``mean_i f_w(tau_i*(theta))``."""
    T = transported.points if isinstance(transported, EmpiricalMeasure) else np.atleast_2d(transported)
    J = np.asarray(jacobians, dtype=float)
    if J.ndim != 3 or J.shape[0] != T.shape[0] or J.shape[1] != T.shape[1]:
        raise InvalidInputError(f"jacobians {J.shape} not aligned with trajectories {T.shape}")
    _, gx = critic.values_and_grads(T)
    grad = fsum_rows(np.einsum("nkp,nk->np", J, gx)) / T.shape[0]
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite outer gradient")
    return grad


def _pts(m):
    return m.points if isinstance(m, EmpiricalMeasure) else np.atleast_2d(np.asarray(m, dtype=float))


def dual_estimate(critic: Critic, first, second) -> float:
    """``E_first[f] - E_second[f]``."""
    a, b = critic.values(_pts(first)), critic.values(_pts(second))
    return math.fsum(a) / a.size - math.fsum(b) / b.size


def empirical_lipschitz(critic: Critic, first, second, n_interp: int = 3, max_pairs: int = 65536,
                        seed: int = 0) -> float:
    """Largest slope of the critic seen on the evaluation pairs.

    Takes the maximum of secant slopes over all cross pairs and of gradient
    norms at the support points and at interpolates along each pair. When the
    pair count exceeds ``max_pairs`` a seeded subsample is used instead.
    """
    A, B = _pts(first), _pts(second)
    ia, ib = np.meshgrid(np.arange(A.shape[0]), np.arange(B.shape[0]), indexing="ij")
    ia, ib = ia.ravel(), ib.ravel()
    if ia.size > max_pairs:
        pick = np.random.default_rng(seed).choice(ia.size, max_pairs, replace=False)
        ia, ib = ia[pick], ib[pick]
    fa, fb = critic.values(A), critic.values(B)
    dist = np.sqrt(np.sum((A[ia] - B[ib]) ** 2, axis=1))
    sep = dist > 0
    secant = np.abs(fa[ia] - fb[ib])[sep] / dist[sep]
    ts = np.arange(1, n_interp + 1) / (n_interp + 1)
    probes = [A, B] + [(1 - t) * A[ia] + t * B[ib] for t in ts]
    _, gx = critic.values_and_grads(np.concatenate(probes))
    slopes = np.sqrt(np.sum(gx * gx, axis=1))
    return float(max(secant.max(initial=0.0), slopes.max(initial=0.0)))


def normalized_dual_estimate(critic: Critic, first, second, **kw) -> float:
    lip = empirical_lipschitz(critic, first, second, **kw)
    if lip == 0.0:
        return 0.0
    return dual_estimate(critic, first, second) / lip


@dataclass
class WTrainState:
    model: CostModel
    critic: Critic
    gamma: float
    n_critic: int = 5
    critic_steps: int = 0
    theta_steps: int = 0
    dual_history: List[float] = field(default_factory=list)
    critic_opt: Adam = field(default_factory=lambda: Adam(5e-5))
    theta_opt: Adam = field(default_factory=lambda: Adam(1e-3))


def critic_step(state: WTrainState, demos_batch, transported_batch, lr: Optional[float] = None) -> Critic:
    """One ascent step on ``E_demo[f] - E_transported[f]``, then clip weights."""
    A, B = _pts(demos_batch), _pts(transported_batch)
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise InvalidInputError("critic_step needs nonempty batches")
    critic = state.critic
    grad = critic.mean_weight_grad(A) - critic.mean_weight_grad(B)
    if lr is not None:
        state.critic_opt.lr = lr
    w = state.critic_opt.step(critic.weights, -grad)
    if not np.all(np.isfinite(w)):
        raise NumericError("non-finite critic weights")
    state.critic = critic.with_weights(w).project()
    state.critic_steps += 1
    return state.critic


def train_critic(critic: Critic, first, second, steps: int, lr: float = 5e-5) -> Critic:
    """Run ``steps`` full-batch critic updates on a fixed pair of measures."""
    state = WTrainState(model=None, critic=critic, gamma=0.0, critic_opt=Adam(lr))
    for _ in range(steps):
        critic_step(state, first, second)
    return state.critic


def w_objective(model: CostModel, critic: Critic, demos: EmpiricalMeasure, baseline: EmpiricalMeasure,
                gamma: float, opts: TransportOptions = TransportOptions()):
    """Dual estimate of ``W(demos, Q*_theta)`` and its theta-gradient, on full measures."""
    transported, _ = optimal_measure(model, baseline, gamma, opts)
    J = implicit_jacobians(model, baseline.points, transported.points, gamma, opts)
    value = dual_estimate(critic, demos, transported)
    return value, -outer_gradient(critic, transported, J), transported, J


@dataclass
class WFitOptions:
    iterations: int = 2000
    n_critic: int = 5
    lr_critic: float = 5e-5
    lr_theta: float = 1e-3
    batch_size: int = 128
    refresh_every: int = 10
    clip_bound: float = 0.01
    critic_hidden: Sequence[int] = DEFAULT_HIDDEN
    seed: int = 0
    w1_every: int = 10
    w1_max_n: int = 512
    # restarting each inner solve at tau0 keeps quadratic-cost iterates on the
    # tau0-theta line; warm starts off that line converge far more slowly
    warm_start: bool = False
    transport: TransportOptions = field(default_factory=TransportOptions)


@dataclass
class WFitResult:
    model: CostModel
    state: WTrainState
    log: List[dict]
    transported: EmpiricalMeasure


def _batch_idx(rng, n, size):
    if size >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=size, replace=False))


def fit_w(demos: EmpiricalMeasure, baseline: EmpiricalMeasure, gamma: float, model: CostModel,
          opts: Optional[WFitOptions] = None, log_path=None, checkpoint_dir=None,
          critic: Optional[Critic] = None) -> WFitResult:
    """Alternate critic ascent with implicit-gradient descent on theta."""
    opts = opts or WFitOptions()
    if demos.n < 1 or baseline.n < 1:
        raise InvalidInputError("empty measure")
    if demos.dim != baseline.dim or model.dim != demos.dim:
        raise InvalidInputError("demos, baseline and cost must share K")
    rng = np.random.default_rng([opts.seed, 0x5749])
    if critic is None:
        critic = Critic.init(demos.dim, rng, opts.critic_hidden, opts.clip_bound)
    state = WTrainState(model, critic, gamma, opts.n_critic,
                        critic_opt=Adam(opts.lr_critic), theta_opt=Adam(opts.lr_theta))
    topts = opts.transport
    targets = solve_transport(model, baseline.points, gamma, topts)[0]
    small = demos.n == baseline.n and demos.n <= opts.w1_max_n
    log: List[dict] = []
    sink = Path(log_path).open("w") if log_path else None
    ckpt = Path(checkpoint_dir) if checkpoint_dir else None
    good = state.model  # last parameters whose transport solved
    try:
        for it in range(opts.iterations):
            for _ in range(state.n_critic):
                di = _batch_idx(rng, demos.n, opts.batch_size)
                bi = _batch_idx(rng, baseline.n, opts.batch_size)
                critic_step(state, demos.points[di], targets[bi])
            bi = _batch_idx(rng, baseline.n, opts.batch_size)
            try:
                T, _, _, _, _ = solve_transport(state.model, baseline.points[bi], gamma, topts,
                                                targets[bi] if opts.warm_start else None)
            except NumericError:
                if ckpt:
                    good.save(ckpt / "last_good.json")
                raise
            good = state.model
            targets[bi] = T
            J = implicit_jacobians(state.model, baseline.points[bi], T, gamma, topts)
            g_L = outer_gradient(state.critic, T, J)
            theta = state.theta_opt.step(state.model.theta, -g_L)
            if not np.all(np.isfinite(theta)):
                raise NumericError("non-finite theta update")
            state.model = state.model.with_theta(theta)
            state.theta_steps += 1
            refresh = state.theta_steps % opts.refresh_every == 0
            if refresh:
                try:
                    targets = solve_transport(state.model, baseline.points, gamma, topts,
                                              targets if opts.warm_start else None)[0]
                except NumericError:
                    if ckpt:
                        good.save(ckpt / "last_good.json")
                    raise
                good = state.model
            dual = dual_estimate(state.critic, demos.points, targets)
            state.dual_history.append(dual)
            w1 = None
            if small and opts.w1_every and (it % opts.w1_every == 0 or it == opts.iterations - 1):
                w1 = exact_w1(demos.points, targets)
            rec = {"iter": it, "dual_estimate": dual, "w1_exact": w1,
                   "theta_grad_norm": float(np.linalg.norm(g_L)), "transport_refresh": bool(refresh)}
            log.append(rec)
            if sink:
                sink.write(json.dumps(rec) + "\n")
    finally:
        if sink:
            sink.close()
    if opts.iterations:
        targets = solve_transport(state.model, baseline.points, gamma, topts,
                                  targets if opts.warm_start else None)[0]
    if ckpt:
        state.model.save(ckpt / "theta_final.json")
        state.critic.save(ckpt / "critic_final.json")
    return WFitResult(state.model, state, log, EmpiricalMeasure(targets))
