"""Synthetic environments: baseline measures, demonstration factories and a ranking task.

Every per-trajectory random stream is a Philox4x64-10 generator keyed by
``(seed, index)``, so trajectory ``i`` does not depend on how many others are
drawn or on which worker draws it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import EmpiricalMeasure, RankingOutcome
from .cost_models import CostModel, LinearFeatureCost, FeatureMap, QuadraticCost
from .errors import ConfigError, InvalidInputError
from .kl_ioc import optimal_weights, sample_reweighted
from .w_ioc import TransportOptions, optimal_measure

KINDS = ("gaussian_walk", "hawkes_events", "recommender")
TRAIN_PROPORTIONS = (0.5, 0.6, 0.7, 0.8)
MAX_ATTEMPTS = 1000
MIN_ACCEPTANCE = 0.01


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for trajectory ``index``: Philox with key ``(seed, index)``."""
    if seed < 0 or index < 0:
        raise InvalidInputError("seed and index must be nonnegative")
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


@dataclass(frozen=True)
class EnvSpec:
    kind: str = "gaussian_walk"
    K: int = 2
    n: int = 256
    seed: int = 0
    horizon: float = 50.0
    mu0: float = 1.0
    alpha: float = 0.5
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"env kind must be one of {KINDS}, got {self.kind!r}")
        if self.K < 1 or self.n < 1:
            raise ConfigError("env needs K >= 1 and n >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.kind == "hawkes_events":
            if self.mu0 < 0 or self.alpha < 0 or not self.beta > 0 or not self.horizon > 0:
                raise ConfigError("hawkes needs mu0 >= 0, alpha >= 0, beta > 0, horizon > 0")
            if not self.alpha / self.beta < 1:
                raise ConfigError(f"hawkes branching ratio alpha/beta = {self.alpha / self.beta} must be < 1")


def sample_gaussian_walk(spec: EnvSpec) -> EmpiricalMeasure:
    """Cumulative sums of i.i.d. standard normal increments, one stream per row."""
    pts = np.empty((spec.n, spec.K))
    for i in range(spec.n):
        pts[i] = np.cumsum(trajectory_rng(spec.seed, i).standard_normal(spec.K))
    return EmpiricalMeasure(pts)


def hawkes_event_times(rng: np.random.Generator, mu0: float, alpha: float, beta: float,
                       horizon: float) -> np.ndarray:
    """Ogata thinning on ``[0, horizon]`` for ``lambda(t) = mu0 + sum alpha exp(-beta (t - t_j))``.

    The intensity only decays between events, so its value right after the
    current time bounds it until the next candidate.
    """
    t, excite = 0.0, 0.0
    times: List[float] = []
    while True:
        bound = mu0 + excite
        if bound <= 0.0:
            break
        w = rng.exponential(1.0 / bound)
        t += w
        if t > horizon:
            break
        excite *= math.exp(-beta * w)
        if rng.uniform() * bound <= mu0 + excite:
            times.append(t)
            excite += alpha
    return np.array(times)


def sample_hawkes(spec: EnvSpec) -> EmpiricalMeasure:
    """``n`` event-time trajectories holding the first ``K`` events of each accepted sequence.

    Sequences with fewer than ``K`` events (or a repeated time) are redrawn
    from the same stream. The sampler gives up with a configuration error
    once 1000 attempts have run at an acceptance rate below 1%.
    """
    if spec.kind != "hawkes_events":
        raise ConfigError(f"sample_hawkes needs a hawkes_events spec, got {spec.kind!r}")
    pts = np.empty((spec.n, spec.K))
    attempts = accepted = 0
    for i in range(spec.n):
        rng = trajectory_rng(spec.seed, i)
        while True:
            times = hawkes_event_times(rng, spec.mu0, spec.alpha, spec.beta, spec.horizon)
            attempts += 1
            if times.size >= spec.K and np.all(np.diff(times[:spec.K]) > 0):
                accepted += 1
                pts[i] = times[:spec.K]
                break
            if attempts >= MAX_ATTEMPTS and accepted < MIN_ACCEPTANCE * attempts:
                raise ConfigError(
                    f"hawkes acceptance {accepted}/{attempts}: increase horizon or rates, or lower K={spec.K}")
    return EmpiricalMeasure(pts, event_times=True, horizon=spec.horizon)


def sample_baseline(spec: EnvSpec) -> EmpiricalMeasure:
    if spec.kind == "gaussian_walk":
        return sample_gaussian_walk(spec)
    if spec.kind == "hawkes_events":
        return sample_hawkes(spec)
    raise ConfigError("recommender baselines are built by recommender_task")


def make_demonstrations(theta_true: CostModel, baseline: EmpiricalMeasure, gamma: float, mode: str,
                        n: Optional[int] = None, seed: int = 0,
                        opts: TransportOptions = TransportOptions()) -> EmpiricalMeasure:
    """Demonstrations from a known cost.

    ``w``: the transported baseline (one demo per baseline row, in order).
    ``kl``: ``n`` baseline rows resampled with the optimal KL weights.
    """
    meta = {"theta_true": theta_true.theta.tolist(), "family": theta_true.family, "mode": mode,
            "gamma": float(gamma), "seed": int(seed)}
    if mode == "w":
        measure, _ = optimal_measure(theta_true, baseline, gamma, opts)
        return EmpiricalMeasure(measure.points, meta=meta)
    if mode == "kl":
        sol = optimal_weights(theta_true.value(baseline.points), gamma)
        rng = np.random.default_rng([seed, 0x4B44])
        picked = sample_reweighted(baseline, sol.weights, baseline.n if n is None else n, rng)
        return EmpiricalMeasure(picked.points, baseline.event_times, baseline.horizon, meta=meta)
    raise InvalidInputError(f"demonstration mode must be 'w' or 'kl', got {mode!r}")


# ----------------------------------------------------------------------------
# synthetic recommender


def split_count(n: int, p: float) -> int:
    """Training events out of ``n``: ``floor(p * n + 0.5)``."""
    return int(math.floor(p * n + 0.5))


@dataclass
class UserTask:
    theta_true: np.ndarray
    baseline_items: np.ndarray  # item index of every baseline draw
    events: np.ndarray  # chosen item indices, in event order
    baseline: EmpiricalMeasure
    p: float

    @property
    def n_train(self) -> int:
        return split_count(self.events.size, self.p)

    @property
    def train_items(self) -> np.ndarray:
        return self.events[:self.n_train]

    @property
    def test_items(self) -> np.ndarray:
        return self.events[self.n_train:]


@dataclass
class RecommenderTask:
    items: np.ndarray  # (n_items, K) feature vectors
    users: List[UserTask]
    gamma: float
    cost: str
    meta: dict = field(default_factory=dict)

    @property
    def n_items(self) -> int:
        return self.items.shape[0]

    def cost_model(self, theta) -> CostModel:
        return recommender_cost(self.cost, theta, self.items.shape[1])

    def demos(self, user: UserTask) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.items[user.train_items])


def recommender_cost(kind: str, theta, K: int) -> CostModel:
    """``quadratic``: ideal point ``0.5 |phi - theta|^2``; ``linear``: ``theta . phi``."""
    if kind == "quadratic":
        return QuadraticCost(theta)
    if kind == "linear":
        return LinearFeatureCost(theta, FeatureMap("identity", K))
    raise ConfigError(f"recommender cost must be 'quadratic' or 'linear', got {kind!r}")


def recommender_task(n_users: int, n_items: int, K: int, seed: int, p: float = 0.8, gamma: float = 1.0,
                     n_baseline: int = 200, n_events: int = 40, popularity: float = 1.0,
                     theta_scale: float = 1.0, cost: str = "quadratic", thetas=None) -> RecommenderTask:
    """Users choosing items.

    Item features are standard normal. Every user's baseline is ``n_baseline``
    draws from a shared popularity distribution ``softmax(popularity * s)``
    with ``s`` standard normal. Chosen items are baseline draws resampled with
    the KL weights of the user's hidden cost. The first ``floor(p n + 0.5)``
    events train, the rest are held out. ``thetas`` overrides the hidden
    parameters (one row per user).
    """
    if n_items < 2:
        raise InvalidInputError("recommender needs at least 2 items")
    if p not in TRAIN_PROPORTIONS:
        raise ConfigError(f"train proportion must be one of {TRAIN_PROPORTIONS}, got {p}")
    if n_users < 1 or n_events < 2 or n_baseline < 1:
        raise ConfigError("recommender needs n_users >= 1, n_events >= 2, n_baseline >= 1")
    rng = np.random.default_rng([seed, 0x5245])
    items = rng.standard_normal((n_items, K))
    pop = popularity * rng.standard_normal(n_items)
    pop = np.exp(pop - pop.max())
    pop /= pop.sum()
    users = []
    for u in range(n_users):
        urng = trajectory_rng(seed, u)
        if thetas is None:
            theta = theta_scale * urng.standard_normal(K)
        else:
            theta = np.asarray(thetas[u], dtype=float)
        base_idx = urng.choice(n_items, size=n_baseline, p=pop)
        model = recommender_cost(cost, theta, K)
        w = optimal_weights(model.value(items[base_idx]), gamma).weights
        events = base_idx[urng.choice(n_baseline, size=n_events, p=w)]
        users.append(UserTask(theta, base_idx, events, EmpiricalMeasure(items[base_idx]), p))
    meta = {"n_users": n_users, "n_items": n_items, "K": K, "seed": seed, "p": p, "gamma": gamma,
            "n_baseline": n_baseline, "n_events": n_events, "popularity": popularity,
            "theta_scale": theta_scale, "cost": cost}
    return RecommenderTask(items, users, gamma, cost, meta)


def empirical_log_prob(user: UserTask, n_items: int) -> np.ndarray:
    """``log`` of each item's share of the user's baseline draws (``-inf`` if never drawn)."""
    counts = np.bincount(user.baseline_items, minlength=n_items).astype(float)
    with np.errstate(divide="ignore"):
        return np.log(counts / counts.sum())


def kl_scores(task: RecommenderTask, user: UserTask, theta) -> np.ndarray:
    """``log P_emp(j) - c(theta, phi_j) / gamma``: the log-probability of item ``j`` under ``Q*``."""
    return empirical_log_prob(user, task.n_items) - task.cost_model(theta).value(task.items) / task.gamma


def oracle_scores(task: RecommenderTask, user: UserTask) -> np.ndarray:
    return kl_scores(task, user, user.theta_true)


def w_scores(task: RecommenderTask, user: UserTask, theta) -> np.ndarray:
    """``-[c(theta, phi_j) + gamma * min_i |tau0_i - phi_j|]``: the cheapest way to reach ``j``."""
    B = task.items[np.unique(user.baseline_items)]
    d = np.sqrt(np.sum((task.items[:, None, :] - B[None, :, :]) ** 2, axis=2)).min(axis=1)
    return -(task.cost_model(theta).value(task.items) + task.gamma * d)


def ranking_outcomes(scores, test_items) -> List[RankingOutcome]:
    scores = np.asarray(scores, dtype=float)
    return [RankingOutcome(scores, int(j)) for j in test_items]
