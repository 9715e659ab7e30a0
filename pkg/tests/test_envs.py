import math

import numpy as np
import pytest

from wioc.core import rank_metrics
from wioc.cost_models import QuadraticCost
from wioc.envs import (EnvSpec, hawkes_event_times, make_demonstrations, oracle_scores, ranking_outcomes,
                       recommender_task, sample_baseline, sample_gaussian_walk, sample_hawkes, split_count,
                       trajectory_rng, kl_scores, w_scores)
from wioc.errors import ConfigError, InvalidInputError
from wioc.kl_ioc import optimal_weights


def test_walk_is_deterministic_and_prefix_stable():
    a = sample_gaussian_walk(EnvSpec("gaussian_walk", 3, 20, seed=5))
    b = sample_gaussian_walk(EnvSpec("gaussian_walk", 3, 20, seed=5))
    c = sample_gaussian_walk(EnvSpec("gaussian_walk", 3, 40, seed=5))
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.points, c.points[:20])
    assert not np.array_equal(a.points, sample_gaussian_walk(EnvSpec("gaussian_walk", 3, 20, seed=6)).points)


def test_walk_moments():
    X = sample_gaussian_walk(EnvSpec("gaussian_walk", 4, 10000, seed=0)).points
    # position k has variance k + 1; the mean is within 4 standard errors of 0
    assert np.all(np.abs(X.mean(axis=0)) <= 4 * np.sqrt(np.arange(1, 5) / 10000))
    assert np.all(np.abs(X.var(axis=0) / np.arange(1, 5) - 1) <= 0.1)


def test_poisson_count():
    rng = trajectory_rng(0, 0)
    counts = [hawkes_event_times(rng, 2.0, 0.0, 1.0, 10.0).size for _ in range(2000)]
    assert abs(np.mean(counts) - 20) <= 3 * math.sqrt(20 / 2000)


def test_hawkes_branching_ratio():
    rng = trajectory_rng(1, 0)
    mu0, alpha, beta, T = 1.0, 0.5, 1.0, 200.0
    times = [hawkes_event_times(rng, mu0, alpha, beta, T) for _ in range(200)]
    # events per unit time approach mu0 / (1 - alpha / beta)
    ratio = 1 - mu0 * T / np.mean([t.size for t in times])
    assert abs(ratio - alpha / beta) <= 0.1 * alpha / beta
    assert all(np.all(np.diff(t) > 0) and (t.size == 0 or t[-1] <= T) for t in times)


def test_hawkes_trajectories():
    m = sample_hawkes(EnvSpec("hawkes_events", 5, 50, seed=2))
    assert m.event_times and m.points.shape == (50, 5)
    assert np.all(np.diff(m.points, axis=1) > 0)
    assert np.array_equal(m.points, sample_hawkes(EnvSpec("hawkes_events", 5, 50, seed=2)).points)


def test_hawkes_config_errors():
    with pytest.raises(ConfigError):
        EnvSpec("hawkes_events", 3, 10, alpha=1.0, beta=1.0)
    with pytest.raises(ConfigError):
        sample_hawkes(EnvSpec("hawkes_events", 50, 10, horizon=1.0, mu0=0.1, alpha=0.0))
    with pytest.raises(ConfigError):
        EnvSpec("random_walk", 2, 10)
    with pytest.raises(ConfigError):
        sample_baseline(EnvSpec("recommender", 2, 10))


def test_trajectory_rng():
    assert trajectory_rng(3, 7).random() == trajectory_rng(3, 7).random()
    assert trajectory_rng(3, 7).random() != trajectory_rng(7, 3).random()
    with pytest.raises(InvalidInputError):
        trajectory_rng(-1, 0)


def test_make_demonstrations_modes():
    base = sample_gaussian_walk(EnvSpec("gaussian_walk", 2, 30, seed=0))
    truth = QuadraticCost([3.0, -1.0])
    w = make_demonstrations(truth, base, 1.0, "w")
    assert w.n == 30 and w.meta["theta_true"] == [3.0, -1.0] and w.meta["mode"] == "w"
    # the transported point sits at distance min(gamma, |tau0 - theta|) from theta
    r = np.linalg.norm(base.points - truth.theta, axis=1)
    assert np.max(np.abs(np.linalg.norm(w.points - truth.theta, axis=1) - np.minimum(1.0, r))) <= 1e-5
    kl = make_demonstrations(truth, base, 1.0, "kl", n=100, seed=4)
    assert kl.n == 100
    rows = {tuple(r) for r in base.points}
    assert all(tuple(r) in rows for r in kl.points)
    assert np.array_equal(kl.points, make_demonstrations(truth, base, 1.0, "kl", n=100, seed=4).points)
    with pytest.raises(InvalidInputError):
        make_demonstrations(truth, base, 1.0, "maxent")


def test_kl_demonstrations_follow_weights():
    base = sample_gaussian_walk(EnvSpec("gaussian_walk", 1, 5, seed=1))
    truth = QuadraticCost([0.5])
    demos = make_demonstrations(truth, base, 1.0, "kl", n=20000, seed=0)
    w = optimal_weights(truth.value(base.points), 1.0).weights
    freq = np.array([np.sum(demos.points[:, 0] == b) for b in base.points[:, 0]]) / 20000
    assert np.all(np.abs(freq - w) <= 4 * np.sqrt(w * (1 - w) / 20000))


def test_split_counts():
    assert [split_count(10, p) for p in (0.5, 0.6, 0.7, 0.8)] == [5, 6, 7, 8]
    assert split_count(5, 0.5) == 3 and split_count(7, 0.5) == 4
    t = recommender_task(3, 10, 2, 0, p=0.7, n_events=15)
    u = t.users[0]
    assert u.train_items.size == split_count(15, 0.7) and u.test_items.size == 15 - u.train_items.size
    assert np.array_equal(np.concatenate([u.train_items, u.test_items]), u.events)
    with pytest.raises(ConfigError):
        recommender_task(3, 10, 2, 0, p=0.75)


def test_recommender_determinism():
    a = recommender_task(4, 12, 3, 9)
    b = recommender_task(4, 12, 3, 9)
    assert np.array_equal(a.items, b.items)
    for u, v in zip(a.users, b.users):
        assert np.array_equal(u.events, v.events) and np.array_equal(u.theta_true, v.theta_true)


def test_recommender_oracle_dominance():
    t = recommender_task(10, 20, 2, 0, p=0.5, cost="linear", theta_scale=1e3)
    out = [o for u in t.users for o in ranking_outcomes(oracle_scores(t, u), u.test_items)]
    assert rank_metrics(out, 1) == 1.0


def test_recommender_chance_level():
    t = recommender_task(50, 20, 2, 0, p=0.5, n_baseline=5000, popularity=0.0, cost="linear",
                         thetas=np.zeros((50, 2)))
    out = [o for u in t.users for o in ranking_outcomes(oracle_scores(t, u), u.test_items)]
    assert 0.5 / 20 <= rank_metrics(out, 1) <= 2 / 20


def test_scores_shapes_and_oracle():
    t = recommender_task(2, 15, 2, 3)
    u = t.users[0]
    assert np.array_equal(oracle_scores(t, u), kl_scores(t, u, u.theta_true))
    s = w_scores(t, u, u.theta_true)
    assert s.shape == (15,) and np.all(np.isfinite(s))
    drawn = np.unique(u.baseline_items)
    assert np.all(np.isneginf(np.delete(oracle_scores(t, u), drawn)))
