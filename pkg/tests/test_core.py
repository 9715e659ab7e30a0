import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wioc.core import (EmpiricalMeasure, RankingOutcome, as_trajectory, euclidean_distance, exact_w1,
                       optimal_assignment, rank_metrics, smoothed_distance)
from wioc.errors import InvalidInputError, UnsupportedModeError


def brute_w1(A, B):
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    n = A.shape[0]
    best = math.inf
    for perm in itertools.permutations(range(n)):
        c = math.fsum(math.sqrt(math.fsum((A[i] - B[j]) ** 2)) for i, j in enumerate(perm))
        best = min(best, c)
    return best / n


def test_euclidean_examples():
    assert euclidean_distance([0, 0], [0, 0]) == 0
    assert euclidean_distance([0, 0], [3, 4]) == 5
    assert euclidean_distance([1], [-2]) == 3
    with pytest.raises(InvalidInputError):
        euclidean_distance([1, 2], [1])


def test_smoothed_examples():
    assert smoothed_distance([1, 1], [1, 1], 0.001) == pytest.approx(0.001, rel=1e-15)
    assert smoothed_distance([0], [3], 4) == 5
    with pytest.raises(InvalidInputError):
        smoothed_distance([0, 0], [3, 4], 0)
    with pytest.raises(InvalidInputError):
        smoothed_distance([0, 0], [3], 1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=3), st.lists(st.floats(-100, 100), min_size=3, max_size=3),
       st.floats(1e-9, 10))
def test_smoothed_bracket(a, b, eps):
    d = euclidean_distance(a, b)
    s = smoothed_distance(a, b, eps)
    assert d - 1e-12 <= s <= d + eps + 1e-12


def test_exact_w1_examples():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(5, 3))
    assert exact_w1(A, A) == 0
    assert exact_w1([[0.0]], [[3.0]]) == 3
    assert exact_w1([[0.0], [1.0]], [[2.0], [3.0]]) == 2
    with pytest.raises(UnsupportedModeError):
        exact_w1(np.zeros((2, 1)), np.zeros((3, 1)))


def test_exact_w1_matches_brute_force():
    rng = np.random.default_rng(1)
    for trial in range(30):
        n = 1 + trial % 6
        K = 1 + trial % 3
        A, B = rng.normal(size=(n, K)), rng.normal(size=(n, K))
        assert exact_w1(A, B) == pytest.approx(brute_w1(A, B), abs=1e-12)


def test_exact_w1_metric_axioms():
    rng = np.random.default_rng(2)
    for _ in range(40):
        n, K = rng.integers(1, 9), rng.integers(1, 5)
        A, B, C = (rng.normal(size=(n, K)) for _ in range(3))
        ab = exact_w1(A, B)
        assert abs(ab - exact_w1(B, A)) <= 1e-12
        assert exact_w1(A, C) <= ab + exact_w1(B, C) + 1e-12
        assert exact_w1(A, A[rng.permutation(n)]) <= 1e-12
        assert ab > 0


def test_assignment_is_permutation():
    rng = np.random.default_rng(3)
    perm = optimal_assignment(rng.normal(size=(7, 2)), rng.normal(size=(7, 2)))
    assert sorted(perm.tolist()) == list(range(7))


def test_rank_examples():
    assert rank_metrics([RankingOutcome([3, 1, 2], 0)], 1) == 1.0
    assert RankingOutcome([3, 1, 2], 1).rank == 3
    assert rank_metrics([RankingOutcome([3, 1, 2], 1)], 1) == 0.0
    assert rank_metrics([RankingOutcome([3, 1, 2], 1)], 3) == 1.0
    assert rank_metrics([RankingOutcome([2, 2], 1)], 1) == 1.0
    with pytest.raises(InvalidInputError):
        rank_metrics([], 1)
    with pytest.raises(InvalidInputError):
        rank_metrics([RankingOutcome([1.0], 0)], 0)


def test_rank_invariant_to_other_scores_order():
    rng = np.random.default_rng(4)
    for _ in range(50):
        s = rng.integers(0, 4, size=8).astype(float)
        t = int(rng.integers(0, 8))
        others = [i for i in range(8) if i != t]
        shuffled = s.copy()
        shuffled[others] = s[rng.permutation(others)]
        assert RankingOutcome(s, t).rank == RankingOutcome(shuffled, t).rank


def test_measure_validation():
    with pytest.raises(InvalidInputError):
        EmpiricalMeasure(np.zeros((0, 2)))
    with pytest.raises(InvalidInputError):
        EmpiricalMeasure([[0.0, np.nan]])
    with pytest.raises(InvalidInputError):
        EmpiricalMeasure([[1.0, 0.5]], event_times=True, horizon=2.0)
    with pytest.raises(InvalidInputError):
        EmpiricalMeasure([[1.0, 3.0]], event_times=True, horizon=2.0)
    m = EmpiricalMeasure([[0.0, 1.0], [2.0, 3.0]])
    assert m.n == 2 and m.dim == 2
    assert math.fsum(m.weights) == 1.0
    with pytest.raises(ValueError):
        m.points[0, 0] = 5.0


def test_as_trajectory():
    assert as_trajectory([1, 2]).tolist() == [1.0, 2.0]
    with pytest.raises(InvalidInputError):
        as_trajectory([1.0, math.inf])
    with pytest.raises(InvalidInputError):
        as_trajectory([2.0, 1.0], event_times=True)
