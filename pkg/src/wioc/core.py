"""Trajectories, empirical measures, distances, exact W1 and ranking metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidInputError, UnsupportedModeError


def as_trajectory(values, event_times: bool = False, horizon: Optional[float] = None) -> np.ndarray:
    """Validate ``values`` as a single trajectory and return it as a float vector."""
    tau = np.asarray(values, dtype=float)
    if tau.ndim != 1 or tau.size < 1:
        raise InvalidInputError(f"trajectory must be a non-empty vector, got shape {tau.shape}")
    if not np.all(np.isfinite(tau)):
        raise InvalidInputError("trajectory contains non-finite entries")
    if event_times:
        _check_event_times(tau[None, :], horizon)
    return tau


def _check_event_times(points: np.ndarray, horizon: Optional[float]) -> None:
    if points.shape[1] > 1 and not np.all(np.diff(points, axis=1) > 0):
        raise InvalidInputError("event-time trajectories must be strictly increasing")
    if np.any(points < 0):
        raise InvalidInputError("event times must be nonnegative")
    if horizon is not None and np.any(points > horizon):
        raise InvalidInputError(f"event times exceed horizon {horizon}")


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform empirical measure ``(1/n) sum_i delta_{points[i]}``.

    ``points`` has shape ``(n, K)``. Event-time measures carry the tag and the
    observation horizon so that their rows can be validated.
    """

    points: np.ndarray
    event_times: bool = False
    horizon: Optional[float] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise InvalidInputError(f"measure needs shape (n>=1, K>=1), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("measure contains non-finite entries")
        if self.event_times:
            _check_event_times(pts, self.horizon)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)

    def __len__(self):
        return self.n

    def __getitem__(self, i) -> np.ndarray:
        return self.points[i]

    def subset(self, idx) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.points[np.asarray(idx)], self.event_times, self.horizon)

    def replace_points(self, points) -> "EmpiricalMeasure":
        return EmpiricalMeasure(points, self.event_times, self.horizon)

    def resample(self, n: int, rng: np.random.Generator) -> "EmpiricalMeasure":
        """Draw ``n`` rows uniformly with replacement."""
        return self.subset(rng.integers(0, self.n, size=n))


def _check_pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidInputError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def euclidean_distance(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def smoothed_distance(a, b, eps: float) -> float:
    """``sqrt(|a-b|^2 + eps^2)``; a twice-differentiable stand-in for the norm."""
    if not eps > 0:
        raise InvalidInputError(f"eps must be positive, got {eps}")
    a, b = _check_pair(a, b)
    return float(np.sqrt(np.sum((a - b) ** 2) + eps * eps))


def pairwise_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    return np.sqrt(np.sum((A[:, None, :] - B[None, :, :]) ** 2, axis=-1))


def _points(m) -> np.ndarray:
    return m.points if isinstance(m, EmpiricalMeasure) else np.atleast_2d(np.asarray(m, dtype=float))


def optimal_assignment(A, B) -> np.ndarray:
    """Permutation ``sigma`` minimizing ``sum_i d(A[i], B[sigma[i]])``."""
    pa, pb = _points(A), _points(B)
    if pa.shape[0] != pb.shape[0]:
        raise UnsupportedModeError(
            f"exact W1 needs equal sample counts, got {pa.shape[0]} and {pb.shape[0]}")
    if pa.shape[1] != pb.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {pa.shape[1]} vs {pb.shape[1]}")
    rows, cols = linear_sum_assignment(pairwise_distances(pa, pb))
    sigma = np.empty(pa.shape[0], dtype=int)
    sigma[rows] = cols
    return sigma


def exact_w1(A, B) -> float:
    """Wasserstein-1 distance between two uniform measures of equal size."""
    pa, pb = _points(A), _points(B)
    sigma = optimal_assignment(pa, pb)
    costs = np.sqrt(np.sum((pa - pb[sigma]) ** 2, axis=1))
    return math.fsum(costs) / pa.shape[0]


@dataclass(frozen=True)
class RankingOutcome:
    scores: Sequence[float]
    true_index: int

    @property
    def rank(self) -> int:
        s = np.asarray(self.scores, dtype=float)
        return 1 + int(np.sum(s > s[self.true_index]))


def rank_metrics(outcomes: Sequence[RankingOutcome], k: int) -> float:
    """Fraction of outcomes whose target ranks within the top ``k``."""
    if len(outcomes) == 0:
        raise InvalidInputError("no ranking outcomes")
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    hits = sum(1 for o in outcomes if o.rank <= k)
    return hits / len(outcomes)
