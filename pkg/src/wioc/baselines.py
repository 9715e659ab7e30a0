"""Behavior cloning comparator.

The environments are trajectory-level with no per-step action labels, so the
clone is an unconditional generator: seeded noise mapped to trajectories and
pulled toward the nearest demonstration in each minibatch. The interface takes
demonstrations only; the baseline measure is never seen.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .core import EmpiricalMeasure
from .errors import InvalidInputError, NumericError
from .generator import GENERATOR_HIDDEN, Generator, noise_batch
from .optim import Adam


class ClonePolicy(Generator):
    family = "clone_policy"


@dataclass
class BcFitOptions:
    steps: int = 2000
    lr: float = 1e-3
    batch_size: int = 128
    hidden: Sequence[int] = GENERATOR_HIDDEN
    seed: int = 0


@dataclass
class BcFitResult:
    policy: ClonePolicy
    losses: List[float] = field(default_factory=list)


def _nearest(X, D):
    d2 = np.sum((X[:, None, :] - D[None, :, :]) ** 2, axis=2)
    return D[np.argmin(d2, axis=1)]


def bc_fit(demos: EmpiricalMeasure, noise_dim: int = 2, opts: Optional[BcFitOptions] = None,
           policy: Optional[ClonePolicy] = None, log_path=None) -> BcFitResult:
    """Minimize mean squared distance from each generated sample to its nearest demo in the batch."""
    opts = opts or BcFitOptions()
    if demos.n < 1:
        raise InvalidInputError("bc_fit needs demonstrations")
    rng = np.random.default_rng([opts.seed, 0x4243])
    if policy is None:
        policy = ClonePolicy.init(noise_dim, demos.dim, rng, opts.hidden)
    if policy.dim != demos.dim:
        raise InvalidInputError(f"policy outputs K={policy.dim}, demos have K={demos.dim}")
    adam = Adam(opts.lr)
    losses = []
    D_all = demos.points
    for _ in range(opts.steps):
        Z = policy.noise(opts.batch_size, rng)
        D = D_all if D_all.shape[0] <= opts.batch_size else D_all[rng.choice(D_all.shape[0], opts.batch_size, replace=False)]
        X = policy.sample(Z)
        R = X - _nearest(X, D)
        loss = math.fsum(np.sum(R * R, axis=1)) / X.shape[0]
        if not math.isfinite(loss):
            raise NumericError("non-finite behavior cloning loss", trace={"step": len(losses)})
        losses.append(loss)
        grad = policy.pullback(Z, 2.0 * R / X.shape[0])
        policy = policy.with_weights(adam.step(policy.weights, grad))
    if log_path:
        with Path(log_path).open("w") as fh:
            for i, loss in enumerate(losses):
                fh.write(json.dumps({"step": i, "loss": loss}) + "\n")
    return BcFitResult(policy, losses)


def bc_score(policy: ClonePolicy, candidates, n_noise: int = 256, seed: int = 0) -> np.ndarray:
    """``-|candidate - mean policy output|`` with the mean taken over a fixed noise batch."""
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    if C.shape[1] != policy.dim:
        raise InvalidInputError(f"candidates have K={C.shape[1]}, policy outputs K={policy.dim}")
    mean = policy.mean_output(noise_batch(policy.noise_dim, n_noise, seed))
    return -np.sqrt(np.sum((C - mean) ** 2, axis=1))
