"""Reparameterized trajectory generators: seeded noise through a tanh network."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import EmpiricalMeasure
from .errors import InvalidInputError
from .io import load_checkpoint, save_checkpoint
from .kl_ioc import fsum_rows
from .nets import TanhMLP

GENERATOR_HIDDEN = (16, 16)


class Generator:
    """Maps noise ``z`` of width ``noise_dim`` to trajectories in ``R^K``."""

    family = "generator"

    def __init__(self, weights, noise_dim: int, dim: int, hidden: Sequence[int] = GENERATOR_HIDDEN):
        self.net = TanhMLP([noise_dim, *hidden, dim])
        w = np.array(weights, dtype=float)
        if w.shape != (self.net.n_params,):
            raise InvalidInputError(f"generator needs {self.net.n_params} weights, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InvalidInputError("generator weights must be finite")
        w.setflags(write=False)
        self.weights = w
        self.noise_dim = int(noise_dim)
        self.dim = int(dim)
        self.hidden = tuple(hidden)

    @classmethod
    def init(cls, noise_dim: int, dim: int, rng: np.random.Generator, hidden: Sequence[int] = GENERATOR_HIDDEN):
        net = TanhMLP([noise_dim, *hidden, dim])
        return cls(net.init_params(rng), noise_dim, dim, hidden)

    @classmethod
    def constant(cls, value, noise_dim: int, hidden: Sequence[int] = GENERATOR_HIDDEN):
        """Generator whose every output equals ``value`` (all weights zero, output bias = value)."""
        value = np.asarray(value, dtype=float).ravel()
        net = TanhMLP([noise_dim, *hidden, value.size])
        w = np.zeros(net.n_params)
        w[-value.size:] = value
        return cls(w, noise_dim, value.size, hidden)

    def with_weights(self, weights):
        return type(self)(weights, self.noise_dim, self.dim, self.hidden)

    def noise(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.noise_dim))

    def sample(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return self.net.forward(self.weights, Z)[0]

    def measure(self, Z) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.sample(Z))

    def pullback(self, Z, gout) -> np.ndarray:
        """Weight gradient of ``sum_i gout[i] . G(z_i)``."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        _, acts = self.net.forward(self.weights, Z)
        return self.net.backward(self.weights, acts, gout)[0]

    def mean_output(self, Z) -> np.ndarray:
        X = self.sample(Z)
        return fsum_rows(X) / X.shape[0]

    def save(self, path, **extra):
        save_checkpoint(path, self.family, [self.noise_dim, *self.hidden, self.dim], self.weights, None, **extra)

    @classmethod
    def load(cls, path):
        rec = load_checkpoint(path)
        dims = rec["dims"]
        return cls(rec["theta"], dims[0], dims[-1], dims[1:-1])


def noise_batch(noise_dim: int, n: int, seed: int, tag: int = 0x4E5A) -> np.ndarray:
    """Fixed noise sample for evaluation; the same ``(seed, tag)`` always gives the same rows."""
    if n < 1 or noise_dim < 1:
        raise InvalidInputError("noise batch needs n >= 1 and noise_dim >= 1")
    return np.random.default_rng([seed, tag]).standard_normal((n, noise_dim))

