"""Parameterized cost families with derivative bundles, and the clipped critic."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError, NumericError
from .io import load_checkpoint, save_checkpoint
from .nets import TanhMLP

DEFAULT_HIDDEN = (16, 16)


@dataclass(frozen=True)
class DerivativeBundle:
    value: float
    grad_tau: np.ndarray
    hess_tautau: np.ndarray
    grad_theta: np.ndarray
    mixed_thetatau: np.ndarray  # shape (dim theta, K)


def _batch(tau, K: int) -> Tuple[np.ndarray, bool]:
    T = np.asarray(tau, dtype=float)
    single = T.ndim == 1
    if single:
        T = T[None, :]
    if T.ndim != 2 or T.shape[1] != K:
        raise InvalidInputError(f"cost expects trajectories of dimension {K}, got shape {np.shape(tau)}")
    return T, single


class CostModel:
    """Base class. Subclasses implement the batched ``_bundle`` and ``_value``.

    Every public method accepts a single trajectory ``(K,)`` or a batch
    ``(n, K)`` and answers in kind.
    """

    family: str = ""

    def __init__(self, theta, dim: int):
        theta = np.array(theta, dtype=float).ravel()
        if not np.all(np.isfinite(theta)):
            raise InvalidInputError("theta must be finite")
        theta.setflags(write=False)
        self.theta = theta
        self.dim = int(dim)

    @property
    def n_params(self) -> int:
        return self.theta.size

    def with_theta(self, theta) -> "CostModel":
        raise NotImplementedError

    def _value(self, T):
        raise NotImplementedError

    def _grad_tau(self, T):
        return self._bundle(T)[1]

    def _bundle(self, T):
        raise NotImplementedError

    def value(self, tau):
        T, single = _batch(tau, self.dim)
        v = self._value(T)
        return float(v[0]) if single else v

    def grad_tau(self, tau):
        T, single = _batch(tau, self.dim)
        g = self._grad_tau(T)
        return g[0] if single else g

    def batch_derivatives(self, tau):
        """``(value, grad_tau, hess_tautau, grad_theta, mixed_thetatau)`` for a batch."""
        T, _ = _batch(tau, self.dim)
        out = self._bundle(T)
        for name, arr in zip(("value", "grad_tau", "hess_tautau", "grad_theta", "mixed_thetatau"), out):
            if not np.all(np.isfinite(arr)):
                bad = np.argwhere(~np.isfinite(np.reshape(arr, (arr.shape[0], -1))))[0, 0]
                raise NumericError(f"non-finite {name} for {self.family} cost at row {bad}")
        return out

    def grad_theta(self, tau):
        T, single = _batch(tau, self.dim)
        g = self._bundle(T)[3]
        return g[0] if single else g

    def derivatives(self, tau) -> DerivativeBundle:
        v, gt, h, gth, m = self.batch_derivatives(np.asarray(tau, dtype=float)[None, :])
        return DerivativeBundle(float(v[0]), gt[0], h[0], gth[0], m[0])

    def checkpoint_dims(self):
        raise NotImplementedError

    def save(self, path, **extra):
        save_checkpoint(path, self.family, self.checkpoint_dims(), self.theta, None, **extra)


class QuadraticCost(CostModel):
    """``c(theta, tau) = 0.5 * |tau - theta|^2``; ``theta`` is the preferred trajectory."""

    family = "quadratic"

    def __init__(self, theta):
        theta = np.asarray(theta, dtype=float).ravel()
        super().__init__(theta, theta.size)

    def with_theta(self, theta):
        return QuadraticCost(theta)

    def _value(self, T):
        return 0.5 * np.sum((T - self.theta) ** 2, axis=1)

    def _grad_tau(self, T):
        return T - self.theta

    def _bundle(self, T):
        n, K = T.shape
        eye = np.broadcast_to(np.eye(K), (n, K, K))
        return self._value(T), T - self.theta, eye.copy(), self.theta - T, -eye

    def checkpoint_dims(self):
        return [self.dim]


class FeatureMap:
    """Fixed map ``tau -> phi(tau)`` with batched Jacobian and Hessians."""

    NAMES = ("identity", "squares", "poly2")

    def __init__(self, name: str, dim: int):
        if name not in self.NAMES:
            raise InvalidInputError(f"unknown feature map {name!r}; choose from {self.NAMES}")
        self.name = name
        self.dim = dim
        self.n_features = {"identity": dim, "squares": dim, "poly2": 2 * dim}[name]

    def phi(self, T):
        if self.name == "identity":
            return T.copy()
        if self.name == "squares":
            return T ** 2
        return np.concatenate([T, T ** 2], axis=1)

    def jac(self, T):
        n, K = T.shape
        eye = np.eye(K)
        lin = np.broadcast_to(eye, (n, K, K))
        sq = 2.0 * T[:, :, None] * eye
        if self.name == "identity":
            return lin.copy()
        if self.name == "squares":
            return sq
        return np.concatenate([lin, sq], axis=1)

    def hess(self, T):
        n, K = T.shape
        sq = np.zeros((n, K, K, K))
        for k in range(K):
            sq[:, k, k, k] = 2.0
        if self.name == "identity":
            return np.zeros((n, K, K, K))
        if self.name == "squares":
            return sq
        return np.concatenate([np.zeros((n, K, K, K)), sq], axis=1)


class LinearFeatureCost(CostModel):
    """``c(theta, tau) = theta . phi(tau)`` for a fixed feature map."""

    family = "linear_features"

    def __init__(self, theta, feature_map: FeatureMap):
        super().__init__(theta, feature_map.dim)
        if self.theta.size != feature_map.n_features:
            raise InvalidInputError(
                f"theta has {self.theta.size} entries, feature map has {feature_map.n_features}")
        self.feature_map = feature_map

    def with_theta(self, theta):
        return LinearFeatureCost(theta, self.feature_map)

    def _value(self, T):
        return self.feature_map.phi(T) @ self.theta

    def _grad_tau(self, T):
        return np.einsum("m,nmk->nk", self.theta, self.feature_map.jac(T))

    def _bundle(self, T):
        fm = self.feature_map
        J = fm.jac(T)
        return (fm.phi(T) @ self.theta,
                np.einsum("m,nmk->nk", self.theta, J),
                np.einsum("m,nmkl->nkl", self.theta, fm.hess(T)),
                fm.phi(T),
                J)

    def checkpoint_dims(self):
        return [self.dim, self.feature_map.n_features]

    def save(self, path, **extra):
        super().save(path, feature_map=self.feature_map.name, **extra)


class MLPCost(CostModel):
    """Scalar tanh network of the trajectory; ``theta`` holds all network weights."""

    family = "mlp"

    def __init__(self, theta, dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN):
        self.net = TanhMLP([dim, *hidden, 1])
        super().__init__(theta, dim)
        if self.theta.size != self.net.n_params:
            raise InvalidInputError(f"mlp cost needs {self.net.n_params} parameters, got {self.theta.size}")
        self.hidden = tuple(hidden)

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, hidden: Sequence[int] = DEFAULT_HIDDEN):
        net = TanhMLP([dim, *hidden, 1])
        return cls(net.init_params(rng), dim, hidden)

    def with_theta(self, theta):
        return MLPCost(theta, self.dim, self.hidden)

    def _value(self, T):
        return self.net.forward(self.theta, T)[0][:, 0]

    def _grad_tau(self, T):
        _, acts = self.net.forward(self.theta, T)
        return self.net.backward(self.theta, acts, np.ones((T.shape[0], 1)))[1]

    def _bundle(self, T):
        return self.net.second_order(self.theta, T)

    def checkpoint_dims(self):
        return list(self.net.sizes)


def make_cost(family: str, dim: int, theta=None, rng: Optional[np.random.Generator] = None,
              feature_map: str = "identity", hidden: Sequence[int] = DEFAULT_HIDDEN) -> CostModel:
    if family == "quadratic":
        return QuadraticCost(np.zeros(dim) if theta is None else theta)
    if family == "linear_features":
        fm = FeatureMap(feature_map, dim)
        return LinearFeatureCost(np.zeros(fm.n_features) if theta is None else theta, fm)
    if family == "mlp":
        if theta is None:
            return MLPCost.init(dim, rng if rng is not None else np.random.default_rng(0), hidden)
        return MLPCost(theta, dim, hidden)
    raise InvalidInputError(f"unknown cost family {family!r}")


def load_cost(path) -> CostModel:
    rec = load_checkpoint(path)
    dims = rec["dims"]
    if rec["family"] == "mlp":
        return MLPCost(rec["theta"], dims[0], dims[1:-1])
    return make_cost(rec["family"], dims[0], rec["theta"], feature_map=rec.get("feature_map", "identity"))


class Critic:
    """Scalar potential ``f_w`` over trajectories: affine-tanh-affine-tanh-affine.

    ``project`` clamps every weight into ``[-clip_bound, clip_bound]``; keeping
    the weights in that box is how the Lipschitz constraint is enforced.
    """

    def __init__(self, weights, dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN, clip_bound: float = 0.01):
        if not clip_bound > 0:
            raise InvalidInputError("clip_bound must be positive")
        self.net = TanhMLP([dim, *hidden, 1])
        w = np.array(weights, dtype=float)
        if w.shape != (self.net.n_params,):
            raise InvalidInputError(f"critic needs {self.net.n_params} weights, got {w.shape}")
        w.setflags(write=False)
        self.weights = w
        self.dim = dim
        self.hidden = tuple(hidden)
        self.clip_bound = float(clip_bound)

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, hidden: Sequence[int] = DEFAULT_HIDDEN,
             clip_bound: float = 0.01, project: bool = True) -> "Critic":
        net = TanhMLP([dim, *hidden, 1])
        c = cls(net.init_params(rng), dim, hidden, clip_bound)
        return c.project() if project else c

    @classmethod
    def zeros(cls, dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN, clip_bound: float = 0.01) -> "Critic":
        return cls(np.zeros(TanhMLP([dim, *hidden, 1]).n_params), dim, hidden, clip_bound)

    def with_weights(self, weights) -> "Critic":
        return Critic(weights, self.dim, self.hidden, self.clip_bound)

    def project(self) -> "Critic":
        return self.with_weights(np.clip(self.weights, -self.clip_bound, self.clip_bound))

    def values(self, T) -> np.ndarray:
        T, _ = _batch(T, self.dim)
        return self.net.forward(self.weights, T)[0][:, 0]

    def values_and_grads(self, T):
        """Critic values ``(n,)`` and input gradients ``(n, K)``."""
        T, _ = _batch(T, self.dim)
        out, acts = self.net.forward(self.weights, T)
        _, gx = self.net.backward(self.weights, acts, np.ones((T.shape[0], 1)))
        return out[:, 0], gx

    def __call__(self, tau):
        """Value and input gradient at a single trajectory."""
        tau = np.asarray(tau, dtype=float)
        if tau.shape != (self.dim,):
            raise InvalidInputError(f"critic expects dimension {self.dim}, got {tau.shape}")
        v, g = self.values_and_grads(tau[None, :])
        return float(v[0]), g[0]

    def mean_weight_grad(self, T) -> np.ndarray:
        """Gradient of ``mean_i f_w(T[i])`` with respect to the weights."""
        T, _ = _batch(T, self.dim)
        _, acts = self.net.forward(self.weights, T)
        gw, _ = self.net.backward(self.weights, acts, np.full((T.shape[0], 1), 1.0 / T.shape[0]))
        return gw

    def save(self, path, **extra):
        save_checkpoint(path, "critic", list(self.net.sizes), self.weights, self.clip_bound, **extra)

    @classmethod
    def load(cls, path) -> "Critic":
        rec = load_checkpoint(path)
        dims = rec["dims"]
        return cls(rec["theta"], dims[0], dims[1:-1], rec["clip_bound"])
