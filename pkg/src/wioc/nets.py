"""Feedforward tanh networks with hand-written first and second derivatives.

Parameters live in one flat vector. Layer ``l`` contributes its weight matrix
``W_l`` (shape ``(out_l, in_l)``, row-major) followed by its bias ``b_l``.
Hidden layers use ``tanh``; the output layer is affine.
"""
from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError, NumericError


class TanhMLP:
    def __init__(self, sizes: Sequence[int]):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise InvalidInputError(f"bad layer sizes {sizes}")
        self.sizes = sizes
        self.shapes = [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]
        self.n_params = sum(o * i + o for o, i in self.shapes)

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Weights uniform in +-1/sqrt(fan_in), biases zero."""
        chunks = []
        for o, i in self.shapes:
            bound = 1.0 / np.sqrt(i)
            chunks.append(rng.uniform(-bound, bound, size=o * i))
            chunks.append(np.zeros(o))
        return np.concatenate(chunks)

    def unpack(self, params: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise InvalidInputError(f"expected {self.n_params} parameters, got {params.shape}")
        layers, pos = [], 0
        for o, i in self.shapes:
            W = params[pos:pos + o * i].reshape(o, i)
            pos += o * i
            b = params[pos:pos + o]
            pos += o
            layers.append((W, b))
        return layers

    def _check_input(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_in:
            raise InvalidInputError(f"network expects inputs of width {self.n_in}, got {X.shape}")
        return X

    def forward(self, params, X):
        """Return ``(output, activations)`` with ``activations[0] = X``."""
        X = self._check_input(X)
        layers = self.unpack(params)
        acts = [X]
        a = X
        for l, (W, b) in enumerate(layers):
            z = a @ W.T + b
            if l < len(layers) - 1:
                a = np.tanh(z)
                acts.append(a)
            else:
                out = z
            if not np.all(np.isfinite(z)):
                raise NumericError(f"non-finite pre-activation in layer {l + 1}")
        return out, acts

    def backward(self, params, acts, gout, per_sample: bool = False):
        """Reverse pass for an output cotangent ``gout`` of shape ``(n, n_out)``.

        Returns ``(grad_params, grad_input)``. ``grad_params`` is summed over the
        batch unless ``per_sample`` is set, in which case it has shape ``(n, P)``.
        """
        layers = self.unpack(params)
        g = np.asarray(gout, dtype=float)
        n = g.shape[0]
        pieces = []
        for l in range(len(layers) - 1, -1, -1):
            W, _ = layers[l]
            a_prev = acts[l]
            if per_sample:
                pieces.append(g)
                pieces.append(np.einsum("no,ni->noi", g, a_prev).reshape(n, -1))
            else:
                pieces.append(g.sum(axis=0))
                pieces.append((g.T @ a_prev).ravel())
            g_in = g @ W
            if l > 0:
                g = g_in * (1.0 - acts[l] ** 2)
        pieces.reverse()
        grad_params = np.concatenate(pieces, axis=-1)
        return grad_params, g_in

    def second_order(self, params, X):
        """Derivative bundle of a scalar-output network, batched over rows of ``X``.

        Returns ``(value, grad_x, hess_xx, grad_p, mixed_px)`` with shapes
        ``(n,)``, ``(n, K)``, ``(n, K, K)``, ``(n, P)``, ``(n, P, K)``.
        Second derivatives come from a forward-mode pass over the reverse pass,
        one tangent per input coordinate.
        """
        if self.n_out != 1:
            raise InvalidInputError("second_order needs a scalar-output network")
        layers = self.unpack(params)
        out, acts = self.forward(params, X)
        n, K = acts[0].shape
        L = len(layers)

        # forward tangents, one per input direction: shape (n, K, width)
        dacts = [np.broadcast_to(np.eye(K), (n, K, K))]
        for l in range(L - 1):
            W, _ = layers[l]
            dz = dacts[l] @ W.T
            dacts.append(dz * (1.0 - acts[l + 1] ** 2)[:, None, :])

        g = np.ones((n, 1))
        dg = np.zeros((n, K, 1))
        pieces, dpieces = [], []
        for l in range(L - 1, -1, -1):
            W, _ = layers[l]
            a_prev, da_prev = acts[l], dacts[l]
            pieces.append(g)
            pieces.append(np.einsum("no,ni->noi", g, a_prev).reshape(n, -1))
            dpieces.append(dg)
            dW = np.einsum("ndo,ni->ndoi", dg, a_prev) + np.einsum("no,ndi->ndoi", g, da_prev)
            dpieces.append(dW.reshape(n, K, -1))
            g_in = g @ W
            dg_in = dg @ W
            if l > 0:
                s = 1.0 - acts[l] ** 2
                ds = -2.0 * acts[l][:, None, :] * dacts[l]
                g, dg = g_in * s, dg_in * s[:, None, :] + g_in[:, None, :] * ds
        pieces.reverse()
        dpieces.reverse()
        grad_p = np.concatenate(pieces, axis=-1)
        mixed = np.concatenate(dpieces, axis=-1).transpose(0, 2, 1)
        hess = 0.5 * (dg_in + dg_in.transpose(0, 2, 1))
        for name, arr in (("input gradient", g_in), ("input Hessian", hess), ("mixed partials", mixed)):
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite {name} in network derivative pass")
        return out[:, 0], g_in, hess, grad_p, mixed
