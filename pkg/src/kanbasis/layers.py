"""Trainable layers with hand-written backward passes.

Every layer exposes ``forward(x)`` and ``backward(grad_out) -> grad_in``.
Parameter gradients from the latest backward call are stored in
``layer.grads`` under the same names as ``layer.params``; they are
overwritten, never accumulated.
"""

from __future__ import annotations

import numpy as np

from .basis import BasisFamily
from .errors import ShapeError, StateError


def _check_input(x, dim, kind):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"{kind} expects input of shape [batch x {dim}], got {x.shape}")
    return x


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def _cached(self, grad_out, out_dim):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called before forward")
        grad_out = np.asarray(grad_out, dtype=np.float64)
        batch = self._cache[0].shape[0]
        if grad_out.shape != (batch, out_dim):
            raise StateError(
                f"{self.kind}: grad_out shape {grad_out.shape} does not match cached forward ({batch}, {out_dim})"
            )
        return grad_out, self._cache


class KanLayer(Layer):
    """Sum over inputs of learned univariate functions, one per (output, input) edge.

    Each edge function is a weighted sum of the ``B`` basis functions, so the
    layer is linear in its ``[out_dim x in_dim*B]`` weight matrix:
    ``out = phi(x) @ W.T`` where ``phi(x)`` concatenates the basis expansion
    of every input coordinate.
    """

    kind = "kan"

    def __init__(self, in_dim: int, out_dim: int, basis: BasisFamily, rng=None, weights=None):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.basis = basis
        n_features = in_dim * basis.count
        if weights is None:
            rng = np.random.default_rng(rng)
            scale = 1.0 / np.sqrt(n_features)
            weights = rng.uniform(-scale, scale, size=(out_dim, n_features))
        weights = np.ascontiguousarray(weights, dtype=np.float64)
        if weights.shape != (out_dim, n_features):
            raise ShapeError(f"kan weights must be {(out_dim, n_features)}, got {weights.shape}")
        self.params["weights"] = weights

    @property
    def weights(self) -> np.ndarray:
        return self.params["weights"]

    def expand(self, x) -> np.ndarray:
        """Basis expansion ``[batch x in_dim*B]``, input-major then basis."""
        x = _check_input(x, self.in_dim, self.kind)
        return self.basis.evaluate(x).reshape(x.shape[0], -1)

    def forward(self, x):
        x = _check_input(x, self.in_dim, self.kind)
        phi = self.basis.evaluate(x)
        features = phi.reshape(x.shape[0], -1)
        self._cache = (x, phi)
        return features @ self.weights.T

    def backward(self, grad_out):
        grad_out, (x, phi) = self._cached(grad_out, self.out_dim)
        batch = x.shape[0]
        self.grads["weights"] = grad_out.T @ phi.reshape(batch, -1)
        grad_phi = (grad_out @ self.weights).reshape(phi.shape)
        dphi = self.basis.derivative(x, values=phi)
        return np.einsum("pib,pib->pi", grad_phi, dphi)


class LayerNorm(Layer):
    """Per-row standardization followed by a learned elementwise affine map."""

    kind = "layernorm"

    def __init__(self, dim: int, epsilon: float = 1e-5):
        super().__init__()
        self.dim = dim
        self.epsilon = epsilon
        self.params["gain"] = np.ones(dim)
        self.params["bias"] = np.zeros(dim)

    def forward(self, x):
        x = _check_input(x, self.dim, self.kind)
        mean = x.mean(axis=1, keepdims=True)
        centered = x - mean
        var = np.mean(centered * centered, axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        xhat = centered * inv_std
        self._cache = (x, xhat, inv_std)
        return xhat * self.params["gain"] + self.params["bias"]

    def backward(self, grad_out):
        grad_out, (_, xhat, inv_std) = self._cached(grad_out, self.dim)
        self.grads["gain"] = np.sum(grad_out * xhat, axis=0)
        self.grads["bias"] = np.sum(grad_out, axis=0)
        g = grad_out * self.params["gain"]
        return inv_std * (
            g - g.mean(axis=1, keepdims=True) - xhat * np.mean(g * xhat, axis=1, keepdims=True)
        )


class LinearLayer(Layer):
    kind = "linear"

    def __init__(self, in_dim: int, out_dim: int, rng=None, weights=None, bias=None):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        if weights is None:
            rng = np.random.default_rng(rng)
            scale = 1.0 / np.sqrt(in_dim)
            weights = rng.uniform(-scale, scale, size=(out_dim, in_dim))
        weights = np.ascontiguousarray(weights, dtype=np.float64)
        bias = np.zeros(out_dim) if bias is None else np.array(bias, dtype=np.float64)
        if weights.shape != (out_dim, in_dim) or bias.shape != (out_dim,):
            raise ShapeError(
                f"linear layer {in_dim}->{out_dim} got weights {weights.shape} and bias {bias.shape}"
            )
        self.params["weights"] = weights
        self.params["bias"] = bias

    def forward(self, x):
        x = _check_input(x, self.in_dim, self.kind)
        self._cache = (x,)
        return x @ self.params["weights"].T + self.params["bias"]

    def backward(self, grad_out):
        grad_out, (x,) = self._cached(grad_out, self.out_dim)
        self.grads["weights"] = grad_out.T @ x
        self.grads["bias"] = grad_out.sum(axis=0)
        return grad_out @ self.params["weights"]
