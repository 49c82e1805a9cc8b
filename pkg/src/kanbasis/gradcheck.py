"""Central finite-difference checks for every backward pass.

The error reported for a tensor is ``max|analytic - numeric|`` divided by
``max(max|analytic|, max|numeric|)``, i.e. relative to the tensor's scale, so
entries with near-zero gradient do not blow up the ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import make_basis
from .layers import KanLayer, Layer, LayerNorm, LinearLayer
from .network import Network, NetworkSpec, build, cross_entropy

EPS = 1e-5
DEFAULT_TOLERANCE = 1e-4


def numeric_grad(loss_fn, array: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Central differences of ``loss_fn()`` with respect to ``array``, perturbed in place."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn()
        flat[i] = orig - eps
        down = loss_fn()
        flat[i] = orig
        g[i] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic, numeric) -> float:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
    diff = np.max(np.abs(analytic - numeric))
    if scale == 0.0:
        return 0.0
    return float(diff / scale)


@dataclass(frozen=True)
class CheckResult:
    name: str
    kind: str
    errors: dict[str, float]

    @property
    def worst(self) -> tuple[str, float]:
        key = max(self.errors, key=self.errors.get)
        return key, self.errors[key]


def check_layer(layer: Layer, x: np.ndarray, rng, eps: float = EPS) -> dict[str, float]:
    """Compare input and parameter gradients of ``sum(R * layer(x))`` for a random ``R``."""
    x = np.array(x, dtype=np.float64)
    proj = rng.standard_normal(layer.forward(x).shape)

    def loss():
        return float(np.sum(proj * layer.forward(x)))

    layer.forward(x)
    grad_in = layer.backward(proj)
    analytic = {name: g.copy() for name, g in layer.grads.items()}
    errors = {"input": relative_error(grad_in, numeric_grad(loss, x, eps))}
    for name, p in layer.params.items():
        errors[name] = relative_error(analytic[name], numeric_grad(loss, p, eps))
    return errors


def check_network(net: Network, x: np.ndarray, labels: np.ndarray, eps: float = EPS) -> dict[str, float]:
    """Gradients of the mean cross-entropy of ``net`` on ``(x, labels)``."""
    x = np.array(x, dtype=np.float64)

    def loss():
        return cross_entropy(net.forward(x), labels)[0]

    _, g = cross_entropy(net.forward(x), labels)
    grad_in = net.backward(g)
    analytic = {k: v.copy() for k, v in net.gradients().items()}
    errors = {"input": relative_error(grad_in, numeric_grad(loss, x, eps))}
    for name, p, _ in net.parameters():
        errors[name] = relative_error(analytic[name], numeric_grad(loss, p, eps))
    return errors


def run_suite(families=("spline", "rbf"), include_shared: bool = True, seed: int = 0,
              eps: float = EPS) -> list[CheckResult]:
    """Check small layers of every kind plus [2, 3, 2] networks per family.

    ``include_shared`` adds the family-independent layernorm and linear layers.
    """
    rng = np.random.default_rng(seed)
    results = []
    for family in families:
        basis = make_basis(family, 8)
        layer = KanLayer(4, 3, basis, rng=rng)
        x = rng.uniform(-1.9, 1.9, size=(3, 4))
        results.append(CheckResult(f"kan-{family}", "kan", check_layer(layer, x, rng, eps)))
    if include_shared:
        ln = LayerNorm(4)
        ln.params["gain"] = rng.uniform(0.5, 1.5, 4)
        ln.params["bias"] = rng.uniform(-0.5, 0.5, 4)
        results.append(CheckResult("layernorm", "layernorm", check_layer(ln, rng.standard_normal((3, 4)), rng, eps)))
        lin = LinearLayer(4, 3, rng=rng)
        lin.params["bias"] = rng.uniform(-0.5, 0.5, 3)
        results.append(CheckResult("linear", "linear", check_layer(lin, rng.standard_normal((3, 4)), rng, eps)))
    for family in families:
        for head in (False, True):
            widths = (2, 3, 3, 2) if head else (2, 3, 2)
            net = build(NetworkSpec(widths, family=family, linear_head=head, seed=seed))
            x = rng.uniform(-1.5, 1.5, size=(3, 2))
            labels = rng.integers(0, 2, size=3)
            name = f"net-{family}-{'-'.join(map(str, widths))}" + ("-head" if head else "")
            results.append(CheckResult(name, "network", check_network(net, x, labels, eps)))
    return results
