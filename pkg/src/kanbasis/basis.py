"""Univariate basis families on a uniform grid.

Two families share one evaluator interface (``evaluate`` / ``derivative`` /
``count``): cubic (or any order) B-splines evaluated with the Cox-de Boor
recursion, and Gaussian radial basis functions. Both accept arrays of any
shape and append a trailing axis of basis values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

DEFAULT_LO = -2.0
DEFAULT_HI = 2.0


@dataclass(frozen=True)
class GridSpec:
    """Uniform layout on ``[lo, hi]``.

    ``size`` is the number of knot intervals for a spline basis and the
    number of centers for an RBF basis. ``order`` only matters for splines.
    """

    lo: float = DEFAULT_LO
    hi: float = DEFAULT_HI
    size: int = 5
    order: int = 3

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or not self.lo < self.hi:
            raise ConfigError(f"grid needs lo < hi, got [{self.lo}, {self.hi}]")
        if self.size < 1:
            raise ConfigError(f"grid size must be >= 1, got {self.size}")
        if self.order < 1:
            raise ConfigError(f"spline order must be >= 1, got {self.order}")

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / self.size


def _safe_reciprocal(d: np.ndarray) -> np.ndarray:
    # 0/0 terms of the recursion contribute nothing
    out = np.zeros_like(d)
    np.divide(1.0, d, out=out, where=d != 0)
    return out


@dataclass(frozen=True, eq=False)
class BSplineBasis:
    """Order-``k`` B-spline basis with ``G`` uniform intervals on ``[lo, hi]``.

    The knot vector is extended by ``k`` uniform knots past each end, giving
    ``G + 2k + 1`` knots and ``G + k`` basis functions.
    """

    grid: GridSpec
    knots: np.ndarray = field(init=False, repr=False)

    family = "spline"

    def __post_init__(self):
        g, k = self.grid.size, self.grid.order
        knots = self.grid.lo + (np.arange(g + 2 * k + 1, dtype=np.float64) - k) * self.grid.spacing
        # pin the interval ends exactly so that x == hi is detected reliably
        knots[k] = self.grid.lo
        knots[k + g] = self.grid.hi
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        # (x - t_i) / (t_{i+p} - t_i) and (t_{i+p+1} - x) / (t_{i+p+1} - t_{i+1})
        # for p = 1..k, stored as reciprocals
        recips = []
        for p in range(1, k + 1):
            left = _safe_reciprocal(knots[p:-1] - knots[: -p - 1])
            right = _safe_reciprocal(knots[p + 1 :] - knots[1:-p])
            recips.append((left, right))
        object.__setattr__(self, "_recips", tuple(recips))

    @classmethod
    def uniform(cls, lo=DEFAULT_LO, hi=DEFAULT_HI, num_intervals=5, order=3) -> "BSplineBasis":
        return cls(GridSpec(lo, hi, num_intervals, order))

    @property
    def order(self) -> int:
        return self.grid.order

    @property
    def count(self) -> int:
        return self.grid.size + self.grid.order

    def _order0(self, x: np.ndarray) -> np.ndarray:
        t = self.knots
        xe = x[..., None]
        bases = ((xe >= t[:-1]) & (xe < t[1:])).astype(np.float64)
        # closed right end: x == hi takes the left limit
        at_hi = x == self.grid.hi
        if np.any(at_hi):
            k, g = self.grid.order, self.grid.size
            bases[at_hi, k + g] = 0.0
            bases[at_hi, k + g - 1] = 1.0
        return bases

    def _raise_order(self, x: np.ndarray, bases: np.ndarray, p: int) -> np.ndarray:
        t = self.knots
        left, right = self._recips[p - 1]
        xe = x[..., None]
        return (xe - t[: -p - 1]) * left * bases[..., :-1] + (t[p + 1 :] - xe) * right * bases[..., 1:]

    def _bases_up_to(self, x: np.ndarray, order: int) -> np.ndarray:
        bases = self._order0(x)
        for p in range(1, order + 1):
            bases = self._raise_order(x, bases, p)
        return bases

    def evaluate(self, x) -> np.ndarray:
        """Basis values at ``x``; output shape is ``x.shape + (G + k,)``."""
        x = np.asarray(x, dtype=np.float64)
        return self._bases_up_to(x, self.grid.order)

    def derivative(self, x, values=None) -> np.ndarray:
        """First derivative of every basis function at ``x``.

        ``values`` is accepted for interface parity with the RBF basis and
        ignored; the derivative needs the order ``k - 1`` bases instead.
        """
        x = np.asarray(x, dtype=np.float64)
        k = self.grid.order
        lower = self._bases_up_to(x, k - 1)
        t = self.knots
        left = k * _safe_reciprocal(t[k:-1] - t[: -k - 1])
        right = k * _safe_reciprocal(t[k + 1 :] - t[1:-k])
        return left * lower[..., :-1] - right * lower[..., 1:]


@dataclass(frozen=True, eq=False)
class GaussianRBFBasis:
    """Gaussian bumps ``exp(-(x - c_i)^2 / (2 h^2))`` on ``N`` uniform centers.

    Centers include both interval ends. The bandwidth defaults to the center
    spacing ``(hi - lo) / (N - 1)``.
    """

    grid: GridSpec
    bandwidth: float | None = None
    centers: np.ndarray = field(init=False, repr=False)

    family = "rbf"

    def __post_init__(self):
        n = self.grid.size
        if n < 2:
            # a single center would make the default bandwidth undefined
            if self.bandwidth is None:
                raise ConfigError("a single-center RBF basis needs an explicit bandwidth")
            centers = np.array([self.grid.lo], dtype=np.float64)
        else:
            centers = np.linspace(self.grid.lo, self.grid.hi, n)
        h = self.bandwidth
        if h is None:
            h = (self.grid.hi - self.grid.lo) / (n - 1)
        if not (np.isfinite(h) and h > 0):
            raise ConfigError(f"RBF bandwidth must be > 0, got {h}")
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "bandwidth", float(h))
        object.__setattr__(self, "_inv_h", 1.0 / float(h))

    @classmethod
    def uniform(cls, lo=DEFAULT_LO, hi=DEFAULT_HI, num_centers=8, bandwidth=None) -> "GaussianRBFBasis":
        return cls(GridSpec(lo, hi, num_centers), bandwidth)

    @property
    def count(self) -> int:
        return self.grid.size

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        z = (x[..., None] - self.centers) * self._inv_h
        return np.exp(-0.5 * z * z)

    def derivative(self, x, values=None) -> np.ndarray:
        """``-(x - c_i) / h^2 * phi_i(x)``; pass cached ``values`` to skip the exp."""
        x = np.asarray(x, dtype=np.float64)
        diff = x[..., None] - self.centers
        if values is None:
            z = diff * self._inv_h
            values = np.exp(-0.5 * z * z)
        return -diff * (self._inv_h * self._inv_h) * values


BasisFamily = BSplineBasis | GaussianRBFBasis

FAMILIES = ("spline", "rbf")


def make_basis(family: str, count: int, lo=DEFAULT_LO, hi=DEFAULT_HI, order=3, bandwidth=None) -> BasisFamily:
    """Build a basis with ``count`` functions.

    For splines ``count = G + order``, so 8 functions of order 3 means 5
    intervals.
    """
    if family == "spline":
        if count - order < 1:
            raise ConfigError(f"spline basis of order {order} needs at least {order + 1} functions, got {count}")
        return BSplineBasis(GridSpec(lo, hi, count - order, order))
    if family == "rbf":
        return GaussianRBFBasis(GridSpec(lo, hi, count), bandwidth)
    raise ConfigError(f"unknown basis family {family!r}; expected one of {FAMILIES}")
