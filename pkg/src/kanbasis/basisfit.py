"""Least-squares alignment of Gaussian RBFs to B-spline bases.

Each spline basis function is approximated by a linear combination of the
RBF basis functions; the combination coefficients form the columns of the
``[N x (G + k)]`` transform.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import BSplineBasis, GaussianRBFBasis, GridSpec
from .errors import ConfigError
from .tensor import lstsq


@dataclass(frozen=True)
class FitReport:
    grid_b: GridSpec
    grid_r: GridSpec
    bandwidth: float
    transform: np.ndarray
    max_abs_error: float
    rms_error: float
    samples: int
    sample_lo: float
    sample_hi: float

    def to_dict(self) -> dict:
        return {
            "spline": {"lo": self.grid_b.lo, "hi": self.grid_b.hi, "num_intervals": self.grid_b.size,
                       "order": self.grid_b.order, "basis_count": self.grid_b.size + self.grid_b.order},
            "rbf": {"lo": self.grid_r.lo, "hi": self.grid_r.hi, "num_centers": self.grid_r.size,
                    "bandwidth": self.bandwidth},
            "samples": self.samples,
            "sample_lo": self.sample_lo,
            "sample_hi": self.sample_hi,
            "max_abs_error": self.max_abs_error,
            "rms_error": self.rms_error,
            "transform": self.transform.tolist(),
        }


def sample_points(samples: int, lo: float, hi: float) -> np.ndarray:
    return np.linspace(lo, hi, samples)


def fit_transform(spline: BSplineBasis, rbf: GaussianRBFBasis, samples: int = 1000,
                  lo: float | None = None, hi: float | None = None) -> FitReport:
    """Fit every spline basis function with the RBF basis over ``samples`` uniform points.

    ``lo``/``hi`` default to the spline grid's interval.
    """
    lo = spline.grid.lo if lo is None else float(lo)
    hi = spline.grid.hi if hi is None else float(hi)
    if not lo < hi:
        raise ConfigError(f"sample interval needs lo < hi, got [{lo}, {hi}]")
    min_samples = 10 * max(spline.count, rbf.count)
    if samples < min_samples:
        raise ConfigError(f"need at least {min_samples} samples for these bases, got {samples}")
    x = sample_points(samples, lo, hi)
    design = rbf.evaluate(x)
    target = spline.evaluate(x)
    transform, _ = lstsq(design, target)
    err = design @ transform - target
    return FitReport(
        grid_b=spline.grid,
        grid_r=rbf.grid,
        bandwidth=rbf.bandwidth,
        transform=transform,
        max_abs_error=float(np.max(np.abs(err))),
        rms_error=float(np.sqrt(np.mean(err * err))),
        samples=samples,
        sample_lo=lo,
        sample_hi=hi,
    )


def emit_fit_curves(report: FitReport, spline: BSplineBasis, rbf: GaussianRBFBasis, path) -> Path:
    """Write x, the spline bases and their RBF approximations as CSV."""
    x = sample_points(report.samples, report.sample_lo, report.sample_hi)
    exact = spline.evaluate(x)
    approx = rbf.evaluate(x) @ report.transform
    n = spline.count
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["x"] + [f"spline_{i}" for i in range(n)] + [f"approx_{i}" for i in range(n)])
        for row in np.column_stack([x, exact, approx]):
            w.writerow([repr(float(v)) for v in row])
    return path
