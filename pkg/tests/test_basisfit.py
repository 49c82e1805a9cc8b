import csv

import numpy as np
import pytest

from kanbasis.basis import BSplineBasis, GaussianRBFBasis, GridSpec
from kanbasis.basisfit import emit_fit_curves, fit_transform
from kanbasis.errors import ConfigError, SingularMatrixError

# Max abs error of the default fit (G=5, k=3, N=8, h=4/7, 1000 samples on
# [-2, 2]) computed with a scalar Cox-de Boor recursion and an SVD solve.
ORACLE_MAX_ABS = 0.039227756984354
ORACLE_RMS = 0.004099850111229

SPLINE = BSplineBasis.uniform()
RBF = GaussianRBFBasis.uniform()


def test_default_fit_matches_oracle():
    report = fit_transform(SPLINE, RBF, 1000)
    assert report.transform.shape == (8, 8)
    assert report.max_abs_error == pytest.approx(ORACLE_MAX_ABS, rel=1e-9)
    assert report.rms_error == pytest.approx(ORACLE_RMS, rel=1e-9)
    assert report.max_abs_error <= 0.05
    assert (report.sample_lo, report.sample_hi) == (-2.0, 2.0)


def test_self_fit_is_exact():
    x = np.linspace(-2, 2, 500)
    from kanbasis.tensor import lstsq

    design = RBF.evaluate(x)
    w, res = lstsq(design, design)
    assert np.abs(design @ w - design).max() < 1e-10


def test_nested_centers_do_not_hurt():
    # same bandwidth, centers of the 8-center basis are a subset of the 15-center one
    h = 4 / 7
    coarse = fit_transform(SPLINE, GaussianRBFBasis(GridSpec(-2, 2, 8), h), 1000)
    fine = fit_transform(SPLINE, GaussianRBFBasis(GridSpec(-2, 2, 15), h), 1000)
    assert fine.max_abs_error <= coarse.max_abs_error
    assert fine.rms_error <= coarse.rms_error


def test_fewer_centers_fit_worse():
    few = fit_transform(SPLINE, GaussianRBFBasis.uniform(num_centers=3), 1000)
    assert few.max_abs_error > fit_transform(SPLINE, RBF, 1000).max_abs_error


def test_rms_error_settles_with_more_samples():
    # the sampled max error creeps up as a denser grid finds the true peak,
    # while the mean-square objective the solver minimises keeps improving
    rms = [fit_transform(SPLINE, RBF, n).rms_error for n in (201, 401, 1001, 2001)]
    assert all(b <= a + 1e-9 for a, b in zip(rms, rms[1:]))


def test_residual_orthogonal_to_design():
    report = fit_transform(SPLINE, RBF, 1000)
    x = np.linspace(-2, 2, 1000)
    design = RBF.evaluate(x)
    resid = design @ report.transform - SPLINE.evaluate(x)
    assert np.abs(design.T @ resid).max() < 1e-8 * np.abs(design).max()


def test_fitted_partition_of_unity():
    report = fit_transform(SPLINE, RBF, 1000)
    x = np.linspace(-2, 2, 1000)
    total = (RBF.evaluate(x) @ report.transform).sum(axis=1)
    assert np.abs(total - 1).max() < 10 * report.max_abs_error * SPLINE.count


def test_collapsed_centers_are_singular():
    tiny = GaussianRBFBasis(GridSpec(-2, 2, 8), bandwidth=50.0)
    with pytest.raises(SingularMatrixError):
        fit_transform(SPLINE, tiny, 1000)


def test_too_few_samples():
    with pytest.raises(ConfigError):
        fit_transform(SPLINE, RBF, 50)


def test_emit_curves_roundtrip(tmp_path):
    report = fit_transform(SPLINE, RBF, 1000)
    path = emit_fit_curves(report, SPLINE, RBF, tmp_path / "fit.csv")
    with path.open() as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["x"] + [f"spline_{i}" for i in range(8)] + [f"approx_{i}" for i in range(8)]
    assert len(rows) == 1000 + 1
    data = np.array(rows[1:], dtype=float)
    err = np.abs(data[:, 9:] - data[:, 1:9]).max()
    assert abs(err - report.max_abs_error) < 1e-12
