"""Dense float64 matrix helpers.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64 in C
(row-major) order. The helpers here validate shapes and provide the small
least-squares solver used by the basis fitter.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import ShapeError, SingularMatrixError

# Cholesky pivots below this fraction of the largest diagonal entry of the
# Gram matrix mark the system as rank deficient.
PIVOT_RTOL = 1e-12


def as_matrix(data, *, name="matrix") -> np.ndarray:
    """Return ``data`` as a C-contiguous float64 matrix with both dims >= 1."""
    m = np.ascontiguousarray(data, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must be non-empty, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, name="a")
    b = as_matrix(b, name="b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def lstsq(a, b) -> tuple[np.ndarray, float]:
    """Solve ``min_W ||a W - b||_F`` through the normal equations.

    The Gram matrix ``a.T a`` is factored with Cholesky. Returns the solution
    ``W`` (k x n) and the Frobenius norm of the residual ``a W - b``.
    """
    a = as_matrix(a, name="a")
    b = as_matrix(b, name="b")
    m, k = a.shape
    if b.shape[0] != m:
        raise ShapeError(f"row mismatch: a is {m}x{k}, b is {b.shape[0]}x{b.shape[1]}")
    if m < k:
        raise ShapeError(f"underdetermined system: {m} rows < {k} unknowns")

    gram = a.T @ a
    rhs = a.T @ b
    max_diag = float(np.max(np.diag(gram)))
    if max_diag <= 0.0:
        raise SingularMatrixError("design matrix is identically zero")
    try:
        factor, lower = scipy.linalg.cho_factor(gram, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"normal equations are not positive definite: {exc}") from None
    pivots = np.diag(factor) ** 2
    worst = int(np.argmin(pivots))
    if pivots[worst] < PIVOT_RTOL * max_diag:
        raise SingularMatrixError(
            f"rank-deficient system: pivot {worst} = {pivots[worst]:.3e} "
            f"< {PIVOT_RTOL:g} * max diagonal {max_diag:.3e}"
        )
    w = scipy.linalg.cho_solve((factor, lower), rhs)
    residual = float(np.linalg.norm(a @ w - b))
    return w, residual
