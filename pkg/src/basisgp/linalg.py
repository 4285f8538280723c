"""Dense linear-algebra substrate.

Thin, contract-enforcing wrappers over LAPACK: Cholesky factorization
with a jitter retry schedule, triangular solves, and log-determinants.
All arrays are float64 and row-major; everything in the package that
factorizes a matrix goes through :func:`cholesky` so that jitter policy
and failure behavior live in one place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class LinalgError(Exception):
    """Base class for linear-algebra failures."""


class NotPositiveDefinite(LinalgError):
    """Factorization failed at every jitter level."""


class DimensionMismatch(LinalgError):
    """Operand shapes do not conform."""


DEFAULT_JITTER_SCHEDULE = (0.0, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with LL^T = A + jitter_used * I."""

    lower: np.ndarray
    jitter_used: float

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


def as_matrix(a) -> np.ndarray:
    """Coerce to a C-contiguous float64 2-D array."""
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D array, got ndim={out.ndim}")
    return out


def cholesky(a, jitter_schedule=DEFAULT_JITTER_SCHEDULE) -> CholeskyFactor:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Jitter levels from the schedule are added to the diagonal in order
    (zero is tried first); the first level at which LAPACK succeeds is
    recorded on the returned factor.

    Raises NotPositiveDefinite if every level fails, and ValueError if
    the input is not symmetric to 1e-10 relative tolerance.
    """
    mat = as_matrix(a)
    n, m = mat.shape
    if n != m:
        raise DimensionMismatch(f"cholesky requires a square matrix, got {n}x{m}")
    scale = max(1.0, float(np.max(np.abs(mat))) if mat.size else 1.0)
    asym = float(np.max(np.abs(mat - mat.T))) if mat.size else 0.0
    if asym > 1e-10 * scale:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    for jitter in jitter_schedule:
        try:
            shifted = mat if jitter == 0.0 else mat + jitter * np.eye(n)
            lower = scipy.linalg.cholesky(shifted, lower=True)
        except scipy.linalg.LinAlgError:
            continue
        return CholeskyFactor(lower=lower, jitter_used=float(jitter))
    raise NotPositiveDefinite(
        f"cholesky failed for all jitter levels {tuple(jitter_schedule)}"
    )


def solve_triangular(factor: CholeskyFactor, b, transpose: bool = False) -> np.ndarray:
    """Solve L x = b (or L^T x = b when transpose) for x."""
    rhs = np.asarray(b, dtype=np.float64)
    squeeze = rhs.ndim == 1
    if squeeze:
        rhs = rhs[:, None]
    if rhs.shape[0] != factor.dim:
        raise DimensionMismatch(
            f"rhs has {rhs.shape[0]} rows, factor dimension is {factor.dim}"
        )
    x = scipy.linalg.solve_triangular(
        factor.lower, rhs, lower=True, trans="T" if transpose else "N"
    )
    return x[:, 0] if squeeze else x


def solve_posdef(factor: CholeskyFactor, b) -> np.ndarray:
    """Solve (LL^T) x = b via forward then backward substitution."""
    return solve_triangular(factor, solve_triangular(factor, b), transpose=True)


def logdet(factor: CholeskyFactor) -> float:
    """log |A + jitter * I| from the factor's diagonal."""
    return 2.0 * float(np.sum(np.log(np.diagonal(factor.lower))))


def gemm(a, b, transpose_a: bool = False, transpose_b: bool = False) -> np.ndarray:
    """Matrix product with a pinned accumulation order.

    Accumulates over the inner index k in ascending order, rounding once
    per multiply and once per add, which makes the result bit-identical
    to a scalar triple loop. Use this where reproducibility of the exact
    bits matters; hot paths use BLAS `@` directly, which reorders the
    accumulation.
    """
    lhs = as_matrix(a)
    rhs = as_matrix(b)
    if transpose_a:
        lhs = lhs.T
    if transpose_b:
        rhs = rhs.T
    if lhs.shape[1] != rhs.shape[0]:
        raise DimensionMismatch(
            f"inner dimensions do not conform: {lhs.shape} x {rhs.shape}"
        )
    out = np.zeros((lhs.shape[0], rhs.shape[1]))
    for k in range(lhs.shape[1]):
        out += np.outer(lhs[:, k], rhs[k, :])
    return out
