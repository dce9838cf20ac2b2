"""Dense matrix kernels used by the cost, whitening and alignment steps.

Everything runs in float64. Symmetric inputs are checked and then
symmetrized explicitly so downstream LAPACK calls see bit-symmetric data.
"""

import logging
from typing import NamedTuple

import numpy as np

from .exceptions import ConvergenceFailure, NotPositiveDefinite, ShapeMismatch

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-12
EIG_FLOOR = 1e-12


class SpectrumDecomp(NamedTuple):
    """Singular/eigen decomposition with values sorted in descending order.

    For :func:`sym_eig` ``left`` and ``right`` are the same matrix.
    """

    values: np.ndarray
    left: np.ndarray
    right: np.ndarray


def as_symmetric(m, rtol=1e-10, name="matrix"):
    """Validate a square, numerically symmetric matrix and return an exactly symmetric copy."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ShapeMismatch(f"{name} must be a non-empty square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > rtol * scale:
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (m + m.T)


def as_general(m, name="matrix"):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeMismatch(f"{name} must be a non-empty 2-D matrix, got shape {m.shape}")
    return m


def cholesky_logdet(m):
    """Log-determinant of a symmetric positive definite matrix.

    Computed as ``2 * sum(log(diag(L)))`` from the lower Cholesky factor.

    Raises
    ------
    NotPositiveDefinite
        If the factorization fails or any pivot ``L[i, i]**2`` is at or
        below ``1e-12``. Usually means the regularizer is too small for
        the realized network outputs.
    """
    m = as_symmetric(m)
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"Cholesky factorization failed: {exc}") from None
    diag = np.diag(chol)
    if np.any(diag**2 <= PIVOT_TOL):
        raise NotPositiveDefinite(f"Cholesky pivot {float(np.min(diag**2)):.3e} <= {PIVOT_TOL:g}")
    return 2.0 * float(np.sum(np.log(diag)))


def sym_eig(m):
    """Eigendecomposition ``m = V diag(values) V^T`` with descending values."""
    m = as_symmetric(m)
    try:
        values, vectors = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        # LAPACK does not expose its sweep count.
        raise ConvergenceFailure(f"symmetric eigensolver did not converge: {exc}") from None
    order = np.argsort(values, kind="stable")[::-1]
    values = values[order]
    vectors = np.ascontiguousarray(vectors[:, order])
    return SpectrumDecomp(values, vectors, vectors)


def inv_sqrt(m):
    """Inverse symmetric square root ``S`` with ``S @ m @ S = I``.

    Eigenvalues below ``1e-12`` are clamped to the floor (and logged);
    clearly negative eigenvalues raise :class:`NotPositiveDefinite`.
    """
    values, vectors, _ = sym_eig(m)
    top = max(abs(float(values[0])), 1.0)
    if values[-1] < -1e-9 * top:
        raise NotPositiveDefinite(f"smallest eigenvalue {values[-1]:.3e} is negative")
    if values[-1] < EIG_FLOOR:
        logger.warning("clamping %d eigenvalue(s) below %.0e in inverse square root",
                       int(np.sum(values < EIG_FLOOR)), EIG_FLOOR)
        values = np.maximum(values, EIG_FLOOR)
    s = (vectors / np.sqrt(values)) @ vectors.T
    return 0.5 * (s + s.T)


def svd(m):
    """Thin SVD ``m = left @ diag(values) @ right.T``, values descending and non-negative."""
    m = as_general(m)
    if not np.all(np.isfinite(m)):
        raise ConvergenceFailure("SVD input contains non-finite entries")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(f"SVD did not converge: {exc}") from None
    return SpectrumDecomp(s, u, vt.T)
