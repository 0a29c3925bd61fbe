"""Spectral functions of symmetric matrices.

Every manifold operation in the package goes through the eigendecomposition
computed here; matrices are small (p <= ~10), so ``eigh`` is both the fastest
and the most accurate route for exp, log and fractional powers.
"""

import numpy as np
from scipy.linalg import lapack

from .exceptions import (
    MatrixRangeError,
    NotPositiveDefiniteError,
    SymmetryError,
    ValidationError,
)

__all__ = [
    "PD_RTOL",
    "check_symmetric",
    "sym_eig",
    "mat_exp_sym",
    "mat_log_spd",
    "sqrt_spd",
    "inv_sqrt_spd",
    "spd_power",
    "cholesky_lower",
    "is_spd",
]

#: Relative eigenvalue floor: a matrix whose smallest eigenvalue is below
#: ``PD_RTOL * largest`` is treated as numerically not positive definite.
PD_RTOL = 1e-10

_SYM_RTOL = 1e-12
_LOG_MAX = np.log(np.finfo(float).max)


def check_symmetric(A, name="matrix"):
    """Validate a square symmetric matrix and return its symmetrized copy.

    The tolerance is entrywise: ``|a_ij - a_ji| <= 1e-12 * max(1, |a_ij|)``.
    After the check passes, ``(A + A.T) / 2`` is returned so that round-off
    asymmetry does not leak into downstream computations.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"{name} must be a square 2-D array, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValidationError(f"{name} contains non-finite entries")
    gap = np.abs(A - A.T)
    bound = _SYM_RTOL * np.maximum(1.0, np.abs(A))
    if np.any(gap > bound):
        i, j = np.unravel_index(np.argmax(gap - bound), A.shape)
        raise SymmetryError(
            f"{name} is not symmetric: |A[{i},{j}] - A[{j},{i}]| = {gap[i, j]:.3e}"
        )
    return 0.5 * (A + A.T)


def _eigh(A):
    # unchecked, symmetrizes; ascending order as returned by LAPACK
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    return np.linalg.eigh(A)


def _apply(A, func):
    w, V = _eigh(A)
    return (V * func(w)[..., None, :]) @ np.swapaxes(V, -1, -2)


def _check_pd_eigs(w, name):
    wmax = w[..., -1]
    wmin = w[..., 0]
    bad = (wmax <= 0) | (wmin <= PD_RTOL * wmax)
    if np.any(bad):
        raise NotPositiveDefiniteError(
            f"{name} is not positive definite (min eigenvalue {np.min(wmin):.3e})"
        )


def sym_eig(A):
    """Eigendecomposition of a symmetric matrix.

    Parameters
    ----------
    A : array_like, shape (p, p)

    Returns
    -------
    eigenvalues : ndarray, shape (p,)
        In descending order.
    eigenvectors : ndarray, shape (p, p)
        Orthonormal columns; column ``k`` belongs to ``eigenvalues[k]``.
    """
    A = check_symmetric(A)
    w, V = np.linalg.eigh(A)
    return w[::-1].copy(), V[:, ::-1].copy()


def mat_exp_sym(A):
    """Matrix exponential of a symmetric matrix (an SPD matrix)."""
    A = check_symmetric(A)
    w, V = np.linalg.eigh(A)
    if w[-1] > _LOG_MAX:
        raise MatrixRangeError(f"exponential overflows: largest eigenvalue {w[-1]:.6g}")
    return (V * np.exp(w)) @ V.T


def mat_log_spd(P):
    """Principal matrix logarithm of an SPD matrix."""
    P = check_symmetric(P)
    w, V = np.linalg.eigh(P)
    _check_pd_eigs(w, "matrix")
    return (V * np.log(w)) @ V.T


def spd_power(P, power):
    """``P ** power`` for SPD ``P`` via its eigendecomposition."""
    P = check_symmetric(P)
    w, V = np.linalg.eigh(P)
    _check_pd_eigs(w, "matrix")
    return (V * w**power) @ V.T


def sqrt_spd(P):
    return spd_power(P, 0.5)


def inv_sqrt_spd(P):
    return spd_power(P, -0.5)


def is_spd(P):
    """True if ``P`` is symmetric with eigenvalues above the relative floor."""
    try:
        P = check_symmetric(P)
    except ValueError:
        return False
    w = np.linalg.eigvalsh(P)
    return bool(w[-1] > 0 and w[0] > PD_RTOL * w[-1])


def cholesky_lower(P):
    """Lower Cholesky factor ``L`` with ``L @ L.T == P`` and positive diagonal.

    Raises
    ------
    NotPositiveDefiniteError
        With ``pivot`` set to the (0-based) index of the failing pivot.
    """
    P = check_symmetric(P)
    L, info = lapack.dpotrf(P, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(
            f"Cholesky failed: leading minor of order {info} is not positive",
            pivot=info - 1,
        )
    if info < 0:  # pragma: no cover - LAPACK argument error
        raise ValidationError(f"dpotrf argument {-info} invalid")
    return L


# Batched, unchecked helpers used on hot paths. Inputs are stacks (..., p, p).

def _exp(A):
    return _apply(A, np.exp)


def _log(P):
    return _apply(P, np.log)


def _pow(P, power):
    return _apply(P, lambda w: w**power)
