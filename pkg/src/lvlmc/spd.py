"""Affine-invariant geometry of symmetric positive-definite matrices.

Points are plain ``(p, p)`` ndarrays. Tangent vectors at ``P`` are symmetric
``(p, p)`` ndarrays living in the ambient space (not whitened).
"""

import numpy as np
from scipy.linalg import eigvalsh
from sklearn.base import BaseEstimator

from . import matfun
from .exceptions import ConvergenceError, DimensionMismatchError, ValidationError

__all__ = [
    "check_spd",
    "check_spd_stack",
    "check_weights",
    "dist_spd",
    "exp_map",
    "log_map",
    "geodesic",
    "frechet_mean_weighted",
    "SPDMean",
]


def check_spd(P, name="matrix"):
    P = matfun.check_symmetric(P, name)
    w = np.linalg.eigvalsh(P)
    matfun._check_pd_eigs(w, name)
    return P


def check_spd_stack(points, name="points"):
    """Validate a sequence of SPD matrices of equal size, return ``(k, p, p)``."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2] or arr.shape[0] == 0:
        raise ValidationError(f"{name} must be a non-empty stack of square matrices")
    return np.stack([check_spd(P, f"{name}[{i}]") for i, P in enumerate(arr)])


def check_weights(weights, k, atol=1e-9):
    w = np.asarray(weights, dtype=float).ravel()
    if w.shape[0] != k:
        raise DimensionMismatchError(f"expected {k} weights, got {w.shape[0]}")
    if not np.all(np.isfinite(w)):
        raise ValidationError("weights must be finite")
    if abs(w.sum() - 1.0) > atol:
        raise ValidationError(f"weights must sum to 1 (sum = {w.sum():.12g})")
    return w


def _same_dim(A, B):
    if A.shape != B.shape:
        raise DimensionMismatchError(f"dimension mismatch: {A.shape} vs {B.shape}")


def _dist(P1, P2):
    lam = eigvalsh(P2, P1)
    return float(np.sqrt(np.sum(np.log(lam) ** 2)))


def dist_spd(P1, P2):
    """Affine-invariant distance ``||Log(P1^-1/2 P2 P1^-1/2)||_F``.

    The eigenvalues of the whitened matrix are the generalized eigenvalues of
    the pencil ``(P2, P1)``, which is how it is evaluated here.

    Examples
    --------
    >>> round(dist_spd(np.eye(2), np.diag([np.e**2, np.e**2])), 4)
    2.8284
    """
    P1 = check_spd(P1, "P1")
    P2 = check_spd(P2, "P2")
    _same_dim(P1, P2)
    return _dist(P1, P2)


def _exp_map(P, Y):
    w, V = np.linalg.eigh(P)
    s = np.sqrt(w)
    half = (V * s) @ V.T
    ihalf = (V / s) @ V.T
    return half @ matfun._exp(ihalf @ Y @ ihalf) @ half


def _log_map(P, X):
    w, V = np.linalg.eigh(P)
    s = np.sqrt(w)
    half = (V * s) @ V.T
    ihalf = (V / s) @ V.T
    return half @ matfun._log(ihalf @ X @ ihalf) @ half


def exp_map(P, Y):
    """Riemannian exponential ``P^1/2 Exp(P^-1/2 Y P^-1/2) P^1/2``.

    Parameters
    ----------
    P : array_like, shape (p, p)
        Base point (SPD).
    Y : array_like, shape (p, p)
        Tangent vector at ``P`` (symmetric).
    """
    P = check_spd(P, "P")
    Y = matfun.check_symmetric(Y, "Y")
    _same_dim(P, Y)
    out = _exp_map(P, Y)
    return 0.5 * (out + out.T)


def log_map(P, X):
    """Riemannian logarithm of ``X`` at base ``P`` (inverse of :func:`exp_map`)."""
    P = check_spd(P, "P")
    X = check_spd(X, "X")
    _same_dim(P, X)
    out = _log_map(P, X)
    return 0.5 * (out + out.T)


def geodesic(P, Y, t):
    """Point at time ``t`` on the geodesic leaving ``P`` with velocity ``Y``."""
    return exp_map(P, t * np.asarray(Y, dtype=float))


def _floor_pd(S):
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    w = np.maximum(w, matfun.PD_RTOL * max(w[-1], np.finfo(float).tiny) * 10)
    return (V * w) @ V.T


def _initial_mean(points, weights):
    if np.all(weights >= 0):
        S = np.einsum("k,kij->ij", weights, points)
    else:
        # negative (kriging) weights can make the weighted sum indefinite
        S = _floor_pd(points.mean(axis=0))
    return 0.5 * (S + S.T)


def _tangent_mean(S, points, weights):
    # whitened logs: the ambient tangent mean is half @ M @ half
    w, V = np.linalg.eigh(S)
    s = np.sqrt(w)
    half = (V * s) @ V.T
    ihalf = (V / s) @ V.T
    M = np.einsum("k,kij->ij", weights, matfun._log(ihalf @ points @ ihalf))
    return half, M


def frechet_mean_weighted(points, weights=None, eps=1e-9, max_iter=200,
                          return_residuals=False):
    """Weighted Fréchet (Karcher) mean on the SPD manifold.

    Fixed-point iteration: map the points to the tangent space at the current
    iterate, average them there with the given weights, and map the average
    back with the exponential map. Stops once the Frobenius norm of the
    tangent-space mean drops below ``eps``.

    Parameters
    ----------
    points : array_like, shape (k, p, p)
    weights : array_like, shape (k,), optional
        Must sum to one. Negative entries (from ordinary kriging) are
        accepted. Defaults to uniform.
    eps : float
    max_iter : int
    return_residuals : bool
        Also return the per-iteration tangent-mean norms.

    Returns
    -------
    mean : ndarray, shape (p, p)
    residuals : list of float
        Only if ``return_residuals``.

    Notes
    -----
    The plain fixed-point step is used. If the residual grows on two
    consecutive iterations the step length is halved (and stays halved);
    on well-posed inputs this never triggers.
    """
    points = check_spd_stack(points)
    k = points.shape[0]
    weights = np.full(k, 1.0 / k) if weights is None else check_weights(weights, k)
    if eps <= 0:
        raise ValidationError("eps must be positive")

    S = _initial_mean(points, weights)
    residuals = []
    step = 1.0
    increases = 0
    for _ in range(max_iter):
        half, M = _tangent_mean(S, points, weights)
        Pbar = half @ M @ half
        r = float(np.linalg.norm(Pbar))
        if residuals and r > residuals[-1]:
            increases += 1
            if increases >= 2:
                step *= 0.5
                increases = 0
        else:
            increases = 0
        residuals.append(r)
        S = half @ matfun._exp(step * M) @ half
        S = 0.5 * (S + S.T)
        if r < eps:
            return (S, residuals) if return_residuals else S
    raise ConvergenceError(
        f"Fréchet mean did not converge in {max_iter} iterations "
        f"(residual {residuals[-1]:.3e})",
        last=S,
        residual=residuals[-1],
    )


class SPDMean(BaseEstimator):
    """Estimator wrapper around :func:`frechet_mean_weighted`.

    Attributes
    ----------
    mean_ : ndarray, shape (p, p)
    residuals_ : list of float
    n_iter_ : int
    """

    def __init__(self, eps=1e-9, max_iter=200):
        self.eps = eps
        self.max_iter = max_iter

    def fit(self, X, y=None, sample_weight=None):
        X = check_spd_stack(X, "X")
        if sample_weight is not None:
            sample_weight = np.asarray(sample_weight, dtype=float)
            sample_weight = sample_weight / sample_weight.sum()
        self.mean_, self.residuals_ = frechet_mean_weighted(
            X, sample_weight, eps=self.eps, max_iter=self.max_iter,
            return_residuals=True,
        )
        self.n_iter_ = len(self.residuals_)
        return self

    def transform(self, X):
        """Distances of each matrix in ``X`` to the fitted mean."""
        X = check_spd_stack(X, "X")
        return np.array([_dist(self.mean_, P) for P in X])
