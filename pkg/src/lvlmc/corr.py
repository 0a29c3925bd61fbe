"""Correlation matrices as the quotient of SPD matrices by positive diagonal scaling.

A correlation matrix ``C`` stands for its whole fiber ``{D C D : D > 0
diagonal}``. Distances and geodesics between classes are computed in the SPD
manifold after moving one endpoint along its fiber to the representative
closest to the other endpoint.

The fiber search is gradient descent on ``log(diag(D))``; for base ``A`` and
observation ``C`` with ``B = D C D`` the (half) Riemannian gradient on the
diagonal group is ``2 * D * diag(Log(B A^-1))`` and the update is
``D <- D * exp(-delta * grad / D)``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import matfun
from .exceptions import ConvergenceError, DimensionMismatchError, ValidationError
from .spd import check_spd, check_weights

__all__ = [
    "BOUNDARY",
    "BoundaryClampWarning",
    "FiberResult",
    "check_corr",
    "is_corr",
    "corr_from_offdiag",
    "project_to_corr",
    "fiber_optimize",
    "dist_corr",
    "pairwise_dist_corr",
    "geodesic_corr",
    "frechet_mean_corr_weighted",
    "CorrMean",
]

#: Off-diagonal magnitude above which inputs are clamped before optimization.
BOUNDARY = 0.999

_MAX_HALVINGS = 20
_NOISE = 1e-12
# sufficient-decrease constant; rules out steps oscillating at the stability limit
_ARMIJO = 0.25
_MAX_STEP = 10.0


class BoundaryClampWarning(UserWarning):
    """Off-diagonal entries were pulled in from the elliptope boundary."""


@dataclass
class FiberResult:
    """Outcome of a fiber search.

    ``d`` holds the diagonal of the optimal scaling ``D*``; the optimal fiber
    representative of ``other`` is ``d[:, None] * other * d[None, :]``.
    """

    d: np.ndarray
    objective: float
    grad_norm: float
    n_iter: int
    objectives: list = field(default_factory=list)
    clamped: bool = False

    @property
    def D(self):
        return np.diag(self.d)


def is_corr(C, atol=1e-10):
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        return False
    if not np.allclose(np.diag(C), 1.0, rtol=0, atol=atol):
        return False
    off = C[~np.eye(C.shape[0], dtype=bool)]
    if np.any(np.abs(off) >= 1):
        return False
    return matfun.is_spd(C)


def check_corr(C, name="matrix"):
    """Validate a correlation matrix; the diagonal is reset to exactly one."""
    C = check_spd(C, name)
    if not np.allclose(np.diag(C), 1.0, rtol=0, atol=1e-10):
        raise ValidationError(f"{name} does not have a unit diagonal")
    C = C.copy()
    np.fill_diagonal(C, 1.0)
    return C


def _check_corr_stack(points, name="points"):
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2] or arr.shape[0] == 0:
        raise ValidationError(f"{name} must be a non-empty stack of square matrices")
    return np.stack([check_corr(C, f"{name}[{i}]") for i, C in enumerate(arr)])


def corr_from_offdiag(values, p=None):
    """Build a correlation matrix from its upper-triangle entries (row-major).

    >>> corr_from_offdiag([0.5])
    array([[1. , 0.5],
           [0.5, 1. ]])
    """
    values = np.asarray(values, dtype=float).ravel()
    if p is None:
        p = int(round((1 + np.sqrt(1 + 8 * values.size)) / 2))
    if p * (p - 1) // 2 != values.size:
        raise ValidationError(f"{values.size} entries do not form an upper triangle")
    C = np.eye(p)
    iu = np.triu_indices(p, 1)
    C[iu] = values
    C.T[iu] = values
    return C


def _project(S):
    d = 1.0 / np.sqrt(np.diagonal(S, axis1=-2, axis2=-1))
    C = S * d[..., :, None] * d[..., None, :]
    C = 0.5 * (C + np.swapaxes(C, -1, -2))
    idx = np.arange(S.shape[-1])
    C[..., idx, idx] = 1.0
    return C


def project_to_corr(S):
    """Project an SPD matrix onto its correlation representative.

    ``D S D`` with ``D = diag(S)^-1/2``; the diagonal is set to exactly 1.
    """
    S = check_spd(S, "S")
    return _project(S)


def _clamp(stack):
    """Clamp near-boundary off-diagonals, keeping the result positive definite."""
    p = stack.shape[-1]
    off = ~np.eye(p, dtype=bool)
    hit = np.abs(stack[..., off]) > BOUNDARY
    if not np.any(hit):
        return stack, False
    out = stack.copy()
    out[..., off] = np.clip(out[..., off], -BOUNDARY, BOUNDARY)
    w, V = np.linalg.eigh(out)
    floor = 1e-6
    if np.any(w[..., 0] < floor):
        w = np.maximum(w, floor)
        out = _project((V * w[..., None, :]) @ np.swapaxes(V, -1, -2))
    warnings.warn(
        f"off-diagonal entries beyond ±{BOUNDARY} clamped before fiber optimization",
        BoundaryClampWarning,
        stacklevel=3,
    )
    return out, True


def _whiteners(A):
    w, V = np.linalg.eigh(A)
    s = np.sqrt(w)
    half = (V * s[..., None, :]) @ np.swapaxes(V, -1, -2)
    ihalf = (V / s[..., None, :]) @ np.swapaxes(V, -1, -2)
    return half, ihalf


def _fiber_state(half, ihalf, C, d):
    """Objective and gradient of ``g(D) = d^2(A, D C D)`` for a batch."""
    B = C * d[:, :, None] * d[:, None, :]
    W = ihalf @ B @ ihalf
    mu, U = np.linalg.eigh(0.5 * (W + np.swapaxes(W, -1, -2)))
    logmu = np.log(mu)
    g = np.sum(logmu**2, axis=-1)
    logW = (U * logmu[:, None, :]) @ np.swapaxes(U, -1, -2)
    # diag(Log(B A^-1)) = diag(A^1/2 Log(W) A^-1/2)
    L = np.einsum("kij,kjl,kli->ki", half, logW, ihalf)
    grad = 2.0 * d * L
    return g, grad


def _fiber_objective(ihalf, C, d):
    B = C * d[:, :, None] * d[:, None, :]
    W = ihalf @ B @ ihalf
    mu = np.linalg.eigvalsh(0.5 * (W + np.swapaxes(W, -1, -2)))
    return np.sum(np.log(mu) ** 2, axis=-1)


def _fiber_batch(bases, others, d0=None, delta=0.1, tol=1e-8, max_iter=500,
                 track=False, raise_on_fail=True):
    """Fiber search for ``k`` (base, other) pairs at once.

    Returns ``d (k, p)``, objectives ``(k,)``, grad norms ``(k,)``, iteration
    counts ``(k,)`` and, if ``track``, per-pair lists of accepted objectives.
    """
    k, p, _ = others.shape
    half, ihalf = _whiteners(bases)
    half = np.broadcast_to(half, others.shape)
    ihalf = np.broadcast_to(ihalf, others.shape)
    d = np.ones((k, p)) if d0 is None else np.array(d0, dtype=float)
    step = np.full(k, float(delta))
    g, grad = _fiber_state(half, ihalf, others, d)
    gnorm = np.linalg.norm(grad, axis=1)
    active = gnorm > tol
    n_iter = np.zeros(k, dtype=int)
    history = [[float(v)] for v in g] if track else None

    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        n_iter[idx] += 1
        # D^-1 grad = 2 diag(L); update in log-coordinates
        direction = grad[idx] / d[idx]
        # the log-coordinate gradient of g is 2 * direction
        slope = 2.0 * np.sum(direction**2, axis=1)
        accepted = np.zeros(idx.size, dtype=bool)
        new_d = d[idx].copy()
        new_g = g[idx].copy()
        pending = np.arange(idx.size)
        for _ in range(_MAX_HALVINGS + 1):
            sel = idx[pending]
            trial = d[sel] * np.exp(-step[sel, None] * direction[pending])
            gt = _fiber_objective(ihalf[sel], others[sel], trial)
            # Armijo test, tolerant to round-off in the eigenvalue sums
            ok = gt <= (g[sel] - _ARMIJO * step[sel] * slope[pending]
                        + _NOISE * (1.0 + g[sel]))
            new_d[pending[ok]] = trial[ok]
            new_g[pending[ok]] = gt[ok]
            accepted[pending[ok]] = True
            pending = pending[~ok]
            if pending.size == 0:
                break
            step[idx[pending]] *= 0.5
        # pairs that could not descend at all sit at the round-off floor
        stalled = idx[~accepted]
        active[stalled] = False
        moved = idx[accepted]
        d_old = d[moved]
        d[moved] = new_d[accepted]
        _, grad_m = _fiber_state(half[moved], ihalf[moved], others[moved], d[moved])
        # Barzilai-Borwein length for the next step, in log-coordinates
        sv = np.log(d[moved]) - np.log(d_old)
        yv = grad_m / d[moved] - direction[accepted]
        sy = np.sum(sv * yv, axis=1)
        bb = np.sum(sv * sv, axis=1) / np.where(sy > 0, sy, 1.0)
        step[moved] = np.where(sy > 0, np.clip(bb, 1e-3 * delta, _MAX_STEP), delta)
        # keep the value that passed the descent test so histories are monotone
        g_m = new_g[accepted]
        g[moved] = g_m
        grad[moved] = grad_m
        gnorm[moved] = np.linalg.norm(grad_m, axis=1)
        active[moved] = gnorm[moved] > tol
        if track:
            for j, v in zip(moved, g_m):
                history[j].append(float(v))

    failed = active | (gnorm > np.sqrt(tol))
    if raise_on_fail and np.any(failed):
        j = int(np.flatnonzero(failed)[0])
        raise ConvergenceError(
            f"fiber optimization did not converge in {max_iter} iterations "
            f"(gradient norm {gnorm[j]:.3e})",
            last=d[j].copy(),
            residual=float(gnorm[j]),
        )
    return d, g, gnorm, n_iter, history


def fiber_optimize(base, other, delta=0.1, tol=1e-8, max_iter=500, d0=None):
    """Find the diagonal scaling of ``other`` closest to ``base``.

    Minimizes ``g(D) = d_spd(base, D @ other @ D)**2`` over positive diagonal
    ``D``, starting from the identity.

    Parameters
    ----------
    base, other : array_like, shape (p, p)
        Correlation matrices.
    delta : float
        Initial step size; halved (at most 20 times) whenever a step would
        increase the objective.
    tol : float
        Stop once the gradient Frobenius norm is at most ``tol``.
    max_iter : int
    d0 : array_like, shape (p,), optional
        Warm start.

    Returns
    -------
    FiberResult
    """
    base = check_corr(base, "base")
    other = check_corr(other, "other")
    if base.shape != other.shape:
        raise DimensionMismatchError(f"dimension mismatch: {base.shape} vs {other.shape}")
    if delta <= 0:
        raise ValidationError("delta must be positive")
    pair, clamped = _clamp(np.stack([base, other]))
    d0 = None if d0 is None else np.asarray(d0, dtype=float)[None]
    d, g, gnorm, n_iter, hist = _fiber_batch(
        pair[0], pair[1][None], d0, delta, tol, max_iter, track=True
    )
    return FiberResult(
        d=d[0], objective=float(g[0]), grad_norm=float(gnorm[0]),
        n_iter=int(n_iter[0]), objectives=hist[0], clamped=clamped,
    )


def dist_corr(C1, C2, symmetric=False, delta=0.1, tol=1e-8, max_iter=500):
    """Quotient distance between two correlation matrices.

    ``min_D d_spd(C1, D C2 D)``. The one-sided value optimizes along the fiber
    of ``C2``; with ``symmetric=True`` the smaller of the two one-sided values
    is returned.
    """
    C1 = check_corr(C1, "C1")
    C2 = check_corr(C2, "C2")
    if C1.shape != C2.shape:
        raise DimensionMismatchError(f"dimension mismatch: {C1.shape} vs {C2.shape}")
    pair, _ = _clamp(np.stack([C1, C2]))
    if symmetric:
        _, g, *_ = _fiber_batch(pair, pair[::-1], None, delta, tol, max_iter)
        return float(np.sqrt(g.min()))
    _, g, *_ = _fiber_batch(pair[0], pair[1][None], None, delta, tol, max_iter)
    return float(np.sqrt(g[0]))


def pairwise_dist_corr(X, Y, symmetric=True, delta=0.1, tol=1e-8, max_iter=500):
    """Matrix of quotient distances, shape ``(len(X), len(Y))``."""
    X, _ = _clamp(_check_corr_stack(X, "X"))
    Y, _ = _clamp(_check_corr_stack(Y, "Y"))
    return _pairwise(X, Y, symmetric, delta, tol, max_iter)


def _pairwise(X, Y, symmetric, delta=0.1, tol=1e-8, max_iter=500):
    n, m = len(X), len(Y)
    out = np.empty((n, m))
    for j in range(m):
        _, g, *_ = _fiber_batch(Y[j], X, None, delta, tol, max_iter)
        if symmetric:
            _, g2, *_ = _fiber_batch(X, np.broadcast_to(Y[j], X.shape), None,
                                     delta, tol, max_iter)
            g = np.minimum(g, g2)
        out[:, j] = np.sqrt(g)
    return out


def geodesic_corr(C1, C2, t, delta=0.1, tol=1e-8, max_iter=500):
    """Point(s) on the quotient geodesic from ``C1`` to ``C2``.

    The SPD geodesic from ``C1`` to the optimal fiber representative of
    ``C2`` is projected back onto the correlation matrices.

    Parameters
    ----------
    t : float or array_like
        Time(s) in ``[0, 1]``. An array returns a stack ``(len(t), p, p)``.
    """
    res = fiber_optimize(C1, C2, delta, tol, max_iter)
    C1 = check_corr(C1, "C1")
    C2 = check_corr(C2, "C2")
    C2t = C2 * res.d[:, None] * res.d[None, :]
    half, ihalf = _whiteners(C1)
    M = matfun._log(ihalf @ C2t @ ihalf)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any((ts < 0) | (ts > 1)):
        raise ValidationError("t must lie in [0, 1]")
    out = _project(half @ matfun._exp(ts[:, None, None] * M) @ half)
    out[ts == 0] = C1
    out[ts == 1] = C2
    return out[0] if np.ndim(t) == 0 else out


def _log_at(C, X):
    """Ambient log map of a stack ``X`` at base ``C`` (whitened form + whiteners)."""
    half, ihalf = _whiteners(C)
    return half, matfun._log(ihalf @ X @ ihalf)


def frechet_mean_corr_weighted(points, weights=None, delta=0.1, eps=1e-8,
                               max_iter=100, fiber_tol=1e-10, fiber_max_iter=500,
                               return_info=False):
    """Weighted Fréchet mean of correlation matrices under the quotient metric.

    Each outer iteration keeps the current iterate ``C_t`` fixed, moves every
    observation to its fiber representative closest to ``C_t``, averages the
    SPD log maps of those representatives at ``C_t`` with the given weights,
    exponentiates, and projects back to a correlation matrix.

    Parameters
    ----------
    points : array_like, shape (k, p, p)
    weights : array_like, shape (k,), optional
        Sum to one; negative entries allowed. Uniform by default.
    delta : float
        Fiber step size.
    eps : float
        Stop when the Frobenius norm of the tangent-space mean is below this.
    max_iter : int
        Outer iteration cap.
    fiber_tol, fiber_max_iter
        Passed to the fiber search. Fiber scalings are warm-started from the
        previous outer iteration.
    return_info : bool
        Also return a dict with ``objectives`` (weighted sum of squared
        quotient distances at each iterate), ``residuals`` and ``n_iter``.
    """
    points = _check_corr_stack(points)
    k, p, _ = points.shape
    weights = np.full(k, 1.0 / k) if weights is None else check_weights(weights, k)
    points, clamped = _clamp(points)

    if np.all(weights >= 0):
        C = np.einsum("k,kij->ij", weights, points)
    else:
        C = points.mean(axis=0)
    C = _project(C)
    if p == 1 or k == 1:
        out = points[0].copy() if k == 1 else np.ones((1, 1))
        info = {"objectives": [0.0], "residuals": [0.0], "n_iter": 0, "clamped": clamped}
        return (out, info) if return_info else out

    d = np.ones((k, p))
    objectives, residuals = [], []
    step, increases = 1.0, 0
    for it in range(max_iter):
        d, g, *_ = _fiber_batch(C, points, d, delta, fiber_tol, fiber_max_iter)
        objectives.append(float(weights @ g))
        reps = points * d[:, :, None] * d[:, None, :]
        half, logs = _log_at(C, reps)
        M = np.einsum("k,kij->ij", weights, logs)
        r = float(np.linalg.norm(half @ M @ half))
        if residuals and r > residuals[-1]:
            increases += 1
            if increases >= 2:
                step *= 0.5
                increases = 0
        else:
            increases = 0
        residuals.append(r)
        if r < eps:
            info = {"objectives": objectives, "residuals": residuals,
                    "n_iter": it + 1, "clamped": clamped}
            return (C, info) if return_info else C
        C = _project(half @ matfun._exp(step * M) @ half)
    raise ConvergenceError(
        f"correlation Fréchet mean did not converge in {max_iter} iterations "
        f"(residual {residuals[-1]:.3e})",
        last=C,
        residual=residuals[-1],
    )


class CorrMean(BaseEstimator):
    """Estimator wrapper around :func:`frechet_mean_corr_weighted`.

    Attributes
    ----------
    mean_ : ndarray, shape (p, p)
    objectives_ : list of float
    n_iter_ : int
    """

    def __init__(self, delta=0.1, eps=1e-8, max_iter=100):
        self.delta = delta
        self.eps = eps
        self.max_iter = max_iter

    def fit(self, X, y=None, sample_weight=None):
        if sample_weight is not None:
            sample_weight = np.asarray(sample_weight, dtype=float)
            sample_weight = sample_weight / sample_weight.sum()
        self.mean_, info = frechet_mean_corr_weighted(
            X, sample_weight, delta=self.delta, eps=self.eps,
            max_iter=self.max_iter, return_info=True,
        )
        self.objectives_ = info["objectives"]
        self.n_iter_ = info["n_iter"]
        return self

    def transform(self, X):
        """Quotient distances of each matrix in ``X`` to the fitted mean."""
        return pairwise_dist_corr(X, self.mean_[None], symmetric=True)[:, 0]
