"""K-means clustering of correlation matrices under the quotient distance."""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from .corr import _check_corr_stack, _clamp, _pairwise, frechet_mean_corr_weighted
from .exceptions import ValidationError

__all__ = ["ClusterState", "kmeans_corr", "cluster_objective", "CorrKMeans"]

_TIE_RTOL = 1e-12


@dataclass
class ClusterState:
    """Result of :func:`kmeans_corr`.

    Attributes
    ----------
    K : int
    assignments : ndarray of int, shape (n,)
    centroids : ndarray, shape (K, p, p)
    objective : float
        Sum of squared quotient distances to the assigned centroids.
    iteration : int
        Number of assignment steps performed.
    objectives : list of float
        Objective after each assignment step.
    reseeded : list of (iteration, cluster)
        Empty clusters that were reseeded.
    converged : bool
        Assignments stopped changing before ``max_iter``.
    """

    K: int
    assignments: np.ndarray
    centroids: np.ndarray
    objective: float
    iteration: int
    objectives: list = field(default_factory=list)
    reseeded: list = field(default_factory=list)
    converged: bool = False


def _distinct(points):
    flat = points.reshape(points.shape[0], -1)
    _, first = np.unique(flat, axis=0, return_index=True)
    return np.sort(first)


def _init_centroids(points, K, rng, init, dist_kwargs):
    cand = _distinct(points)
    if K > cand.size:
        raise ValidationError(f"K={K} exceeds the {cand.size} distinct observations")
    if init == "random":
        return points[rng.choice(cand, size=K, replace=False)].copy()
    if init == "farthest":
        chosen = [int(rng.choice(cand))]
        dmin = _pairwise(points, points[chosen], True, **dist_kwargs)[:, 0]
        for _ in range(1, K):
            nxt = int(cand[np.argmax(dmin[cand])])
            chosen.append(nxt)
            dmin = np.minimum(dmin, _pairwise(points, points[[nxt]], True, **dist_kwargs)[:, 0])
        return points[chosen].copy()
    raise ValidationError(f"unknown init {init!r}; use 'random' or 'farthest'")


def _assign(D, rng):
    best = D.min(axis=1, keepdims=True)
    ties = D <= best + _TIE_RTOL * (1.0 + best)
    out = np.argmin(D, axis=1)
    for i in np.flatnonzero(ties.sum(axis=1) > 1):
        out[i] = rng.choice(np.flatnonzero(ties[i]))
    return out


def kmeans_corr(points, K, seed=0, max_iter=100, init="random", initial_centroids=None,
                mean_kwargs=None, dist_kwargs=None):
    """Lloyd iterations on correlation matrices.

    Assignment uses the symmetrized quotient distance (ties broken uniformly
    at random with the seeded generator); centroids are unweighted Fréchet
    means of their members.

    Parameters
    ----------
    points : array_like, shape (n, p, p)
    K : int
    seed : int
    max_iter : int
    init : {"random", "farthest"}
        ``"random"`` picks K distinct observations uniformly; ``"farthest"``
        picks one at random and then repeatedly the observation farthest
        from those already chosen.
    initial_centroids : array_like, shape (K, p, p), optional
        Overrides ``init``.
    mean_kwargs, dist_kwargs : dict, optional
        Forwarded to the Fréchet mean and to the fiber search.

    Returns
    -------
    ClusterState
    """
    points = _check_corr_stack(points)
    points, _ = _clamp(points)
    n = points.shape[0]
    K = int(K)
    if K < 1:
        raise ValidationError("K must be at least 1")
    mean_kwargs = mean_kwargs or {}
    dist_kwargs = dist_kwargs or {}
    rng = np.random.default_rng(seed)
    if initial_centroids is not None:
        C = _check_corr_stack(initial_centroids, "initial_centroids").copy()
        if C.shape[0] != K:
            raise ValidationError(f"expected {K} initial centroids, got {C.shape[0]}")
    else:
        C = _init_centroids(points, K, rng, init, dist_kwargs)

    assign = None
    objectives, reseeded = [], []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        D = _pairwise(points, C, True, **dist_kwargs)
        new = _assign(D, rng)
        for c in range(K):
            if not np.any(new == c):
                far = int(np.argmax(D[np.arange(n), new]))
                C[c] = points[far]
                D[far, c] = 0.0
                new[far] = c
                reseeded.append((it, c))
        obj = float(np.sum(D[np.arange(n), new] ** 2))
        objectives.append(obj)
        if assign is not None and np.array_equal(new, assign):
            converged = True
            break
        assign = new
        for c in range(K):
            C[c] = frechet_mean_corr_weighted(points[assign == c], **mean_kwargs)

    if converged:
        objective = objectives[-1]
    else:
        D = _pairwise(points, C, True, **dist_kwargs)
        objective = float(np.sum(D[np.arange(n), assign] ** 2))
    return ClusterState(K, assign, C, objective, it, objectives, reseeded, converged)


def cluster_objective(state, points, **dist_kwargs):
    """Recompute ``sum_i d_corr(x_i, centroid(x_i))**2`` for a state."""
    points = _check_corr_stack(points)
    points, _ = _clamp(points)
    D = _pairwise(points, state.centroids, True, **dist_kwargs)
    return float(np.sum(D[np.arange(points.shape[0]), state.assignments] ** 2))


class CorrKMeans(ClusterMixin, BaseEstimator):
    """K-means on correlation matrices.

    Parameters
    ----------
    n_clusters : int
    max_iter : int
    init : {"random", "farthest"}
    random_state : int

    Attributes
    ----------
    labels_ : ndarray of int
    cluster_centers_ : ndarray, shape (n_clusters, p, p)
    inertia_ : float
    n_iter_ : int
    state_ : ClusterState
    """

    def __init__(self, n_clusters=2, max_iter=100, init="random", random_state=0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.init = init
        self.random_state = random_state

    def fit(self, X, y=None):
        st = kmeans_corr(X, self.n_clusters, self.random_state, self.max_iter, self.init)
        self.state_ = st
        self.labels_ = st.assignments
        self.cluster_centers_ = st.centroids
        self.inertia_ = st.objective
        self.n_iter_ = st.iteration
        return self

    def predict(self, X):
        check_is_fitted(self)
        X, _ = _clamp(_check_corr_stack(X, "X"))
        D = _pairwise(X, self.cluster_centers_, True)
        return np.argmin(D, axis=1)
