"""Omnidirectional variograms, exponential model fitting and ordinary kriging."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.distance import cdist, pdist
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array

from .exceptions import FitError, KrigingError, ValidationError

__all__ = [
    "VariogramModel",
    "ExperimentalVariogram",
    "experimental_variogram",
    "experimental_cross_variogram",
    "fit_exponential",
    "ordinary_kriging_weights",
    "VariogramEstimator",
    "default_lag_width",
    "pool_variograms",
]


@dataclass(frozen=True)
class VariogramModel:
    """Isotropic exponential variogram with practical range.

    ``gamma(h) = nugget + (sill - nugget) * (1 - exp(-3 h / range))`` for
    ``h > 0`` and ``gamma(0) = 0``; 95% of the structured part is reached at
    ``h = range``.
    """

    nugget: float = 0.0
    sill: float = 1.0
    range: float = 10.0

    def __post_init__(self):
        if not (self.sill > 0 and self.range > 0 and 0 <= self.nugget <= self.sill):
            raise ValidationError(
                f"invalid variogram parameters nugget={self.nugget}, sill={self.sill}, "
                f"range={self.range}"
            )

    def gamma(self, h):
        h = np.asarray(h, dtype=float)
        g = self.nugget + (self.sill - self.nugget) * (1.0 - np.exp(-3.0 * h / self.range))
        return np.where(h > 0, g, 0.0)

    def covariance(self, h):
        return self.sill - self.gamma(h)

    def as_dict(self):
        return {"structure": "exponential", "nugget": self.nugget,
                "sill": self.sill, "range": self.range}


@dataclass(frozen=True)
class ExperimentalVariogram:
    """Binned semivariances.

    ``mean_lags`` is the average pair separation in each bin (NaN when the
    bin is empty); ``lags`` are the bin centers.
    """

    lags: np.ndarray
    gamma: np.ndarray
    counts: np.ndarray
    mean_lags: np.ndarray

    @property
    def empty(self):
        return self.counts == 0

    def to_rows(self):
        return [(float(h), float(g), int(c))
                for h, g, c in zip(self.lags, self.gamma, self.counts)]


def _binned(dist, sq, lag_width, n_lags):
    k = np.floor(dist / lag_width).astype(int)
    keep = k < n_lags
    k, sq, dist = k[keep], sq[keep], dist[keep]
    counts = np.bincount(k, minlength=n_lags)
    sums = np.bincount(k, weights=sq, minlength=n_lags)
    hsum = np.bincount(k, weights=dist, minlength=n_lags)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(counts > 0, 0.5 * sums / np.maximum(counts, 1), 0.0)
        mean_lags = np.where(counts > 0, hsum / np.maximum(counts, 1), np.nan)
    lags = (np.arange(n_lags) + 0.5) * lag_width
    return ExperimentalVariogram(lags, gamma, counts, mean_lags)


def experimental_variogram(coords, values, lag_width, n_lags=20):
    """Omnidirectional experimental semivariogram.

    ``gamma_k = sum((v_i - v_j)**2) / (2 N_k)`` over pairs whose separation
    falls in ``[k * lag_width, (k + 1) * lag_width)``.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    v = np.asarray(values, dtype=float).ravel()
    if coords.shape[0] != v.size or v.size < 2:
        raise ValidationError("need at least two samples with matching coordinates")
    if lag_width <= 0:
        raise ValidationError("lag_width must be positive")
    dist = pdist(coords)
    sq = pdist(v[:, None], "sqeuclidean")
    return _binned(dist, sq, lag_width, int(n_lags))


def experimental_cross_variogram(coords, v1, v2, lag_width, n_lags=20):
    """Cross semivariogram ``sum((a_i - a_j)(b_i - b_j)) / (2 N_k)``.

    Reported for validation only; never used for fitting.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    a = np.asarray(v1, dtype=float).ravel()
    b = np.asarray(v2, dtype=float).ravel()
    i, j = np.triu_indices(a.size, 1)
    dist = pdist(coords)
    prod = (a[i] - a[j]) * (b[i] - b[j])
    return _binned(dist, prod, lag_width, int(n_lags))


def _exp_gamma(h, nugget, psill, rng):
    return nugget + psill * (1.0 - np.exp(-3.0 * h / rng))


def fit_exponential(ev, fix_nugget=None, n_grid=8):
    """Weighted least-squares fit of an exponential model.

    Weights are the bin pair counts. A grid of starting points is evaluated
    and the best few are refined with L-BFGS-B; the returned parameters are
    never worse than any grid start.

    Parameters
    ----------
    ev : ExperimentalVariogram
    fix_nugget : float, optional
        Hold the nugget at this value.
    n_grid : int
        Grid resolution per parameter.

    Returns
    -------
    VariogramModel
    """
    ok = ~ev.empty
    if ok.sum() < 3:
        raise FitError("need at least three non-empty lag bins to fit a variogram")
    h = np.where(np.isnan(ev.mean_lags), ev.lags, ev.mean_lags)[ok]
    g = ev.gamma[ok]
    w = ev.counts[ok].astype(float)
    w = w / w.sum()
    gmax = float(g.max())
    if gmax <= 0 or np.ptp(g) <= 1e-6 * max(gmax, 1e-300):
        raise FitError("experimental variogram is flat; a pure nugget model fits it")
    hmax = float(h.max())

    def unpack(x):
        if fix_nugget is None:
            return x[0], x[1], x[2]
        return float(fix_nugget), x[0], x[1]

    def objective(x):
        nug, ps, r = unpack(x)
        return float(np.sum(w * (g - _exp_gamma(h, nug, ps, r)) ** 2))

    nug_grid = np.linspace(0.0, 0.9 * gmax, n_grid)
    ps_grid = np.linspace(0.1, 1.5, n_grid) * gmax
    r_grid = np.geomspace(0.05, 3.0, n_grid) * hmax
    if fix_nugget is None:
        starts = [(a, b, c) for a in nug_grid for b in ps_grid for c in r_grid]
        bounds = [(0.0, 2.0 * gmax), (0.0, 4.0 * gmax), (1e-6 * hmax, 20.0 * hmax)]
    else:
        starts = [(b, c) for b in ps_grid for c in r_grid]
        bounds = [(0.0, 4.0 * gmax), (1e-6 * hmax, 20.0 * hmax)]
    starts = np.array(starts)
    vals = np.array([objective(x) for x in starts])
    best_x, best_f = starts[np.argmin(vals)], float(vals.min())
    for i in np.argsort(vals)[:5]:
        res = minimize(objective, starts[i], method="L-BFGS-B", bounds=bounds,
                       options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 2000})
        if res.fun < best_f:
            best_x, best_f = res.x, float(res.fun)
    nug, ps, r = unpack(best_x)
    if ps <= 0:
        raise FitError("fitted structure has no partial sill; a pure nugget model fits")
    return VariogramModel(nugget=float(nug), sill=float(nug + ps), range=float(r))


def _merge_duplicates(neighbors):
    uniq, inverse = np.unique(neighbors, axis=0, return_inverse=True)
    return uniq, inverse.ravel()


def ordinary_kriging_weights(target, neighbors, model):
    """Ordinary kriging weights (they sum to one).

    Uses the covariance ``C(h) = sill - gamma(h)``. Neighbors sharing a
    location are merged and share their weight equally. A target on top of a
    neighbor gets that neighbor's weight set to one.

    Parameters
    ----------
    target : array_like, shape (d,)
    neighbors : array_like, shape (k, d)
    model : VariogramModel

    Returns
    -------
    ndarray, shape (k,)
    """
    neighbors = np.atleast_2d(np.asarray(neighbors, dtype=float))
    target = np.asarray(target, dtype=float).ravel()
    k = neighbors.shape[0]
    if k == 0:
        raise ValidationError("need at least one neighbor")
    uniq, inverse = _merge_duplicates(neighbors)
    m = uniq.shape[0]
    d0 = np.linalg.norm(uniq - target, axis=1)
    if np.any(d0 == 0) or m == 1:
        lam = np.zeros(m)
        lam[np.argmin(d0)] = 1.0
    else:
        K = np.ones((m + 1, m + 1))
        K[:m, :m] = model.covariance(cdist(uniq, uniq))
        K[m, m] = 0.0
        rhs = np.ones(m + 1)
        rhs[:m] = model.covariance(d0)
        lam = None
        for jitter in (0.0, 1e-10 * model.sill):
            Kj = K.copy()
            Kj[np.arange(m), np.arange(m)] += jitter
            try:
                sol = np.linalg.solve(Kj, rhs)
            except np.linalg.LinAlgError:
                continue
            if np.all(np.isfinite(sol)):
                lam = sol[:m]
                break
        if lam is None:
            raise KrigingError(
                f"singular kriging system (condition number {np.linalg.cond(K):.3e})"
            )
    counts = np.bincount(inverse, minlength=m)
    return lam[inverse] / counts[inverse]


class VariogramEstimator(BaseEstimator):
    """Experimental variogram plus exponential fit in one estimator.

    Parameters
    ----------
    lag_width : float, optional
        Defaults to :func:`default_lag_width`.
    n_lags : int
    fix_nugget : float, optional

    Attributes
    ----------
    experimental_ : ExperimentalVariogram
    model_ : VariogramModel
    """

    def __init__(self, lag_width=None, n_lags=20, fix_nugget=None):
        self.lag_width = lag_width
        self.n_lags = n_lags
        self.fix_nugget = fix_nugget

    def fit(self, X, y):
        X = check_array(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        lag = self.lag_width or default_lag_width(X, self.n_lags)
        evs = [experimental_variogram(X, y[:, j], lag, self.n_lags) for j in range(y.shape[1])]
        self.experimental_ = pool_variograms(evs)
        self.model_ = fit_exponential(self.experimental_, self.fix_nugget)
        return self

    def score(self, X, y):
        """Negative weighted squared misfit of the fitted model on new data."""
        X = check_array(X, dtype=float)
        ev = experimental_variogram(X, y, self.experimental_.lags[1] - self.experimental_.lags[0],
                                    self.n_lags)
        ok = ~ev.empty
        resid = ev.gamma[ok] - self.model_.gamma(ev.mean_lags[ok])
        return -float(np.average(resid**2, weights=ev.counts[ok]))


def default_lag_width(coords, n_lags=20):
    """Default lag width ``range_guess / 10`` with ``range_guess = extent / 4``.

    ``extent`` is the bounding-box diagonal; 20 such bins cover half of it.
    """
    coords = np.asarray(coords, dtype=float)
    extent = float(np.linalg.norm(np.ptp(coords, axis=0)))
    if extent <= 0:
        raise ValidationError("all samples share one location")
    return extent / 40.0


def pool_variograms(evs):
    """Pair-count weighted average of experimental variograms on equal bins."""
    counts = np.sum([e.counts for e in evs], axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(counts > 0,
                         np.sum([e.gamma * e.counts for e in evs], axis=0) / np.maximum(counts, 1),
                         0.0)
        hs = np.sum([np.nan_to_num(e.mean_lags) * e.counts for e in evs], axis=0)
        mean_lags = np.where(counts > 0, hs / np.maximum(counts, 1), np.nan)
    return ExperimentalVariogram(evs[0].lags, gamma, counts, mean_lags)
