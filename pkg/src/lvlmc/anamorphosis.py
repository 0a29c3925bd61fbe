"""Normal-score transforms, moving neighborhoods and log-ratio transforms."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import ndtri
from scipy.stats import rankdata
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .corr import _project
from .exceptions import (
    CompositionError,
    DegenerateDataError,
    InsufficientDataError,
    ValidationError,
)

__all__ = [
    "Anamorphosis",
    "normal_score",
    "back_transform",
    "NeighborIndex",
    "local_gaussianize",
    "local_correlation",
    "replace_zeros",
    "alr_transform",
    "alr_inverse",
    "NormalScoreTransformer",
    "ALRTransformer",
]

_TIE_OFFSET = 1e-9
_TAIL_CAP = 8.0
_EIG_FLOOR = 1e-6


@dataclass(frozen=True)
class Anamorphosis:
    """Quantile table pairing sorted raw values with Gaussian scores.

    ``raw`` is non-decreasing (tied data values appear once per datum) and
    ``scores`` strictly increasing, so interpolating scores to raw values
    maps every datum's score back to its own value.
    """

    raw: np.ndarray
    scores: np.ndarray
    variable: str = ""
    center: tuple = None

    def __post_init__(self):
        if self.raw.shape != self.scores.shape or self.raw.ndim != 1:
            raise ValidationError("raw and score tables must be 1-D and of equal length")
        if np.any(np.diff(self.scores) <= 0):
            raise ValidationError("scores must be strictly increasing")
        if np.any(np.diff(self.raw) < 0):
            raise ValidationError("raw values must be sorted")

    def forward(self, x):
        """Raw value(s) to Gaussian score(s) by table interpolation."""
        return np.interp(x, self.raw, self.scores)

    def inverse(self, z):
        return back_transform(self, z)


def _scores_from_values(x):
    n = x.shape[0]
    ranks = rankdata(x, method="average")
    order = np.lexsort((np.arange(n), x))
    # split ties: offset by position within the tied group (in sample order)
    sx = x[order]
    first = np.r_[True, sx[1:] != sx[:-1]]
    starts = np.flatnonzero(first)
    pos = np.empty(n)
    pos[order] = np.arange(n) - starts[np.cumsum(first) - 1]
    ranks = ranks + _TIE_OFFSET * pos
    return ndtri((ranks - 0.5) / n), order


def normal_score(values, variable=""):
    """Normal-score transform with plotting position ``(r - 0.5) / n``.

    Parameters
    ----------
    values : array_like, shape (n,)
        At least two finite values, not all equal.
    variable : str
        Label stored on the returned transform.

    Returns
    -------
    scores : ndarray, shape (n,)
    transform : Anamorphosis

    Examples
    --------
    >>> s, _ = normal_score([1.0, 2.0, 3.0])
    >>> float(s[1])
    0.0
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 2:
        raise InsufficientDataError("normal score needs at least two values")
    if not np.all(np.isfinite(x)):
        raise ValidationError("values must be finite")
    if np.all(x == x[0]):
        raise DegenerateDataError(
            f"variable {variable or '?'} is constant; no distribution to transform",
            column=variable or None,
        )
    scores, order = _scores_from_values(x)
    table = Anamorphosis(raw=x[order].copy(), scores=scores[order].copy(),
                         variable=variable)
    return scores, table


def back_transform(transform, z):
    """Gaussian score(s) to raw value(s).

    Piecewise linear between table entries; beyond the table the end
    segments are extended linearly, with ``z`` capped at ±8.
    """
    raw, sc = transform.raw, transform.scores
    z = np.clip(np.asarray(z, dtype=float), -_TAIL_CAP, _TAIL_CAP)
    out = np.interp(z, sc, raw)
    if sc.size >= 2:
        lo_slope = (raw[1] - raw[0]) / (sc[1] - sc[0])
        hi_slope = (raw[-1] - raw[-2]) / (sc[-1] - sc[-2])
        out = np.where(z < sc[0], raw[0] + lo_slope * (z - sc[0]), out)
        out = np.where(z > sc[-1], raw[-1] + hi_slope * (z - sc[-1]), out)
    return out if out.ndim else float(out)


class NeighborIndex:
    """Nearest-sample lookup with deterministic tie breaking.

    Among samples at equal distance the lower sample index wins.
    """

    def __init__(self, coords):
        self.coords = np.atleast_2d(np.asarray(coords, dtype=float))
        self.tree = cKDTree(self.coords)

    def __len__(self):
        return self.coords.shape[0]

    def query(self, center, l):
        n = len(self)
        if l > n:
            raise InsufficientDataError(f"need {l} samples, have {n}")
        center = np.asarray(center, dtype=float)
        dk, _ = self.tree.query(center, k=[l])
        radius = float(dk[0])
        cand = np.asarray(
            self.tree.query_ball_point(center, radius * (1 + 1e-12) + 1e-12), dtype=int
        )
        dist = np.linalg.norm(self.coords[cand] - center, axis=1)
        order = np.lexsort((cand, dist))
        return cand[order[:l]]


def local_gaussianize(coords, values, center, l, index=None, names=None):
    """Normal-score each variable over the ``l`` samples nearest ``center``.

    Parameters
    ----------
    coords : array_like, shape (n, d)
    values : array_like, shape (n, p)
    center : array_like, shape (d,)
    l : int
    index : NeighborIndex, optional
        Prebuilt index over ``coords`` (reuse it across many centers).
    names : list of str, optional

    Returns
    -------
    scores : ndarray, shape (l, p)
        Rows follow ``neighbors``.
    transforms : list of Anamorphosis
    neighbors : ndarray of int, shape (l,)
        Sample indices, nearest first.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if l < 2:
        raise ValidationError("neighborhood size must be at least 2")
    index = NeighborIndex(coords) if index is None else index
    nb = index.query(center, l)
    names = names or [f"var{j + 1}" for j in range(values.shape[1])]
    scores = np.empty((l, values.shape[1]))
    transforms = []
    for j in range(values.shape[1]):
        s, tab = normal_score(values[nb, j], variable=names[j])
        scores[:, j] = s
        transforms.append(
            Anamorphosis(tab.raw, tab.scores, tab.variable, tuple(np.atleast_1d(center)))
        )
    return scores, transforms, nb


def local_correlation(scores, names=None):
    """Pearson correlation of score vectors, repaired to positive definite.

    Eigenvalues below 1e-6 are floored and the result re-projected to unit
    diagonal.
    """
    Z = np.asarray(scores, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    n, p = Z.shape
    if p == 1:
        return np.ones((1, 1))
    if n < p + 2:
        raise InsufficientDataError(f"need at least {p + 2} vectors for {p} variables")
    sd = Z.std(axis=0)
    if np.any(sd == 0):
        j = int(np.flatnonzero(sd == 0)[0])
        col = names[j] if names else j
        raise DegenerateDataError(f"variable {col} has zero variance", column=col)
    R = np.corrcoef(Z, rowvar=False)
    w, V = np.linalg.eigh(R)
    if w[0] < _EIG_FLOOR:
        R = (V * np.maximum(w, _EIG_FLOOR)) @ V.T
    return _project(R)


def replace_zeros(parts):
    """Multiplicative zero replacement, column by column.

    Zeros become half the smallest positive value of their column; the other
    entries of the row are left unchanged.
    """
    X = np.array(parts, dtype=float)
    for j in range(X.shape[1]):
        col = X[:, j]
        pos = col[col > 0]
        if pos.size and np.any(col == 0):
            col[col == 0] = 0.5 * pos.min()
    return X


def alr_transform(parts, total=100.0, rest_base=True):
    """Additive log-ratio transform.

    Parameters
    ----------
    parts : array_like, shape (n, p)
        Component amounts (e.g. percent). With ``rest_base`` the reference
        part is the complement ``total - sum(parts)``; otherwise the last
        column is the reference and is dropped from the output.
    total : float
    rest_base : bool

    Returns
    -------
    ndarray, shape (n, p) or (n, p - 1)
    """
    X = np.atleast_2d(np.asarray(parts, dtype=float))
    if np.any(X < 0):
        row = int(np.flatnonzero(np.any(X < 0, axis=1))[0])
        raise CompositionError(f"negative part in row {row}", row=row)
    if rest_base:
        rest = total - X.sum(axis=1)
        if np.any(rest < 0):
            row = int(np.flatnonzero(rest < 0)[0])
            raise CompositionError(f"parts exceed {total} in row {row}", row=row)
        X = np.column_stack([X, rest])
    X = replace_zeros(X)
    if np.any(X <= 0):
        row = int(np.flatnonzero(np.any(X <= 0, axis=1))[0])
        raise CompositionError(f"non-positive part after zero replacement in row {row}",
                               row=row)
    return np.log(X[:, :-1] / X[:, -1:])


def alr_inverse(coords, total=100.0, rest_base=True):
    """Inverse of :func:`alr_transform`.

    With ``rest_base`` returns the ``p`` original parts (their sum is below
    ``total``; the remainder is the reference part). Otherwise returns all
    ``p + 1`` parts including the reference.
    """
    A = np.atleast_2d(np.asarray(coords, dtype=float))
    m = A.max(axis=1, keepdims=True)
    m = np.maximum(m, 0.0)
    e = np.exp(A - m)
    ref = np.exp(-m)
    denom = ref + e.sum(axis=1, keepdims=True)
    parts = total * e / denom
    if rest_base:
        return parts
    return np.column_stack([parts, total * ref / denom])


class NormalScoreTransformer(TransformerMixin, BaseEstimator):
    """Column-wise normal-score transform.

    Attributes
    ----------
    anamorphoses_ : list of Anamorphosis
    n_features_in_ : int
    """

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.anamorphoses_ = [normal_score(X[:, j], f"x{j}")[1] for j in range(X.shape[1])]
        self.n_features_in_ = X.shape[1]
        return self

    def fit_transform(self, X, y=None):
        X = check_array(X, dtype=float)
        out = np.empty_like(X)
        self.anamorphoses_ = []
        for j in range(X.shape[1]):
            out[:, j], tab = normal_score(X[:, j], f"x{j}")
            self.anamorphoses_.append(tab)
        self.n_features_in_ = X.shape[1]
        return out

    def transform(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=float)
        return np.column_stack([a.forward(X[:, j]) for j, a in enumerate(self.anamorphoses_)])

    def inverse_transform(self, Z):
        check_is_fitted(self)
        Z = check_array(Z, dtype=float)
        return np.column_stack([back_transform(a, Z[:, j])
                                for j, a in enumerate(self.anamorphoses_)])


class ALRTransformer(TransformerMixin, BaseEstimator):
    """Additive log-ratio transform against the complement to ``total``."""

    def __init__(self, total=100.0, rest_base=True):
        self.total = total
        self.rest_base = rest_base

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        return alr_transform(check_array(X, dtype=float), self.total, self.rest_base)

    def inverse_transform(self, A):
        return alr_inverse(check_array(A, dtype=float), self.total, self.rest_base)
