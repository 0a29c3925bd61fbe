"""Locally varying linear model of coregionalization.

The stages, in order:

1. optional additive log-ratio transform of compositional data;
2. local normal scores and local correlation matrix at every sample;
3. decorrelation of the scores into factors with the local Cholesky factor;
4. one variogram model shared by all factors;
5. interpolation of the correlation field to the grid by weighted Fréchet
   means with ordinary kriging weights;
6. conditional simulation of the factors;
7. recorrelation with the interpolated field;
8. local back-transform to raw units (and inverse log-ratio).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial import cKDTree

from . import matfun
from .anamorphosis import NeighborIndex, back_transform, local_gaussianize, local_correlation
from .anamorphosis import alr_inverse
from .corr import _project, check_corr, frechet_mean_corr_weighted
from .exceptions import (
    DimensionMismatchError,
    InsufficientDataError,
    LVLMCError,
    NotPositiveDefiniteError,
    ValidationError,
)
from .simulation import SimulationEnsemble
from .variography import ordinary_kriging_weights

__all__ = [
    "SampleTable",
    "CorrelationField",
    "GridSpec",
    "AccuracyTable",
    "estimate_local_correlations",
    "mixing_field",
    "decorrelate",
    "recorrelate",
    "interpolate_correlations",
    "node_anamorphoses",
    "back_transform_grid",
    "accuracy_plot",
    "PROBABILITIES",
]

PROBABILITIES = np.round(np.arange(1, 10) / 10.0, 1)


def _as3d(coords):
    c = np.atleast_2d(np.asarray(coords, dtype=float))
    if c.shape[1] > 3:
        raise ValidationError("coordinates must have at most three columns")
    if c.shape[1] < 3:
        c = np.hstack([c, np.zeros((c.shape[0], 3 - c.shape[1]))])
    return c


@dataclass(frozen=True)
class SampleTable:
    """Sample coordinates with ``p`` named variables (isotopic)."""

    ids: tuple
    coords: np.ndarray
    values: np.ndarray
    names: tuple
    categories: tuple = None

    def __post_init__(self):
        coords = _as3d(self.coords)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "names", tuple(self.names))
        n = coords.shape[0]
        if values.shape[0] != n or len(self.ids) != n:
            raise DimensionMismatchError("ids, coordinates and values must have equal rows")
        if len(self.names) != values.shape[1]:
            raise DimensionMismatchError("one name per variable is required")
        if len(set(self.ids)) != n:
            raise ValidationError("sample ids must be unique")
        if not np.all(np.isfinite(coords)):
            raise ValidationError("coordinates must be finite")
        bad = ~np.isfinite(values)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise ValidationError(
                f"missing value for sample {self.ids[i]} variable {self.names[j]}"
            )

    @classmethod
    def from_arrays(cls, coords, values, names=None):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        names = names or [f"var{j + 1}" for j in range(values.shape[1])]
        return cls(tuple(range(values.shape[0])), coords, values, tuple(names))

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def p(self):
        return self.values.shape[1]

    def subset(self, rows):
        rows = np.asarray(rows)
        cats = None if self.categories is None else tuple(np.asarray(self.categories)[rows])
        return SampleTable(tuple(np.asarray(self.ids)[rows]), self.coords[rows],
                           self.values[rows], self.names, cats)

    def with_values(self, values, names=None):
        return SampleTable(self.ids, self.coords, values, names or self.names, self.categories)


@dataclass(frozen=True)
class CorrelationField:
    """One correlation matrix per site."""

    coords: np.ndarray
    matrices: np.ndarray
    provenance: str = "estimated"

    def __post_init__(self):
        coords = _as3d(self.coords)
        mats = np.asarray(self.matrices, dtype=float)
        if mats.ndim == 2:
            mats = mats[None]
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "matrices", mats)
        if coords.shape[0] != mats.shape[0]:
            raise DimensionMismatchError("one matrix per site is required")
        if self.provenance not in ("estimated", "interpolated"):
            raise ValidationError(f"unknown provenance {self.provenance!r}")

    def __len__(self):
        return self.coords.shape[0]

    @property
    def p(self):
        return self.matrices.shape[1]

    def validate(self):
        for i, C in enumerate(self.matrices):
            check_corr(C, f"site {i}")
        return self

    def upper(self):
        """Strict upper triangles in row-major order, shape ``(n, p(p-1)/2)``."""
        iu = np.triu_indices(self.p, 1)
        return self.matrices[:, iu[0], iu[1]]

    @classmethod
    def from_upper(cls, coords, upper, provenance="estimated"):
        upper = np.atleast_2d(np.asarray(upper, dtype=float))
        m = upper.shape[1]
        p = int(round((1 + np.sqrt(1 + 8 * m)) / 2))
        if p * (p - 1) // 2 != m:
            raise ValidationError(f"{m} entries are not a strict upper triangle")
        mats = np.repeat(np.eye(p)[None], upper.shape[0], axis=0)
        iu = np.triu_indices(p, 1)
        mats[:, iu[0], iu[1]] = upper
        mats[:, iu[1], iu[0]] = upper
        return cls(coords, mats, provenance)


@dataclass(frozen=True)
class GridSpec:
    """Regular grid; nodes are ordered with x fastest, then y, then z."""

    origin: tuple = (0.0, 0.0, 0.0)
    counts: tuple = (75, 90, 25)
    spacing: tuple = (2.0, 2.0, 2.0)

    def __post_init__(self):
        for name in ("origin", "counts", "spacing"):
            v = tuple(getattr(self, name))
            if len(v) != 3:
                raise ValidationError(f"grid {name} needs three values")
            object.__setattr__(self, name, v)
        if any(int(c) < 1 or int(c) != c for c in self.counts):
            raise ValidationError("grid counts must be positive integers")
        if any(s <= 0 for s in self.spacing):
            raise ValidationError("grid spacing must be positive")
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    @property
    def n_nodes(self):
        return int(np.prod(self.counts))

    def nodes(self):
        axes = [o + s * np.arange(c) for o, s, c in zip(self.origin, self.spacing, self.counts)]
        z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        return np.column_stack([x.ravel(), y.ravel(), z.ravel()])


def _context(exc, msg):
    """Re-raise ``exc`` as the same type with extra context."""
    new = type(exc).__new__(type(exc))
    new.__dict__.update(exc.__dict__)
    new.args = (f"{msg}: {exc}",)
    return new


def estimate_local_correlations(table, l, index=None, return_scores=False):
    """Local correlation matrix at every sample location.

    Each site's variables are normal-scored over its ``l`` nearest samples
    (itself included) and their Pearson correlation is taken.

    Parameters
    ----------
    table : SampleTable
    l : int
        Neighborhood size, at least ``p + 2``.
    index : NeighborIndex, optional
    return_scores : bool
        Also return each site's own local normal score, shape ``(n, p)``.

    Returns
    -------
    field : CorrelationField
    scores : ndarray
        Only if ``return_scores``.
    """
    n, p = table.n, table.p
    if l < p + 2:
        raise ValidationError(f"neighborhood size {l} is below p + 2 = {p + 2}")
    if n < l:
        raise InsufficientDataError(f"neighborhood size {l} exceeds sample count {n}")
    index = index or NeighborIndex(table.coords)
    mats = np.empty((n, p, p))
    own = np.empty((n, p))
    for i in range(n):
        try:
            Z, _, nb = local_gaussianize(table.coords, table.values, table.coords[i], l,
                                         index=index, names=list(table.names))
            mats[i] = local_correlation(Z, names=list(table.names))
        except LVLMCError as exc:
            raise _context(exc, f"site {table.ids[i]}") from exc
        own[i] = Z[np.flatnonzero(nb == i)[0]]
    fld = CorrelationField(table.coords, mats, "estimated")
    return (fld, own) if return_scores else fld


def mixing_field(fld, ids=None):
    """Lower Cholesky factor of every site's matrix, shape ``(n, p, p)``."""
    out = np.empty_like(fld.matrices)
    for i, C in enumerate(fld.matrices):
        try:
            out[i] = matfun.cholesky_lower(C)
        except NotPositiveDefiniteError as exc:
            site = ids[i] if ids is not None else i
            raise _context(exc, f"site {site}") from exc
    return out


def decorrelate(scores, fld, ids=None):
    """Factors ``Y = L^-1 Z`` row by row with ``L L^T`` the site matrix.

    Examples
    --------
    >>> C = np.array([[1.0, 0.6], [0.6, 1.0]])
    >>> f = CorrelationField(np.zeros((1, 2)), C[None])
    >>> decorrelate(np.array([[1.0, 1.0]]), f)
    array([[1. , 0.5]])
    """
    Z = np.atleast_2d(np.asarray(scores, dtype=float))
    if Z.shape != (len(fld), fld.p):
        raise DimensionMismatchError(
            f"scores of shape {Z.shape} do not match a field of {len(fld)} sites, p={fld.p}"
        )
    Ls = mixing_field(fld, ids)
    return np.stack([solve_triangular(L, z, lower=True) for L, z in zip(Ls, Z)])


def recorrelate(factors, fld):
    """``Z = L Y`` at every site.

    Parameters
    ----------
    factors : SimulationEnsemble or ndarray
        Shape ``(n_real, n_sites, p)`` or ``(n_sites, p)``.
    fld : CorrelationField
        Must have one site per node (same order).
    """
    ens = factors if isinstance(factors, SimulationEnsemble) else None
    Y = np.asarray(ens.values if ens is not None else factors, dtype=float)
    if Y.shape[-2] != len(fld) or Y.shape[-1] != fld.p:
        raise DimensionMismatchError(
            f"{Y.shape[-2]} nodes x {Y.shape[-1]} factors do not match a field of "
            f"{len(fld)} sites, p={fld.p}"
        )
    Z = np.einsum("nij,...nj->...ni", mixing_field(fld), Y)
    if ens is None:
        return Z
    return ens.replace(Z, "scores", [f"Z{j + 1}" for j in range(fld.p)])


def interpolate_correlations(fld, targets, model, neighbors=16, clip_negative=False,
                             **mean_kwargs):
    """Correlation matrices at new locations.

    Every target takes ordinary kriging weights over its ``neighbors``
    nearest field sites and the weighted Fréchet mean of their matrices.

    Parameters
    ----------
    fld : CorrelationField
    targets : GridSpec or array_like, shape (m, d)
    model : VariogramModel
    neighbors : int
    clip_negative : bool
        Zero out negative kriging weights and renormalize. By default they
        are passed through unchanged.
    **mean_kwargs
        Forwarded to :func:`frechet_mean_corr_weighted`.

    Returns
    -------
    CorrelationField
        With provenance ``"interpolated"``.
    """
    if len(fld) == 0:
        raise ValidationError("empty correlation field")
    if neighbors < 1:
        raise ValidationError("neighbors must be at least 1")
    pts = targets.nodes() if isinstance(targets, GridSpec) else _as3d(targets)
    k = min(int(neighbors), len(fld))
    index = NeighborIndex(fld.coords)
    out = np.empty((pts.shape[0], fld.p, fld.p))
    for t, x in enumerate(pts):
        nb = index.query(x, k)
        w = ordinary_kriging_weights(x, fld.coords[nb], model)
        if clip_negative and np.any(w < 0):
            w = np.maximum(w, 0.0)
            w /= w.sum()
        keep = w != 0
        nb, w = nb[keep], w[keep]
        if nb.size == 1:
            out[t] = fld.matrices[nb[0]]
            continue
        try:
            out[t] = frechet_mean_corr_weighted(fld.matrices[nb], w / w.sum(), **mean_kwargs)
        except LVLMCError as exc:
            raise _context(exc, f"target {t}") from exc
    return CorrelationField(pts, out, "interpolated")


def node_anamorphoses(table, nodes, l, index=None):
    """Local transforms at each node from its own ``l`` nearest samples.

    Returns a list (one entry per node) of per-variable
    :class:`~lvlmc.anamorphosis.Anamorphosis` tables.
    """
    index = index or NeighborIndex(table.coords)
    nodes = _as3d(nodes)
    out = []
    for i, x in enumerate(nodes):
        try:
            _, tabs, _ = local_gaussianize(table.coords, table.values, x, l, index=index,
                                           names=list(table.names))
        except LVLMCError as exc:
            raise _context(exc, f"node {i}") from exc
        out.append(tabs)
    return out


def back_transform_grid(scores, transforms, alr_total=None, names=None):
    """Map simulated scores to raw units node by node.

    Parameters
    ----------
    scores : SimulationEnsemble or ndarray, shape (n_real, n_nodes, p)
    transforms : list
        One list of per-variable anamorphoses per node
        (see :func:`node_anamorphoses`).
    alr_total : float, optional
        When given, the back-transformed values are alr coordinates and are
        mapped to parts summing to at most ``alr_total``.
    """
    ens = scores if isinstance(scores, SimulationEnsemble) else None
    Z = np.asarray(ens.values if ens is not None else scores, dtype=float)
    n_nodes = Z.shape[1]
    if len(transforms) != n_nodes:
        raise ValidationError(
            f"missing transforms: {len(transforms)} given for {n_nodes} nodes"
        )
    out = np.empty_like(Z)
    for i, tabs in enumerate(transforms):
        if tabs is None or len(tabs) != Z.shape[2]:
            raise ValidationError(f"missing transform for node {i}")
        for j, tab in enumerate(tabs):
            out[:, i, j] = back_transform(tab, Z[:, i, j])
    if alr_total is not None:
        out = alr_inverse(out.reshape(-1, out.shape[2]), total=alr_total).reshape(out.shape)
    if ens is None:
        return out
    return ens.replace(out, "raw", names)


@dataclass
class AccuracyTable:
    """Observed coverage of symmetric probability intervals.

    ``proportions`` has one row per probability and one column per
    variable; ``pooled`` averages over variables.
    """

    probabilities: np.ndarray
    proportions: np.ndarray
    pooled: np.ndarray
    n_linked: int
    n_dropped: int
    names: list = field(default_factory=list)

    def rows(self):
        return [(float(p), *map(float, r), float(q))
                for p, r, q in zip(self.probabilities, self.proportions, self.pooled)]


def accuracy_plot(ensemble, test_coords, test_values, link_radius, probabilities=None,
                  node_coords=None):
    """Accuracy plot data for held-out samples.

    Each test sample is linked to its nearest node if that node lies within
    ``link_radius``; the rest are dropped. For each probability ``q`` the
    symmetric interval between the ``(1 - q) / 2`` and ``(1 + q) / 2``
    ensemble quantiles at the linked node is checked for the true value.

    Parameters
    ----------
    ensemble : SimulationEnsemble or ndarray, shape (n_real, n_nodes, p)
    test_coords : array_like, shape (m, d)
    test_values : array_like, shape (m, p)
    link_radius : float
    probabilities : array_like, optional
        Defaults to 0.1, 0.2, ..., 0.9.
    node_coords : array_like, optional
        Required when ``ensemble`` is a plain array.

    Returns
    -------
    AccuracyTable
    """
    if isinstance(ensemble, SimulationEnsemble):
        values, nodes, names = ensemble.values, ensemble.coords, list(ensemble.names)
    else:
        values = np.asarray(ensemble, dtype=float)
        nodes, names = _as3d(node_coords), None
    truth = np.asarray(test_values, dtype=float)
    if truth.ndim == 1:
        truth = truth[:, None]
    if truth.shape[1] != values.shape[2]:
        raise DimensionMismatchError("test table and ensemble have different variables")
    probs = PROBABILITIES if probabilities is None else np.asarray(probabilities, dtype=float)
    dist, node = cKDTree(nodes).query(_as3d(test_coords))
    linked = dist <= link_radius
    n_linked = int(linked.sum())
    if n_linked == 0:
        raise InsufficientDataError(
            f"no test sample lies within {link_radius} of a grid node"
        )
    sims = values[:, node[linked], :]
    t = truth[linked]
    lo = np.quantile(sims, (1 - probs) / 2, axis=0)
    hi = np.quantile(sims, (1 + probs) / 2, axis=0)
    inside = (lo <= t[None]) & (t[None] <= hi)
    prop = inside.mean(axis=1)
    return AccuracyTable(probs, prop, prop.mean(axis=1), n_linked,
                         int(truth.shape[0] - n_linked),
                         names or [f"var{j + 1}" for j in range(values.shape[2])])


def project_field(fld):
    """Re-project every matrix of a field onto unit diagonal."""
    return CorrelationField(fld.coords, _project(fld.matrices), fld.provenance)
