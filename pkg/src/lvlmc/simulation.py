"""Gaussian random field generation for the independent factors.

The default engine factorizes the dense covariance matrix of all locations
once and multiplies it with per-realization white noise. Conditioning uses
simple kriging of the data residuals.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist

from . import matfun
from .exceptions import CapacityError, NotPositiveDefiniteError, ValidationError

__all__ = [
    "SimulationEnsemble",
    "SimulationEngine",
    "DenseCholeskyEngine",
    "TurningBandsEngine",
    "realization_rng",
    "simulate_factors",
    "DEFAULT_NODE_CAP",
]

DEFAULT_NODE_CAP = 20000


@dataclass
class SimulationEnsemble:
    """Realizations on a fixed set of locations.

    Attributes
    ----------
    coords : ndarray, shape (n_nodes, d)
    values : ndarray, shape (n_real, n_nodes, p)
    seeds : dict
        Master seed and the spawn key convention of the realization streams.
    kind : str
        ``"factors"``, ``"scores"`` or ``"raw"``.
    names : list of str
    """

    coords: np.ndarray
    values: np.ndarray
    seeds: dict = field(default_factory=dict)
    kind: str = "factors"
    names: list = None

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[1] != self.coords.shape[0]:
            raise ValidationError("ensemble values must have shape (n_real, n_nodes, p)")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("ensemble contains non-finite values")
        if self.names is None:
            self.names = [f"var{j + 1}" for j in range(self.values.shape[2])]

    @property
    def n_real(self):
        return self.values.shape[0]

    def replace(self, values, kind, names=None):
        return SimulationEnsemble(self.coords, values, dict(self.seeds), kind,
                                  list(names or self.names))


def realization_rng(seed, r):
    """Independent generator for realization ``r``.

    Streams are keyed by ``(seed, r)`` so a realization does not depend on
    which other realizations are drawn or in what order.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(r),)))


class SimulationEngine:
    """Unconditional standard Gaussian fields at arbitrary locations."""

    def factor(self, coords, model):
        raise NotImplementedError

    def draw(self, state, noise):
        raise NotImplementedError


class DenseCholeskyEngine(SimulationEngine):
    """Exact covariance reproduction through a dense Cholesky factor."""

    def __init__(self, node_cap=DEFAULT_NODE_CAP):
        self.node_cap = node_cap

    def factor(self, coords, model):
        n = coords.shape[0]
        if n > self.node_cap:
            raise CapacityError(
                f"{n} locations exceed the dense simulation cap of {self.node_cap}; "
                "split the grid into tiles or raise node_cap"
            )
        C = model.covariance(cdist(coords, coords))
        try:
            return matfun.cholesky_lower(C)
        except NotPositiveDefiniteError:
            C[np.diag_indices(n)] += 1e-10 * model.sill
            return matfun.cholesky_lower(C)

    def draw(self, L, noise):
        return L @ noise


class TurningBandsEngine(SimulationEngine):
    """Placeholder for a turning-bands backend on large grids."""

    def factor(self, coords, model):
        raise NotImplementedError("turning-bands simulation is not implemented")


def _unique_locations(nodes, data):
    allc = np.vstack([nodes, data]) if data is not None else nodes
    uniq, inverse = np.unique(allc, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    n = nodes.shape[0]
    return uniq, inverse[:n], (inverse[n:] if data is not None else None)


def simulate_factors(coords, model, n_real, seed, n_factors=1, conditioning=None,
                     engine=None, node_cap=DEFAULT_NODE_CAP):
    """Simulate ``n_factors`` independent Gaussian fields per realization.

    Parameters
    ----------
    coords : array_like, shape (n_nodes, d)
        Target locations (e.g. ``GridSpec.nodes()``).
    model : VariogramModel
        Shared by all factors; covariance ``sill - gamma(h)``.
    n_real : int
    seed : int
        Master seed; realization ``r`` uses :func:`realization_rng`.
    n_factors : int
        Ignored when ``conditioning`` is given (taken from its values).
    conditioning : tuple (data_coords, data_values), optional
        Factor values at data locations, shape ``(m, p)``. Every realization
        honours them exactly.
    engine : SimulationEngine, optional
    node_cap : int

    Returns
    -------
    SimulationEnsemble
        Values of shape ``(n_real, n_nodes, p)``.
    """
    nodes = np.atleast_2d(np.asarray(coords, dtype=float))
    if int(n_real) < 1:
        raise ValidationError("n_real must be at least 1")
    engine = engine or DenseCholeskyEngine(node_cap)
    data = vals = None
    if conditioning is not None:
        data = np.atleast_2d(np.asarray(conditioning[0], dtype=float))
        vals = np.asarray(conditioning[1], dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if data.shape[0] != vals.shape[0] or data.shape[1] != nodes.shape[1]:
            raise ValidationError("conditioning coordinates and values do not align")
        n_factors = vals.shape[1]
        # merge coincident data by averaging so the kriging system stays regular
        data, inv = np.unique(data, axis=0, return_inverse=True)
        inv = inv.ravel()
        vals = np.stack([np.bincount(inv, weights=vals[:, j]) for j in range(n_factors)], 1)
        vals /= np.bincount(inv)[:, None]

    uniq, node_idx, data_idx = _unique_locations(nodes, data)
    L = engine.factor(uniq, model)
    m = uniq.shape[0]

    K = None
    if data is not None:
        cdd = model.covariance(cdist(data, data))
        cnd = model.covariance(cdist(nodes, data))
        try:
            cf = cho_factor(cdd, lower=True)
        except np.linalg.LinAlgError:
            cdd[np.diag_indices_from(cdd)] += 1e-10 * model.sill
            cf = cho_factor(cdd, lower=True)
        K = cho_solve(cf, cnd.T).T
        hit = np.flatnonzero(np.isin(node_idx, data_idx))
        pos = {j: i for i, j in enumerate(data_idx)}

    out = np.empty((int(n_real), nodes.shape[0], n_factors))
    chunk = 64
    for start in range(0, int(n_real), chunk):
        rs = range(start, min(start + chunk, int(n_real)))
        noise = np.stack([realization_rng(seed, r).standard_normal((m, n_factors)) for r in rs])
        # one matmul per chunk: (m, m) @ (m, len(rs) * p)
        flat = noise.transpose(1, 0, 2).reshape(m, -1)
        y = engine.draw(L, flat).reshape(m, len(rs), n_factors).transpose(1, 0, 2)
        yn = y[:, node_idx]
        if K is not None:
            yn = yn + np.einsum("nd,rdp->rnp", K, vals[None] - y[:, data_idx])
            for i in hit:
                yn[:, i] = vals[pos[node_idx[i]]]
        out[start:start + len(rs)] = yn
    seeds = {"master": int(seed), "stream": "SeedSequence(master, spawn_key=(r,))"}
    return SimulationEnsemble(nodes, out, seeds, "factors",
                              [f"Y{j + 1}" for j in range(n_factors)])
