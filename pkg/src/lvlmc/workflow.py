"""File-based stages of the pipeline, shared by ``run_pipeline`` and the CLI.

Every stage reads its inputs from disk, writes its artifacts into the output
directory and returns the list of files it wrote. A run manifest (version,
config echo, seeds, input and output digests) is written per command; wall
clock times go to a separate timing file so the manifest itself is
reproducible byte for byte.
"""

import datetime
import glob
import json
import os

import numpy as np

from . import __version__
from . import io as lio
from .anamorphosis import alr_transform
from .config import echo, load_config
from .exceptions import ConfigError, LVLMCError, ValidationError
from .kmeans import kmeans_corr
from .pipeline import (
    CorrelationField,
    GridSpec,
    accuracy_plot,
    back_transform_grid,
    decorrelate,
    estimate_local_correlations,
    interpolate_correlations,
    node_anamorphoses,
    recorrelate,
)
from .simulation import DenseCholeskyEngine, TurningBandsEngine, simulate_factors
from .variography import (
    VariogramModel,
    default_lag_width,
    experimental_cross_variogram,
    experimental_variogram,
    fit_exponential,
    pool_variograms,
)

__all__ = [
    "StageError",
    "stage",
    "run_transform",
    "run_interpolate",
    "run_simulate",
    "run_validate",
    "run_cluster",
    "run_export_ellipses",
    "export_ellipses",
    "run_pipeline",
    "write_manifest",
]

SCORES = "scores.csv"
ALR = "alr.csv"
FACTORS = "factors.csv"
FIELD_SAMPLES = "field_samples.csv"
FIELD_GRID = "field_grid.csv"
VARIOGRAM = "variogram.csv"
MODEL = "variogram_model.json"
REALIZATIONS = "realizations"


class StageError(Exception):
    """Wraps a stage failure; ``cause`` keeps the original error."""

    def __init__(self, name, cause):
        super().__init__(f"stage '{name}' failed: {cause}")
        self.stage = name
        self.cause = cause


class stage:
    """Context manager tagging errors with the stage name."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, ev, tb):
        if ev is not None and isinstance(ev, (LVLMCError, OSError)) \
                and not isinstance(ev, StageError):
            raise StageError(self.name, ev) from ev
        return False


def _grid(cfg):
    g = cfg["grid"]
    return GridSpec(g["origin"], g["counts"], g["spacing"])


def _samples(cfg):
    path = cfg["data"]["samples"]
    if not path:
        raise ConfigError("[data] samples is required")
    return lio.read_samples(path, cfg["data"]["variables"])


def _transformed(cfg, table):
    if not cfg["data"]["compositional"]:
        return table
    vals = alr_transform(table.values, total=cfg["data"]["total"])
    return table.with_values(vals, tuple(f"alr_{n}" for n in table.names))


def _model(cfg, factors=None, coords=None):
    vg = cfg["variogram"]
    if vg["sill"] is not None:
        return VariogramModel(vg["nugget"] or 0.0, vg["sill"], vg["range"]), None
    lag = vg["lag_width"] or default_lag_width(coords)
    evs = [experimental_variogram(coords, factors[:, j], lag, vg["n_lags"])
           for j in range(factors.shape[1])]
    ev = pool_variograms(evs)
    return fit_exponential(ev, vg["nugget"]), ev


def _write_model(path, model, extra):
    d = model.as_dict()
    d.update(extra)
    lio.write_json(path, d)


def _read_model(out):
    path = os.path.join(out, MODEL)
    with open(path) as fh:
        d = json.load(fh)
    return VariogramModel(d["nugget"], d["sill"], d["range"])


def run_transform(cfg, out):
    """Steps 1 to 4a plus variography: scores, field, factors, variogram."""
    written = []
    with stage("read"):
        table = _samples(cfg)
    with stage("log-ratio"):
        tt = _transformed(cfg, table)
        if cfg["data"]["compositional"]:
            p = os.path.join(out, ALR)
            lio.write_samples(p, tt)
            written.append(p)
    with stage("local-correlation"):
        l = cfg["neighborhood"]["l"]
        fld, scores = estimate_local_correlations(tt, l, return_scores=True)
        p1, p2 = os.path.join(out, SCORES), os.path.join(out, FIELD_SAMPLES)
        lio.write_samples(p1, tt, scores)
        lio.write_field(p2, fld)
        written += [p1, p2]
    with stage("decorrelate"):
        factors = decorrelate(scores, fld, tt.ids)
        p = os.path.join(out, FACTORS)
        lio.write_samples(p, tt, factors, [f"Y{j + 1}" for j in range(tt.p)])
        written.append(p)
    with stage("variogram"):
        model, ev = _model(cfg, factors, tt.coords)
        extra = {"factor_variances": [float(v) for v in factors.var(axis=0)]}
        if ev is not None:
            p = os.path.join(out, VARIOGRAM)
            lio.write_csv(p, ["lag", "gamma", "pairs"], ev.to_rows())
            written.append(p)
            lag = ev.lags[1] - ev.lags[0]
            cross = {}
            for i in range(tt.p):
                for j in range(i + 1, tt.p):
                    cv = experimental_cross_variogram(tt.coords, factors[:, i], factors[:, j],
                                                      lag, len(ev.lags))
                    ok = ~cv.empty
                    cross[f"Y{i + 1}_Y{j + 1}"] = float(np.average(cv.gamma[ok],
                                                                   weights=cv.counts[ok]))
            extra["cross_variogram_mean"] = cross
        p = os.path.join(out, MODEL)
        _write_model(p, model, extra)
        written.append(p)
    return written


def run_interpolate(cfg, out, field_path=None):
    """Step 4b: correlation field on the grid."""
    with stage("interpolate"):
        fld = lio.read_field(field_path or os.path.join(out, FIELD_SAMPLES))
        model = _read_model(out)
        nb = cfg["neighborhood"]
        gf = interpolate_correlations(fld, _grid(cfg), model, nb["interp_neighbors"],
                                      nb["clip_negative_weights"])
        p = os.path.join(out, FIELD_GRID)
        lio.write_field(p, gf)
    return [p]


def _engine(cfg):
    sim = cfg["simulation"]
    if sim["engine"] == "turning-bands":
        return TurningBandsEngine()
    return DenseCholeskyEngine(sim["node_cap"])


def run_simulate(cfg, out, seed):
    """Steps 5 to 8: factor simulation, recorrelation, back-transform."""
    sim = cfg["simulation"]
    written = []
    with stage("read"):
        raw_table = _samples(cfg)
        table = _transformed(cfg, raw_table)
        gf = lio.read_field(os.path.join(out, FIELD_GRID), "interpolated")
        model = _read_model(out)
        grid = _grid(cfg)
        nodes = grid.nodes()
        if len(gf) != nodes.shape[0] or not np.allclose(gf.coords, nodes):
            raise ValidationError("grid correlation field does not match the [grid] nodes")
    with stage("simulate"):
        cond = None
        if sim["conditional"]:
            ft = lio.read_samples(os.path.join(out, FACTORS))
            cond = (ft.coords, ft.values)
        try:
            ens = simulate_factors(nodes, model, sim["n_real"], seed, n_factors=table.p,
                                   conditioning=cond, engine=_engine(cfg),
                                   node_cap=sim["node_cap"])
        except NotImplementedError as exc:
            raise ConfigError(str(exc)) from None
    with stage("recorrelate"):
        zs = recorrelate(ens, gf)
    with stage("back-transform"):
        tr = node_anamorphoses(table, nodes, cfg["neighborhood"]["l"])
        alr_total = cfg["data"]["total"] if cfg["data"]["compositional"] else None
        names = list(raw_table.names)
        raw = back_transform_grid(zs, tr, alr_total, names)
    with stage("write"):
        width = max(4, len(str(sim["n_real"] - 1)))
        sets = [(REALIZATIONS, raw)]
        if cfg["output"]["write_intermediate"]:
            sets += [("factors", ens), ("scores", zs)]
        for sub, e in sets:
            for r in range(e.n_real):
                p = os.path.join(out, sub, f"real_{r:0{width}d}.csv")
                lio.write_node_table(p, nodes, e.values[r], e.names)
                written.append(p)
        # score-scale field versus the correlation implied by the ensemble
        emp = _ensemble_corr(zs.values)
        rep = {
            "n_real": int(raw.n_real),
            "n_nodes": int(nodes.shape[0]),
            "seed": int(seed),
            "field_vs_score_ensemble_max_abs": float(np.max(np.abs(emp - gf.matrices))),
            "field_vs_raw_ensemble_max_abs": float(
                np.max(np.abs(_ensemble_corr(raw.values) - gf.matrices))
            ) if raw.n_real > 2 else None,
        }
        p = os.path.join(out, "simulation_report.json")
        lio.write_json(p, rep)
        written.append(p)
    return written


def _ensemble_corr(v):
    R, n, p = v.shape
    if R < 3 or p == 1:
        return np.ones((n, p, p)) if p == 1 else np.full((n, p, p), np.nan)
    c = v - v.mean(axis=0)
    cov = np.einsum("rni,rnj->nij", c, c)
    sd = np.sqrt(np.einsum("nii->ni", cov))
    with np.errstate(invalid="ignore", divide="ignore"):
        return cov / sd[:, :, None] / sd[:, None, :]


def _read_ensemble(out):
    files = sorted(glob.glob(os.path.join(out, REALIZATIONS, "real_*.csv")))
    if not files:
        raise ValidationError(f"no realizations found in {os.path.join(out, REALIZATIONS)}")
    vals = []
    coords = names = None
    for f in files:
        c, v, nm = lio.read_node_table(f)
        coords, names = (c, nm) if coords is None else (coords, names)
        vals.append(v)
    return coords, np.stack(vals), names, files


def run_validate(cfg, out, radius=None, test_path=None):
    """Accuracy plot of held-out samples against the raw-unit ensemble."""
    with stage("validate"):
        path = test_path or cfg["data"]["test_samples"]
        if not path:
            raise ConfigError("validate needs [data] test_samples or --test")
        coords, vals, names, _ = _read_ensemble(out)
        test = lio.read_samples(path, names)
        rad = cfg["data"]["link_radius"] if radius is None else radius
        acc = accuracy_plot(vals, test.coords, test.values, rad, node_coords=coords)
        p = os.path.join(out, "accuracy.csv")
        lio.write_csv(p, ["p", *names, "pooled"], acc.rows())
        p2 = os.path.join(out, "accuracy_summary.json")
        lio.write_json(p2, {"n_linked": acc.n_linked, "n_dropped": acc.n_dropped,
                            "link_radius": rad})
    return [p, p2]


def run_cluster(field_path, K, seed, out, init="random", max_iter=100):
    """K-means on a correlation field file."""
    with stage("cluster"):
        fld = lio.read_field(field_path)
        st = kmeans_corr(fld.matrices, K, seed, max_iter, init)
        p = os.path.join(out, "clusters.csv")
        lio.write_field(p, fld, ("cluster", st.assignments))
        p2 = os.path.join(out, "cluster_log.csv")
        lio.write_csv(p2, ["iteration", "objective"],
                      [(i + 1, v) for i, v in enumerate(st.objectives)])
        p3 = os.path.join(out, "cluster_centroids.csv")
        cf = CorrelationField(np.zeros((K, 3)), st.centroids)
        lio.write_field(p3, cf, ("cluster", np.arange(K)))
    return [p, p2, p3]


_SIMILAR = 1.2


def _classify(lam):
    lam = np.maximum(lam, 1e-300)
    if lam[0] / lam[-1] <= _SIMILAR:
        return "isotropic"
    if lam.size == 2:
        return "elongated"
    # lambda1 ~ lambda2 > lambda3 is planar, lambda1 >> lambda2 >= lambda3 elongated
    return "planar" if lam[0] / lam[1] < lam[1] / lam[2] else "elongated"


def _orient(v):
    v = v / np.linalg.norm(v)
    if v[-1] < 0 or (v[-1] == 0 and v[0] < 0):
        v = -v
    return v


def export_ellipses(fld, dims=3):
    """Ellipse/ellipsoid descriptors of the leading ``dims`` variables.

    Returns header and rows: coordinates, descending eigenvalues, axis angles
    in degrees and an anisotropy class (isotropic, planar, elongated).
    For ``dims=2`` the angle is the major-axis direction in ``[0, 180)``;
    for ``dims=3`` azimuth and elevation of the major and minor axes.
    """
    if dims not in (2, 3):
        raise ValidationError("dims must be 2 or 3")
    if fld.p < dims:
        raise ValidationError(f"field has p={fld.p} < dims={dims}")
    lam_names = [f"lambda{k + 1}" for k in range(dims)]
    if dims == 2:
        ang = ["angle1"]
    else:
        ang = ["azimuth1", "elevation1", "azimuth3", "elevation3"]
    header = ["x", "y", "z", *lam_names, *ang, "class"]
    rows = []
    for c, C in zip(fld.coords, fld.matrices):
        w, V = np.linalg.eigh(C[:dims, :dims])
        w, V = w[::-1], V[:, ::-1]
        if dims == 2:
            v = V[:, 0] if V[1, 0] >= 0 else -V[:, 0]
            a = [np.degrees(np.arctan2(v[1], v[0])) % 180.0]
        else:
            a = []
            for k in (0, 2):
                v = _orient(V[:, k])
                a += [np.degrees(np.arctan2(v[1], v[0])) % 360.0,
                      np.degrees(np.arcsin(np.clip(v[2], -1, 1)))]
        rows.append((*c, *w, *a, _classify(w)))
    return header, rows


def run_export_ellipses(field_path, dims, out):
    with stage("export-ellipses"):
        header, rows = export_ellipses(lio.read_field(field_path), dims)
        p = os.path.join(out, "ellipses.csv")
        lio.write_csv(p, header, rows)
    return [p]


def write_manifest(out, command, cfg, seed, inputs, outputs, started, extra=None):
    """Manifest (deterministic) and timing file (wall clock) for a command."""
    out_abs = os.path.abspath(out)
    man = {
        "tool": "lvlmc",
        "version": __version__,
        "command": command,
        "config": echo(cfg, out_abs),
        "seed": int(seed),
        "stage_seeds": {"simulation": int(seed), "cluster": int(seed)},
        "inputs": {os.path.relpath(p, out_abs): lio.file_digest(p)
                   for p in sorted({p for p in inputs if p}) if os.path.exists(p)},
        "outputs": {os.path.relpath(p, out_abs): lio.file_digest(p)
                    for p in sorted(set(outputs))},
    }
    if extra:
        man.update(extra)
    p = os.path.join(out, f"manifest_{command}.json")
    lio.write_json(p, man)
    now = datetime.datetime.now(datetime.timezone.utc).isoformat()
    lio.write_json(os.path.join(out, f"timing_{command}.json"),
                   {"started": started, "finished": now})
    return p


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def run_pipeline(config, out=None, seed=None):
    """Run every stage in order and persist all artifacts.

    Parameters
    ----------
    config : str or dict
        Config file path or a parsed config (see :mod:`lvlmc.config`).
    out : str, optional
        Overrides ``[output] dir``.
    seed : int, optional
        Overrides ``[simulation] seed``.

    Returns
    -------
    dict
        Stage name to list of written files.
    """
    cfg = load_config(config) if isinstance(config, (str, os.PathLike)) else config
    out = out or cfg["output"]["dir"]
    seed = cfg["simulation"]["seed"] if seed is None else int(seed)
    started = _now()
    os.makedirs(out, exist_ok=True)
    arts = {}
    arts["transform"] = run_transform(cfg, out)
    arts["interpolate"] = run_interpolate(cfg, out)
    arts["simulate"] = run_simulate(cfg, out, seed)
    if cfg["data"]["test_samples"]:
        arts["validate"] = run_validate(cfg, out)
    outputs = [p for v in arts.values() for p in v]
    inputs = [cfg["data"]["samples"], cfg["data"]["test_samples"]]
    write_manifest(out, "run", cfg, seed, inputs, outputs, started)
    return arts
