"""Acceptance criteria 1 to 10.

Each test records a PASS/FAIL line that is printed in the terminal summary
under "acceptance criteria", then asserts the criterion at its stated
tolerance.
"""

import itertools
import os
import time

import numpy as np
import pytest

from lvlmc import matfun
from lvlmc.cli import EXIT_OK, main
from lvlmc.corr import dist_corr, fiber_optimize, frechet_mean_corr_weighted
from lvlmc.kmeans import kmeans_corr
from lvlmc.pipeline import (
    GridSpec,
    SampleTable,
    accuracy_plot,
    back_transform_grid,
    decorrelate,
    estimate_local_correlations,
    interpolate_correlations,
    node_anamorphoses,
    recorrelate,
)
from lvlmc.anamorphosis import NeighborIndex
from lvlmc.simulation import simulate_factors
from lvlmc.spd import dist_spd, exp_map, frechet_mean_weighted, log_map
from lvlmc.variography import (
    VariogramModel,
    default_lag_width,
    experimental_variogram,
    fit_exponential,
    pool_variograms,
)

from conftest import corr2, gaussian_field, random_corr, random_spd, record

TRUE_R = np.array([[1.0, 0.7, -0.5], [0.7, 1.0, 0.2], [-0.5, 0.2, 1.0]])
TRUE_UPPER = TRUE_R[np.triu_indices(3, 1)]
# factor fields: exponential covariance, practical range 6 m, 20% nugget
FIELD_RANGE, FIELD_NUGGET = 6.0, 0.2
SYNTH_SEED = 0
PROBES = np.linspace(0, 399, 10).astype(int)


def synthetic_raw(Z):
    return np.column_stack([np.exp(Z[:, 0]), Z[:, 1] ** 3 + Z[:, 1], 5 + 2 * Z[:, 2]])


@pytest.fixture(scope="module")
def stationary():
    """2000 training and 300 held-out samples of a stationary 3-variable LMC."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(SYNTH_SEED)
    xy = rng.uniform(0, 100, (2300, 2))
    Y = gaussian_field(rng, xy, 3, FIELD_RANGE, FIELD_NUGGET)
    raw = synthetic_raw(Y @ np.linalg.cholesky(TRUE_R).T)
    table = SampleTable.from_arrays(xy[:2000], raw[:2000])
    fld, own = estimate_local_correlations(table, 800, return_scores=True)
    factors = decorrelate(own, fld)
    # 1 m bins resolve the 6 m range; the default (extent / 40 = 3.5 m) does not
    lag = 1.0
    ev = pool_variograms([experimental_variogram(table.coords, factors[:, j], lag, 20)
                          for j in range(3)])
    model = fit_exponential(ev)
    grid = GridSpec((2.5, 2.5, 0.0), (20, 20, 1), (5.0, 5.0, 1.0))
    gf = interpolate_correlations(fld, grid, model, neighbors=16)
    ens = simulate_factors(grid.nodes(), model, 500, seed=42,
                           conditioning=(table.coords, factors))
    zs = recorrelate(ens, gf)
    return {
        "table": table, "test_xy": xy[2000:], "test_raw": raw[2000:], "field": fld,
        "model": model, "grid": grid, "grid_field": gf, "scores": zs,
        "seconds": time.perf_counter() - t0,
    }


def test_criterion_01_manifold_axioms():
    t0 = time.perf_counter()
    worst = {"sym": 0.0, "tri": -np.inf, "aff": 0.0, "exp": 0.0}
    for p in (2, 3, 6):
        rng = np.random.default_rng(1000 + p)
        for _ in range(100):
            A, B, C = (random_spd(rng, p) for _ in range(3))
            dab = dist_spd(A, B)
            worst["sym"] = max(worst["sym"], abs(dab - dist_spd(B, A)))
            worst["tri"] = max(worst["tri"], dist_spd(A, C) - dab - dist_spd(B, C))
            G = rng.standard_normal((p, p)) + 3 * np.eye(p)
            worst["aff"] = max(worst["aff"], abs(dist_spd(G @ A @ G.T, G @ B @ G.T) - dab))
            back = exp_map(A, log_map(A, B))
            worst["exp"] = max(worst["exp"], np.max(np.abs(back - B)))
    secs = time.perf_counter() - t0
    ok = (worst["sym"] <= 1e-9 and worst["tri"] <= 1e-9 and worst["aff"] <= 1e-8
          and worst["exp"] <= 1e-7 and secs < 10)
    record(1, ok, f"symmetry {worst['sym']:.1e}, triangle excess {worst['tri']:.1e}, "
                  f"affine {worst['aff']:.1e}, roundtrip {worst['exp']:.1e}, {secs:.1f} s")
    assert ok


def test_criterion_02_commuting_oracle():
    rng = np.random.default_rng(2)
    worst_d = worst_m = 0.0
    for _ in range(20):
        p = int(rng.integers(2, 6))
        k = int(rng.integers(2, 6))
        lam = np.exp(rng.uniform(-2, 2, (k, p)))
        w = rng.dirichlet(np.ones(k))
        pts = np.stack([np.diag(v) for v in lam])
        d = np.sqrt(np.sum(np.log(lam[1] / lam[0]) ** 2))
        worst_d = max(worst_d, abs(dist_spd(pts[0], pts[1]) - d))
        mean = np.diag(np.exp(w @ np.log(lam)))
        worst_m = max(worst_m, np.max(np.abs(frechet_mean_weighted(pts, w) - mean)))
    ok = worst_d <= 1e-7 and worst_m <= 1e-7
    record(2, ok, f"distance error {worst_d:.1e}, mean error {worst_m:.1e} (20 cases)")
    assert ok


def corr2_oracle(a, b):
    """Quotient distance on Corr(2) from a grid over the common fiber scale."""
    ls = np.linspace(-6, 6, 200_001)
    u = np.log((1 + b) / (1 + a))
    v = np.log((1 - b) / (1 - a))
    return np.sqrt(np.min((ls + u) ** 2 + (ls + v) ** 2))


def test_criterion_03_corr2_brute_force():
    t0 = time.perf_counter()
    xs = np.linspace(-0.9, 0.9, 10)
    worst = 0.0
    monotone = True
    for a in xs:
        for b in xs:
            worst = max(worst, abs(dist_corr(corr2(a), corr2(b)) - corr2_oracle(a, b)))
            res = fiber_optimize(corr2(a), corr2(b))
            monotone &= bool(np.all(np.diff(res.objectives) <= 0))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-4 and monotone and secs < 60
    record(3, ok, f"max |dist - oracle| {worst:.1e} on 10x10 grid, "
                  f"fiber monotone {monotone}, {secs:.1f} s")
    assert ok


def test_criterion_04_algorithm2():
    M = frechet_mean_corr_weighted(np.stack([corr2(-0.4), corr2(0.4)]), [0.5, 0.5])
    worst_rise = -np.inf
    for seed in range(10):
        rng = np.random.default_rng(400 + seed)
        pts = np.stack([random_corr(rng, 3, 0.6) for _ in range(6)])
        w = rng.dirichlet(np.ones(6))
        _, info = frechet_mean_corr_weighted(pts, w, return_info=True)
        if len(info["objectives"]) > 1:
            worst_rise = max(worst_rise, np.max(np.diff(info["objectives"])))
    ok = abs(M[0, 1]) < 1e-6 and worst_rise <= 1e-8
    record(4, ok, f"|mean off-diagonal| {abs(M[0, 1]):.1e}, "
                  f"largest outer objective rise {worst_rise:.1e}")
    assert ok


def perfect_sampler_pass_rate(trials=2000, n_real=200, tol=0.07):
    """How often exact N(0, R) draws pass the per-node check at 10 nodes."""
    rng = np.random.default_rng(5)
    L = np.linalg.cholesky(TRUE_R)
    hits = 0
    for _ in range(trials):
        Z = rng.standard_normal((10, n_real, 3)) @ L.T
        r = np.stack([np.corrcoef(z, rowvar=False)[np.triu_indices(3, 1)] for z in Z])
        hits += np.all(np.abs(r - TRUE_UPPER) <= tol)
    return hits / trials


def test_criterion_05_stationary_pipeline(stationary):
    up = stationary["grid_field"].upper()
    frac = float(np.mean(np.all(np.abs(up - TRUE_UPPER) <= 0.1, axis=1)))
    Z = stationary["scores"].values[:200]
    per_node = np.stack([np.corrcoef(Z[:, i, :], rowvar=False)[np.triu_indices(3, 1)]
                         for i in PROBES])
    within = np.abs(per_node - TRUE_UPPER) <= 0.07
    dev = Z[:, PROBES, :] - Z[:, PROBES, :].mean(axis=0)
    pooled = np.corrcoef(dev.reshape(-1, 3), rowvar=False)[np.triu_indices(3, 1)]
    secs = stationary["seconds"]
    ok = frac >= 0.9 and bool(within.all()) and secs < 300
    base = perfect_sampler_pass_rate()
    record(5, ok, f"interpolated within 0.1 at {frac:.0%} of nodes; per-node rho within "
                  f"0.07 for {int(within.sum())}/30 (node, pair); pooled over probes "
                  f"{np.round(pooled, 3).tolist()}; exact N(0,R) draws pass the per-node "
                  f"check in {base:.1%} of trials; {secs:.0f} s")
    assert frac >= 0.9
    assert secs < 300
    assert np.all(np.abs(pooled - TRUE_UPPER) <= 0.07)
    assert within.all(), (
        f"per-node correlations outside 0.07: {int((~within).sum())} of 30; max deviation "
        f"{np.max(np.abs(per_node - TRUE_UPPER)):.3f}"
    )


def test_criterion_06_zoned():
    rng = np.random.default_rng(6)
    xy = rng.uniform(0, 100, (2000, 2))
    Y = gaussian_field(rng, xy, 2, FIELD_RANGE, FIELD_NUGGET)
    left = xy[:, 0] < 50
    Lp, Lm = np.linalg.cholesky(corr2(0.8)), np.linalg.cholesky(corr2(-0.8))
    Z = np.where(left[:, None], Y @ Lp.T, Y @ Lm.T)
    table = SampleTable.from_arrays(xy, np.column_stack([np.exp(Z[:, 0]), Z[:, 1]]))
    l = 100
    fld, own = estimate_local_correlations(table, l, return_scores=True)
    factors = decorrelate(own, fld)
    lag = default_lag_width(table.coords)
    model = fit_exponential(pool_variograms(
        [experimental_variogram(table.coords, factors[:, j], lag, 20) for j in range(2)]))
    grid = GridSpec((2.5, 2.5, 0.0), (20, 20, 1), (5.0, 5.0, 1.0))
    gf = interpolate_correlations(fld, grid, model, neighbors=16)
    # one neighborhood = median distance to the l-th nearest sample
    index = NeighborIndex(table.coords)
    radius = float(np.median([np.linalg.norm(table.coords[index.query(c, l)[-1]] - c)
                              for c in table.coords[::10]]))
    nodes = grid.nodes()
    interior = np.abs(nodes[:, 0] - 50) >= 2 * radius
    sign = np.where(nodes[:, 0] < 50, 1.0, -1.0)
    hit = np.sign(gf.matrices[:, 0, 1]) == sign
    frac = float(hit[interior].mean())
    ok = frac >= 0.95 and interior.sum() > 0
    record(6, ok, f"sign recovered at {frac:.0%} of {int(interior.sum())} interior nodes "
                  f"(>= {2 * radius:.1f} m from the zone boundary, l={l})")
    assert ok


def calibrated_pass_rate(n_linked, probs, trials=2000, tol=0.1):
    """How often a perfectly calibrated predictor passes the per-variable check.

    True values are exact draws from their predictive distribution, so the
    interval for probability q contains the value when |2U - 1| <= q for the
    uniform rank U. The three variables share the correlation ``TRUE_R``.
    """
    from scipy.stats import norm

    rng = np.random.default_rng(7)
    L = np.linalg.cholesky(TRUE_R)
    hits = 0
    for _ in range(trials):
        u = norm.cdf(rng.standard_normal((n_linked, 3)) @ L.T)
        inside = np.abs(2 * u[None] - 1) <= probs[:, None, None]
        hits += np.all(np.abs(inside.mean(axis=1) - probs[:, None]) <= tol)
    return hits / trials


def test_criterion_07_accuracy_plot(stationary):
    zs = stationary["scores"]
    grid = stationary["grid"]
    tr = node_anamorphoses(stationary["table"], grid.nodes(), 800)
    raw = back_transform_grid(zs, tr)
    acc = accuracy_plot(raw, stationary["test_xy"], stationary["test_raw"], 2.5)
    dev_var = np.abs(acc.proportions - acc.probabilities[:, None])
    dev_pool = np.abs(acc.pooled - acc.probabilities)
    ok = bool(np.all(dev_var <= 0.1) and np.all(dev_pool <= 0.1))
    # diagnostic: same pipeline simulated at the test locations themselves
    table, model = stationary["table"], stationary["model"]
    txy = np.column_stack([stationary["test_xy"], np.zeros(len(stationary["test_xy"]))])
    fld, own = estimate_local_correlations(table, 800, return_scores=True)
    ens = simulate_factors(txy, model, 500, seed=42,
                           conditioning=(table.coords, decorrelate(own, fld)))
    at_site = accuracy_plot(
        back_transform_grid(recorrelate(ens, interpolate_correlations(fld, txy, model, 16)),
                            node_anamorphoses(table, txy, 800)),
        txy, stationary["test_raw"], 1e-9)
    site_dev = np.abs(at_site.proportions - at_site.probabilities[:, None]).max()
    base = calibrated_pass_rate(acc.n_linked, acc.probabilities)
    worst = np.unravel_index(np.argmax(dev_var), dev_var.shape)
    record(7, ok, f"{acc.n_linked} of 300 linked; max |proportion - p| {dev_var.max():.3f} "
                  f"per variable (var{worst[1] + 1} at p={acc.probabilities[worst[0]]:.1f}), "
                  f"{dev_pool.max():.3f} pooled (500 realizations); a perfectly calibrated "
                  f"predictor passes in {base:.1%} of trials; simulated at the 300 test "
                  f"locations instead of linked nodes: {site_dev:.3f} per variable")
    assert ok


def test_criterion_08_variogram_reproduction(stationary):
    nodes = np.column_stack([np.arange(500.0), np.zeros(500), np.zeros(500)])
    worst = {}
    for name, model in (("fitted", stationary["model"]), ("reference", VariogramModel(0, 1, 10))):
        n_lags = int(np.floor(model.range)) + 1
        ens = simulate_factors(nodes, model, 20, seed=8, n_factors=3)
        rel = []
        for j in range(3):
            g = np.mean([experimental_variogram(nodes, ens.values[r, :, j], 1.0, n_lags).gamma
                         for r in range(20)], axis=0)
            ev = experimental_variogram(nodes, ens.values[0, :, j], 1.0, n_lags)
            keep = ~ev.empty & (ev.mean_lags <= model.range)
            rel.append(np.abs(g[keep] / model.gamma(ev.mean_lags[keep]) - 1))
        worst[name] = float(np.max(rel))
    ok = all(v <= 0.15 for v in worst.values())
    m = stationary["model"]
    record(8, ok, f"max relative error at lags <= range: fitted model "
                  f"(nugget {m.nugget:.2f}, range {m.range:.1f} m) {worst['fitted']:.3f}, "
                  f"reference (0, 1, 10 m) {worst['reference']:.3f}")
    assert ok


def test_criterion_09_kmeans():
    rng = np.random.default_rng(9)
    x = np.r_[0.8 + rng.uniform(-0.05, 0.05, 20), -0.8 + rng.uniform(-0.05, 0.05, 20)]
    st = kmeans_corr(np.stack([corr2(v) for v in x]), 2, seed=9)
    truth = (x < 0).astype(int)
    exact = len(set(zip(st.assignments.tolist(), truth.tolist()))) == 2
    monotone = bool(np.all(np.diff(st.objectives) <= 1e-8))
    six = np.r_[x[:3], x[20:23]]
    a = np.arctanh(six)
    best = min(sum(2 * np.sum((a[lab == k] - a[lab == k].mean()) ** 2) for k in (0, 1))
               for lab in (np.r_[0, m] for m in itertools.product([0, 1], repeat=5))
               if 0 < lab.sum() < 6)
    st6 = kmeans_corr(np.stack([corr2(v) for v in six]), 2, seed=9)
    gap = abs(st6.objective - best)
    ok = exact and monotone and gap <= 1e-7
    record(9, ok, f"two-group separation exact {exact}, objective monotone {monotone}, "
                  f"6-point gap to exhaustive optimum {gap:.1e}")
    assert ok


def _tree(d):
    out = {}
    for root, _, files in os.walk(d):
        for f in files:
            if not f.startswith("timing_"):
                p = os.path.join(root, f)
                with open(p, "rb") as fh:
                    out[os.path.relpath(p, d)] = fh.read()
    return out


def test_criterion_10_determinism(tmp_path):
    rng = np.random.default_rng(10)
    xy = rng.uniform(0, 40, (230, 2))
    Z = gaussian_field(rng, xy, 3, FIELD_RANGE, FIELD_NUGGET) @ np.linalg.cholesky(TRUE_R).T
    raw = synthetic_raw(Z)
    for name, rows in (("samples.csv", range(200)), ("test.csv", range(200, 230))):
        with open(tmp_path / name, "w") as fh:
            fh.write("id,x,y,z,a,b,c\n")
            for i in rows:
                fh.write(f"s{i},{xy[i, 0]:.17g},{xy[i, 1]:.17g},0,{raw[i, 0]:.17g},{raw[i, 1]:.17g},"
                         f"{raw[i, 2]:.17g}\n")
    (tmp_path / "run.ini").write_text(
        "[data]\nsamples = samples.csv\ntest_samples = test.csv\n"
        "[neighborhood]\nl = 60\ninterp_neighbors = 8\n"
        "[grid]\norigin = 2, 2, 0\ncounts = 10, 10, 1\nspacing = 4, 4, 1\n"
        "[simulation]\nn_real = 5\nseed = 11\n"
    )
    cfg = str(tmp_path / "run.ini")
    commands = [
        ["transform"], ["interpolate"], ["simulate"], ["validate"],
        ["cluster", "--field", "FIELD", "--k", "3"],
        ["export-ellipses", "--field", "FIELD", "--dims", "3"],
        ["run"],
    ]
    codes, trees = [], []
    for rep in ("a", "b"):
        out = tmp_path / f"out_{rep}"
        field = str(out / "field_samples.csv")
        for cmd in commands:
            cmd = [field if c == "FIELD" else c for c in cmd]
            target = out / "run" if cmd[0] == "run" else out
            codes.append(main(["--config", cfg, "--out", str(target), *cmd]))
        trees.append(_tree(out))
    same = trees[0] == trees[1]
    diff = sorted(k for k in set(trees[0]) | set(trees[1])
                  if trees[0].get(k) != trees[1].get(k))
    ok = all(c == EXIT_OK for c in codes) and same and len(trees[0]) > 0
    record(10, ok, f"{len(trees[0])} files from {len(commands)} commands byte-identical: "
                   f"{same}" + (f"; differing {diff[:5]}" if diff else ""))
    assert all(c == EXIT_OK for c in codes)
    assert same, diff
    assert len(trees[0]) > 0
