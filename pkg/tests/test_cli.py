import csv
import filecmp
import json
import os

import numpy as np
import pytest

from lvlmc.cli import EXIT_INPUT, EXIT_IO, EXIT_NUMERIC, EXIT_OK, build_parser, main
from lvlmc.pipeline import CorrelationField
from lvlmc.workflow import export_ellipses

from conftest import corr2, gaussian_field


def make_samples(path, rng, n, p=2, compositional=False):
    X = rng.uniform(0, 40, (n, 2))
    Z = gaussian_field(rng, X, p, 8.0, 0.2)
    if p > 1:
        Z[:, 1] = 0.6 * Z[:, 0] + 0.8 * Z[:, 1]
    if compositional:
        e = np.exp(0.3 * Z)
        vals = 60 * e / (1 + e.sum(axis=1, keepdims=True))
    else:
        vals = np.column_stack([np.exp(Z[:, 0])] + [Z[:, j] for j in range(1, p)])
    names = ["Ni", "Fe", "Co"][:p]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y", "z", *names])
        for i in range(n):
            w.writerow([f"s{i}", *X[i], 0.0, *vals[i]])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(77)
    make_samples(d / "samples.csv", rng, 150)
    make_samples(d / "test.csv", rng, 40)
    (d / "run.ini").write_text(
        "[data]\nsamples = samples.csv\ntest_samples = test.csv\nlink_radius = 2.5\n"
        "[neighborhood]\nl = 40\ninterp_neighbors = 6\n"
        "[grid]\norigin = 2, 2, 0\ncounts = 5, 5, 1\nspacing = 8, 8, 1\n"
        "[simulation]\nn_real = 4\nseed = 3\n"
    )
    return d


def run(d, *args):
    return main(["--config", str(d / "run.ini"), *args])


def tree(d):
    out = {}
    for root, _, files in os.walk(d):
        for f in files:
            if not f.startswith("timing_"):
                p = os.path.join(root, f)
                out[os.path.relpath(p, d)] = open(p, "rb").read()
    return out


@pytest.fixture(scope="module")
def full_run(workdir):
    out = workdir / "out_a"
    assert run(workdir, "--out", str(out), "run") == EXIT_OK
    return out


class TestRun:
    def test_artifacts(self, full_run):
        names = set(os.listdir(full_run))
        for f in ["scores.csv", "factors.csv", "field_samples.csv", "field_grid.csv",
                  "variogram.csv", "variogram_model.json", "simulation_report.json",
                  "accuracy.csv", "accuracy_summary.json", "manifest_run.json",
                  "timing_run.json", "realizations", "factors", "scores"]:
            assert f in names
        assert len(os.listdir(full_run / "realizations")) == 4
        man = json.loads((full_run / "manifest_run.json").read_text())
        assert man["seed"] == 3 and man["config"]["neighborhood"]["l"] == 40
        assert "../samples.csv" in man["inputs"]
        assert "realizations/real_0000.csv" in man["outputs"]
        rows = (full_run / "scores.csv").read_text().splitlines()
        assert len(rows) == 151

    def test_deterministic(self, workdir, full_run):
        out = workdir / "out_b"
        assert run(workdir, "--out", str(out), "run") == EXIT_OK
        assert tree(full_run) == tree(out)

    def test_seed_changes_realizations(self, workdir, full_run):
        out = workdir / "out_seed"
        assert run(workdir, "--out", str(out), "--seed", "4", "run") == EXIT_OK
        assert not filecmp.cmp(full_run / "realizations" / "real_0000.csv",
                               out / "realizations" / "real_0000.csv", shallow=False)
        assert filecmp.cmp(full_run / "field_grid.csv", out / "field_grid.csv", shallow=False)

    def test_stagewise_equals_run(self, workdir, full_run):
        out = workdir / "out_stages"
        for cmd in ("transform", "interpolate", "simulate", "validate"):
            assert run(workdir, "--out", str(out), cmd) == EXIT_OK
            assert (out / f"manifest_{cmd}.json").exists()
        for f in ("field_grid.csv", "accuracy.csv", "realizations/real_0003.csv"):
            assert filecmp.cmp(full_run / f, out / f, shallow=False)

    def test_flags_after_subcommand(self, workdir):
        out = workdir / "out_flags"
        assert main(["transform", "--config", str(workdir / "run.ini"), "--out", str(out),
                     "--threads", "1"]) == EXIT_OK
        assert (out / "manifest_transform.json").exists()


class TestCommands:
    def test_simulate_two(self, workdir, full_run):
        out = workdir / "out_sim2"
        os.makedirs(out)
        for f in ("factors.csv", "field_grid.csv", "variogram_model.json"):
            (out / f).write_bytes((full_run / f).read_bytes())
        assert run(workdir, "--out", str(out), "simulate", "--n-real", "2") == EXIT_OK
        assert sorted(os.listdir(out / "realizations")) == ["real_0000.csv", "real_0001.csv"]
        man = json.loads((out / "manifest_simulate.json").read_text())
        assert man["config"]["simulation"]["n_real"] == 2

    def test_cluster_k1(self, workdir, full_run):
        out = workdir / "out_k1"
        assert run(workdir, "--out", str(out), "cluster", "--field",
                   str(full_run / "field_samples.csv"), "--k", "1") == EXIT_OK
        with open(out / "clusters.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 150 and {r["cluster"] for r in rows} == {"0"}
        log = (out / "cluster_log.csv").read_text().splitlines()
        assert log[0] == "iteration,objective" and len(log) >= 2

    def test_validate_radius_zero(self, workdir, full_run, capsys):
        out = workdir / "out_a"
        assert run(workdir, "--out", str(out), "validate", "--radius", "0") == EXIT_INPUT
        assert "no test sample lies within 0" in capsys.readouterr().err

    def test_export_ellipses(self, workdir, full_run):
        out = workdir / "out_ell"
        assert run(workdir, "--out", str(out), "export-ellipses", "--field",
                   str(full_run / "field_grid.csv"), "--dims", "2") == EXIT_OK
        lines = (out / "ellipses.csv").read_text().splitlines()
        assert lines[0] == "x,y,z,lambda1,lambda2,angle1,class" and len(lines) == 26

    def test_export_ellipses_p_too_small(self, workdir, full_run):
        code = run(workdir, "--out", str(workdir / "out_e3"), "export-ellipses", "--field",
                   str(full_run / "field_grid.csv"), "--dims", "3")
        assert code == EXIT_INPUT

    def test_dry_run(self, workdir, capsys):
        out = workdir / "out_dry"
        assert run(workdir, "--out", str(out), "--dry-run", "run") == EXIT_OK
        assert "inputs valid" in capsys.readouterr().out
        assert not out.exists()

    def test_dry_run_reports_bad_input(self, tmp_path):
        (tmp_path / "s.csv").write_text("id,x,y,ni\n1,0,0,1\n2,1,1,\n")
        (tmp_path / "c.ini").write_text("[data]\nsamples = s.csv\n")
        assert main(["--config", str(tmp_path / "c.ini"), "--dry-run", "transform"]) == EXIT_INPUT


class TestErrors:
    def test_missing_config(self, tmp_path):
        assert main(["--config", str(tmp_path / "nope.ini"), "transform"]) == EXIT_IO

    def test_unknown_key(self, tmp_path, capsys):
        (tmp_path / "c.ini").write_text("[grid]\ncount = 1, 1, 1\n")
        assert main(["--config", str(tmp_path / "c.ini"), "transform"]) == EXIT_INPUT
        assert "unknown key 'count'" in capsys.readouterr().err

    def test_missing_value(self, tmp_path, capsys):
        (tmp_path / "s.csv").write_text("id,x,y,ni,cu\n1,0,0,1,2\n2,1,1,3,4\n3,2,2,5,NA\n")
        (tmp_path / "c.ini").write_text("[data]\nsamples = s.csv\n")
        code = main(["--config", str(tmp_path / "c.ini"), "--out", str(tmp_path / "o"),
                     "transform"])
        assert code == EXIT_INPUT
        err = capsys.readouterr().err
        assert "line 4" in err and "'cu'" in err and "stage 'read'" in err

    def test_missing_samples_file(self, tmp_path):
        (tmp_path / "c.ini").write_text("[data]\nsamples = gone.csv\n")
        assert main(["--config", str(tmp_path / "c.ini"), "--out", str(tmp_path / "o"),
                     "transform"]) == EXIT_IO

    def test_numerical_exit(self, tmp_path):
        rng = np.random.default_rng(0)
        X = rng.uniform(0, 10, (20, 2))
        v = np.column_stack([rng.standard_normal(20), rng.standard_normal(20)])
        with open(tmp_path / "s.csv", "w") as fh:
            fh.write("id,x,y,a,b\n")
            for i in range(20):
                fh.write(f"{i},{X[i, 0]},{X[i, 1]},{v[i, 0]},{v[i, 1]}\n")
        # a flat variogram cannot be fitted
        (tmp_path / "c.ini").write_text("[data]\nsamples = s.csv\n[neighborhood]\nl = 20\n"
                                        "[variogram]\nlag_width = 100\n")
        assert main(["--config", str(tmp_path / "c.ini"), "--out", str(tmp_path / "o"),
                     "transform"]) == EXIT_NUMERIC

    def test_turning_bands_is_config_error(self, workdir, full_run, tmp_path):
        ini = (workdir / "run.ini").read_text() + "engine = turning-bands\n"
        ini = ini.replace("samples = samples.csv", f"samples = {workdir / 'samples.csv'}")
        (tmp_path / "c.ini").write_text(ini)
        out = tmp_path / "o"
        os.makedirs(out)
        for f in ("factors.csv", "field_grid.csv", "variogram_model.json"):
            (out / f).write_bytes((full_run / f).read_bytes())
        assert main(["--config", str(tmp_path / "c.ini"), "--out", str(out),
                     "simulate"]) == EXIT_INPUT

    def test_parser_requires_command(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestPipelineVariants:
    def test_p1_reduces_to_normal_score_simulation(self, tmp_path):
        rng = np.random.default_rng(5)
        make_samples(tmp_path / "s.csv", rng, 80, p=1)
        (tmp_path / "c.ini").write_text(
            "[data]\nsamples = s.csv\n[neighborhood]\nl = 30\n"
            "[variogram]\nsill = 1\nrange = 8\n"
            "[grid]\norigin = 2, 2, 0\ncounts = 3, 3, 1\nspacing = 10, 10, 1\n"
            "[simulation]\nn_real = 2\n")
        assert main(["--config", str(tmp_path / "c.ini"), "--out", str(tmp_path / "o"),
                     "run"]) == EXIT_OK
        o = tmp_path / "o"
        assert (o / "field_grid.csv").read_text().splitlines()[0] == "x,y,z"
        sc = np.loadtxt(o / "scores.csv", delimiter=",", skiprows=1, usecols=4)
        fa = np.loadtxt(o / "factors.csv", delimiter=",", skiprows=1, usecols=4)
        np.testing.assert_array_equal(sc, fa)
        f = np.loadtxt(o / "factors" / "real_0000.csv", delimiter=",", skiprows=1)
        z = np.loadtxt(o / "scores" / "real_0000.csv", delimiter=",", skiprows=1)
        np.testing.assert_array_equal(f, z)
        assert not (o / "variogram.csv").exists()

    def test_compositional(self, tmp_path):
        rng = np.random.default_rng(6)
        make_samples(tmp_path / "s.csv", rng, 100, p=2, compositional=True)
        (tmp_path / "c.ini").write_text(
            "[data]\nsamples = s.csv\ncompositional = true\n[neighborhood]\nl = 40\n"
            "[variogram]\nsill = 1\nrange = 8\n"
            "[grid]\norigin = 2, 2, 0\ncounts = 3, 3, 1\nspacing = 10, 10, 1\n"
            "[simulation]\nn_real = 3\n[output]\nwrite_intermediate = false\n")
        assert main(["--config", str(tmp_path / "c.ini"), "--out", str(tmp_path / "o"),
                     "run"]) == EXIT_OK
        o = tmp_path / "o"
        assert (o / "alr.csv").exists() and not (o / "factors").exists()
        r = np.loadtxt(o / "realizations" / "real_0002.csv", delimiter=",", skiprows=1)
        assert np.all(r[:, 3:] > 0) and np.all(r[:, 3:].sum(axis=1) <= 100 + 1e-9)


class TestEllipses:
    def test_identity_isotropic(self):
        f = CorrelationField(np.zeros((3, 3)), np.repeat(np.eye(3)[None], 3, 0))
        header, rows = export_ellipses(f, 3)
        assert len(rows) == 3
        for r in rows:
            assert r[-1] == "isotropic"
            np.testing.assert_allclose(r[3:6], 1.0)
        assert header[6:10] == ["azimuth1", "elevation1", "azimuth3", "elevation3"]

    def test_strong_correlation_elongated(self):
        f = CorrelationField(np.zeros((1, 3)), corr2(0.99)[None])
        header, rows = export_ellipses(f, 2)
        np.testing.assert_allclose(rows[0][3:5], [1.99, 0.01], atol=1e-12)
        assert rows[0][5] == pytest.approx(45.0) and rows[0][-1] == "elongated"

    def test_planar(self):
        C = np.array([[1.0, 0.0, 0.6], [0.0, 1.0, 0.6], [0.6, 0.6, 1.0]])
        f = CorrelationField(np.zeros((1, 3)), C[None])
        lam = export_ellipses(f, 3)[1][0][3:6]
        assert lam[0] >= lam[1] >= lam[2]
        C2 = np.array([[1.0, 0.45, 0.45], [0.45, 1.0, -0.45], [0.45, -0.45, 1.0]])
        assert export_ellipses(CorrelationField(np.zeros((1, 3)), C2[None]), 3)[1][0][-1] == "planar"
