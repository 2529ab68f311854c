import json

import numpy as np
import pytest

from helmholtz27.cli import main
from helmholtz27.dispersion import WeightTable, gm_weights
from helmholtz27.model import load_field, load_model

SRC = "350,400,400"


def _rows(path):
    return [l for l in path.read_text().splitlines() if l and not l.startswith(("#", "inv_g"))]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["make-model", "--kind", "homogeneous", "--shape", "16,16,16", "--h", "50",
                 "-o", str(d / "hom")]) == 0
    return d


def test_weights_adaptive_has_400_rows(tmp_path):
    assert main(["weights", "--mode", "adaptive", "--step", "0.001", "-o", str(tmp_path / "t.csv")]) == 0
    assert len(_rows(tmp_path / "t.csv")) == 400
    manifest = json.loads((tmp_path / "t.manifest.json").read_text())
    assert manifest["outputs"]["t.csv"] and manifest["config"]["step"] == 0.001
    assert "run_manifest=t.manifest.json" in (tmp_path / "t.csv").read_text()


def test_weights_single_and_joint(tmp_path):
    assert main(["weights", "--mode", "single", "--g", "4", "-o", str(tmp_path / "s.csv")]) == 0
    assert len(_rows(tmp_path / "s.csv")) == 1
    assert main(["weights", "--mode", "joint", "--gs", "4,6,8,10", "-o", str(tmp_path / "j.csv")]) == 0
    table = WeightTable.from_csv(tmp_path / "j.csv")
    assert len(table) == 1
    assert np.array_equal(table.rows[0], gm_weights().as_array())


def test_weights_output_is_deterministic(tmp_path):
    for name in ("a.csv", "b.csv"):
        assert main(["--deterministic", "weights", "--mode", "adaptive", "--step", "0.01",
                     "-o", str(tmp_path / name)]) == 0
    assert _rows(tmp_path / "a.csv") == _rows(tmp_path / "b.csv")


def test_weights_usage_errors(tmp_path):
    assert main(["weights", "--mode", "single", "-o", str(tmp_path / "x.csv")]) == 2
    assert main(["weights", "--mode", "joint", "-o", str(tmp_path / "x.csv")]) == 2
    assert main(["weights", "--mode", "bogus", "-o", str(tmp_path / "x.csv")]) == 2
    assert main(["weights", "--mode", "single", "--g", "1.5", "-o", str(tmp_path / "x.csv")]) == 2


def test_solve_ga_gam_identical_on_homogeneous(workdir):
    common = ["solve", "--model", str(workdir / "hom"), "--freq", "7.5", "--source", SRC, "--npml", "6"]
    assert main(common + ["--variant", "ga", "-o", str(workdir / "ga")]) == 0
    assert main(common + ["--variant", "gam", "-o", str(workdir / "gam")]) == 0
    a, b = load_field(workdir / "ga"), load_field(workdir / "gam")
    assert np.max(np.abs(a.values - b.values)) <= 1e-12 * np.max(np.abs(a.values))
    m = json.loads((workdir / "ga.manifest.json").read_text())
    assert m["stats"]["converged"] and m["weight_table_sha256"]
    assert m["config"]["resolved"]["npml"] == 6 and m["config"]["resolved"]["solver"]["rel_tol"] == 1e-6
    side = json.loads((workdir / "ga.json").read_text())
    assert side["provenance"]["manifest"] == "ga.manifest.json"


def test_invalid_variant_is_usage_error(workdir):
    assert main(["solve", "--model", str(workdir / "hom"), "--freq", "7.5", "--source", SRC,
                 "--variant", "G7", "-o", str(workdir / "x")]) == 2


def test_source_outside_grid_is_usage_error(workdir):
    assert main(["solve", "--model", str(workdir / "hom"), "--freq", "7.5", "--source", "9000,0,0",
                 "-o", str(workdir / "x")]) == 2


def test_missing_model_is_io_error(tmp_path):
    assert main(["solve", "--model", str(tmp_path / "nope"), "--freq", "7.5", "--source", SRC,
                 "-o", str(tmp_path / "x")]) == 4


def test_non_convergence_is_numerical_failure(workdir):
    out = workdir / "short"
    assert main(["solve", "--model", str(workdir / "hom"), "--freq", "7.5", "--source", SRC,
                 "--max-iter", "3", "--residuals", str(workdir / "short_res.csv"), "-o", str(out)]) == 3
    m = json.loads((workdir / "short.manifest.json").read_text())
    assert m["status"].startswith("numerical failure") and m["stats"]["iterations"] == 3
    assert (workdir / "short_res.csv").exists()


def test_reference_and_compare(workdir):
    assert main(["reference", "analytic", "--model", str(workdir / "hom"), "--freq", "7.5",
                 "--source", SRC, "--npml", "6", "-o", str(workdir / "ref")]) == 0
    rep = workdir / "rep.json"
    assert main(["compare", str(workdir / "ref"), str(workdir / "ga"), "--source", SRC,
                 "--profile-axis", "1", "-o", str(rep)]) == 0
    data = json.loads(rep.read_text())
    assert 0.005 < data["err"] < 0.1
    assert data["manifest"] == "rep.manifest.json"
    assert (workdir / "rep.profile_test.csv").exists()
    same = workdir / "same.json"
    assert main(["compare", str(workdir / "ga"), str(workdir / "ga"), "--source", SRC, "-o", str(same)]) == 0
    assert json.loads(same.read_text())["err"] == 0


def test_reference_cbs(workdir):
    assert main(["reference", "cbs", "--model", str(workdir / "hom"), "--freq", "7.5", "--source", SRC,
                 "--npml", "6", "--tol", "1e-6", "-o", str(workdir / "cbs")]) == 0
    m = json.loads((workdir / "cbs.manifest.json").read_text())
    assert m["stats"]["backward_error"] <= 1e-6
    assert main(["compare", str(workdir / "ref"), str(workdir / "cbs"), "--source", SRC,
                 "-o", str(workdir / "cbs_rep.json")]) == 0
    assert json.loads((workdir / "cbs_rep.json").read_text())["err"] < 1e-2
    assert main(["reference", "cbs", "--model", str(workdir / "hom"), "--freq", "7.5", "--source", SRC,
                 "--max-iters", "3", "-o", str(workdir / "cbs_short")]) == 3


def test_wavespeed_flag_is_not_taken_for_config(tmp_path):
    assert main(["make-model", "--kind", "homogeneous", "--shape", "4,4,4", "--h", "50",
                 "--c", "2000", "-o", str(tmp_path / "m")]) == 0
    assert np.all(load_model(tmp_path / "m").c == 2000.0)


def test_analytic_needs_homogeneous_model(tmp_path):
    assert main(["make-model", "--kind", "gradient", "--shape", "5,6,5", "--h", "50",
                 "-o", str(tmp_path / "g")]) == 0
    assert main(["reference", "analytic", "--model", str(tmp_path / "g"), "--freq", "5",
                 "--source", "100,100,100", "-o", str(tmp_path / "r")]) == 2


def test_dispersion_adaptive_brackets_one(tmp_path):
    main(["weights", "--mode", "adaptive", "--step", "0.001", "-o", str(tmp_path / "t.csv")])
    assert main(["dispersion", "--weights", str(tmp_path / "t.csv"), "--g", "4..10",
                 "-o", str(tmp_path / "c.csv")]) == 0
    v = np.loadtxt(tmp_path / "c.csv", delimiter=",", skiprows=1)[:, 3]
    assert v.min() < 1 < v.max() and np.max(np.abs(v - 1)) < 2e-3
    assert main(["dispersion", "--variant", "G4", "--g", "4..10", "-o", str(tmp_path / "g4.csv")]) == 0
    v4 = np.loadtxt(tmp_path / "g4.csv", delimiter=",", skiprows=1)[:, 3]
    assert np.max(np.abs(v4 - 1)) > 1e-2


def test_config_file_defaults_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('[weights]\nmode = "joint"\ngs = [4, 6]\n')
    assert main(["--config", str(cfg), "weights", "-o", str(tmp_path / "a.csv")]) == 0
    m = json.loads((tmp_path / "a.manifest.json").read_text())
    assert m["config"]["mode"] == "joint" and m["config"]["gs"] == [4.0, 6.0]
    assert main(["--config", str(cfg), "weights", "--gs", "4,6,8,10", "-o", str(tmp_path / "b.csv")]) == 0
    m = json.loads((tmp_path / "b.manifest.json").read_text())
    assert m["config"]["gs"] == [4.0, 6.0, 8.0, 10.0]


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[weights]\nunknown_key = 1\n")
    assert main(["--config", str(bad), "weights", "--mode", "single", "--g", "4",
                 "-o", str(tmp_path / "x.csv")]) == 2
    bad.write_text("not = = toml")
    assert main(["--config", str(bad), "weights", "--mode", "single", "--g", "4",
                 "-o", str(tmp_path / "x.csv")]) == 2
    assert main(["--config", str(tmp_path / "missing.toml"), "weights", "--mode", "single", "--g", "4",
                 "-o", str(tmp_path / "x.csv")]) == 4


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == 0
    assert "weights" in capsys.readouterr().out
