import json
import math

import numpy as np
import pytest

from conftest import INPUTS, run_cli
from jsslab import cli


def test_check_flux_exit_codes(tmp_path):
    assert run_cli("check-flux", INPUTS / "scherk.yaml").returncode == cli.EXIT_OK
    p = run_cli("check-flux", INPUTS / "rectangle.yaml", "--out", tmp_path)
    assert p.returncode == cli.EXIT_FALSE
    assert (tmp_path / "flux_report.csv").exists() and "FAIL" in p.stdout.upper()


def test_check_flux_malformed(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema: jss-domain/1\nmetric: {kind: flat}\nH0: zero\n")
    p = run_cli("check-flux", bad)
    assert p.returncode == cli.EXIT_ERROR
    assert "line 3" in p.stderr


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["solve-scherk", "x.yaml"], ["check-flux", "missing.yaml"]])
def test_usage_errors(argv):
    assert cli.main(argv) == cli.EXIT_ERROR


def test_scherk_requires_out():
    assert cli.main(["solve-scherk", str(INPUTS / "scherk.yaml")]) == cli.EXIT_ERROR


def test_rectangle_refused_without_force(tmp_path):
    assert cli.main(["solve-scherk", str(INPUTS / "rectangle.yaml"), "--out", str(tmp_path)]) == cli.EXIT_FALSE
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["dispatch"] is None and man["flux_verdict"] is False


def test_rectangle_forced_records_path(tmp_path):
    rc = cli.main(["solve-scherk", str(INPUTS / "rectangle.yaml"), "--out", str(tmp_path), "--force",
                   "--k-schedule", "1,4,16,64,256", "--h", "0.04"])
    assert rc == cli.EXIT_FALSE
    disp = json.loads((tmp_path / "dispatch.json").read_text())
    assert disp["path"][0] == "CaseBprime_retranslate"
    assert disp["retranslations"] >= 1


def test_solver_failure_exit_code(tmp_path):
    rc = cli.main(["solve-scherk", str(INPUTS / "scherk.yaml"), "--out", str(tmp_path), "--h", "0.1",
                   "--max-iter", "1"])
    assert rc == cli.EXIT_NUMERIC


def test_scherk_run_outputs(scherk_cli_runs):
    assert scherk_cli_runs.codes == [cli.EXIT_OK, cli.EXIT_OK]
    d = scherk_cli_runs.dirs[0]
    man = json.loads((d / "manifest.json").read_text())
    assert man["dispatch"] == "CaseC_solution" and man["mirror"] == "diagonal"
    assert [s["k"] for s in man["solves"]] == [1, 4, 16, 64]
    for s in man["solves"]:
        assert (d / s["file"]).exists()
    tab = np.loadtxt(d / "u_k64.csv", delimiter=",", skiprows=1)
    assert tab.shape[1] == 5 and np.all((tab[:, 4] > 0) & (tab[:, 4] <= 1))
    assert (d / "limit.csv").exists() and (d / "classification.csv").exists()


def test_scherk_runs_byte_identical(scherk_cli_runs):
    a, b = scherk_cli_runs.dirs
    names = sorted(p.name for p in a.iterdir() if p.name != "timings.json")
    assert names == sorted(p.name for p in b.iterdir() if p.name != "timings.json")
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_verify_scherk_runs(scherk_cli_runs, tmp_path):
    a, b = scherk_cli_runs.dirs
    assert cli.main(["verify-uniqueness", str(a), str(b)]) == cli.EXIT_OK
    assert cli.main(["verify-uniqueness", f"{a}:16", f"{b}:64"]) in (cli.EXIT_OK, cli.EXIT_FALSE)
    assert cli.main(["verify-uniqueness", f"{a}:5", str(b)]) == cli.EXIT_ERROR


@pytest.fixture(scope="module")
def radial_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("radial")
    rc = cli.main(["solve-jang-radial", str(INPUTS / "schwarzschild.yaml"), "--out", str(out)])
    return rc, out


def test_jang_radial_run(radial_run):
    rc, out = radial_run
    assert rc == cli.EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["sandwich"]["holds"] and man["sandwich"]["lambda0"] == 8.0
    tab = np.loadtxt(out / "u_t0.0001.csv", delimiter=",", skiprows=1)
    assert tab.shape[1] == 5 and tab[0, 1] < -10


def test_jang_radial_failure(tmp_path):
    rc = cli.main(["solve-jang-radial", str(INPUTS / "schwarzschild.yaml"), "--out", str(tmp_path),
                   "--max-iter", "1"])
    assert rc == cli.EXIT_NUMERIC


def test_horizon_area_command(radial_run, capsys):
    assert cli.main(["horizon-area", str(radial_run[1])]) == cli.EXIT_OK
    line = capsys.readouterr().out.splitlines()[0]
    assert line.startswith("extrapolated flux:")
    assert float(line.split()[-1]) == pytest.approx(16 * math.pi, rel=1e-2)


def test_verify_radial(radial_run, scherk_cli_runs):
    out = radial_run[1]
    assert cli.main(["verify-uniqueness", str(out), str(out)]) == cli.EXIT_OK
    assert cli.main(["verify-uniqueness", str(out), str(scherk_cli_runs.dirs[0])]) == cli.EXIT_ERROR


@pytest.mark.parametrize("name,code", [("interval.yaml", 0), ("drift.yaml", 0), ("horizon_sphere.yaml", 0)])
def test_stability_command(name, code, capsys):
    assert cli.main(["stability", str(INPUTS / name)]) == code
    assert "stable" in capsys.readouterr().out


def test_stability_unstable(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("schema: mots-coeffs/1\nmesh: {kind: interval, length: 1, nodes: 500}\npotential: -20\n")
    assert cli.main(["stability", str(f), "--out", str(tmp_path / "o")]) == cli.EXIT_FALSE
    phi = np.loadtxt(tmp_path / "o" / "eigenfunction.csv", delimiter=",", skiprows=1)[:, 1]
    assert phi[0] == phi[-1] == 0 and np.all(phi[1:-1] > 0) and phi.max() == 1
