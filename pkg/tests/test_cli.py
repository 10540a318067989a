import json
import shutil
import textwrap
from pathlib import Path

import numpy as np
import pytest

from minflow import cli, csvio

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

HEAT = """
grid: {dim: 1, nx: 32}
boundary:
  left: {type: dirichlet, g: 0}
  right: {type: dirichlet, g: 0}
nonlinearity: {kind: quadratic}
cost: {kind: quadratic}
initial: {rho0: "sin(pi*x)"}
time: {T: 0.02, tau: 0.005}
solver: {tol: 1.0e-10}
output: {dir: out, snapshot_every: 2}
exact: {kind: heat}
"""


def write(tmp_path, text, name="s.yaml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return str(p)


def manifest(d):
    return json.loads((Path(d) / "manifest.json").read_text())


def test_run_heat(tmp_path, capsys):
    path = write(tmp_path, HEAT)
    assert cli.main(["run", path]) == 0
    out = tmp_path / "out"
    m = manifest(out)
    assert m["status"]["exit_code"] == 0 and m["error"]["norm"] == "L2"
    assert m["error"]["value"] < 1e-2 and m["versions"]["catalog"]
    header, rows = csvio.read_rows(out / "series.csv")
    assert tuple(header) == cli.SERIES_COLUMNS and len(rows) == 5
    assert sorted(p.name for p in out.glob("rho_*.csv")) == ["rho_000000.csv", "rho_000002.csv",
                                                             "rho_000004.csv"]
    assert "L2 error" in capsys.readouterr().out


def test_run_overrides(tmp_path):
    path = write(tmp_path, HEAT)
    assert cli.main(["run", path, "--tau", "0.01", "--nx", "16", "--out", str(tmp_path / "o2")]) == 0
    m = manifest(tmp_path / "o2")
    assert m["resolved"]["counts"] == [16] and m["resolved"]["n_steps"] == 2


def test_run_zero_scenario(tmp_path):
    assert cli.main(["run", str(SCENARIOS / "zero.yaml"), "--out", str(tmp_path)]) == 0
    _, rows = csvio.read_rows(tmp_path / "series.csv")
    for r in rows:
        assert all(float(v) == 0 for v in r[2:5]) and float(r[6]) == 0 and r[8] == "1"


def test_run_newton_on_heleshaw_is_rejected(tmp_path, capsys):
    assert cli.main(["run", str(SCENARIOS / "heleshaw_newton.yaml"), "--out", str(tmp_path)]) == 1
    assert "UnsupportedEntry" in capsys.readouterr().err
    assert manifest(tmp_path)["status"]["exit_code"] == 1


def test_run_invalid_file_exit_1(tmp_path, capsys):
    path = write(tmp_path, HEAT.replace("quadratic}", "nope}", 1))
    assert cli.main(["run", path]) == 1
    assert "InvalidSpec" in capsys.readouterr().err
    assert manifest(tmp_path / "out")["status"]["exit_code"] == 1


def test_run_failed_assumptions_exit_1(tmp_path, capsys):
    # quadratic energy is too weak for a cubic cost conjugate
    path = write(tmp_path, HEAT.replace("cost: {kind: quadratic}", "cost: {kind: ppower, p: 1.5}"))
    assert cli.main(["run", path]) == 1
    assert "energy" in capsys.readouterr().err


def test_run_not_converged_exit_2(tmp_path):
    path = write(tmp_path, HEAT.replace("tol: 1.0e-10", "tol: 1.0e-14, max_iters: 50"))
    assert cli.main(["run", path]) == 2
    m = manifest(tmp_path / "out")
    assert m["status"]["exit_code"] == 2 and m["steps"]["completed"] == 0


def test_run_is_deterministic(tmp_path):
    path = write(tmp_path, HEAT)
    cli.main(["run", path, "--out", str(tmp_path / "a")])
    cli.main(["run", path, "--out", str(tmp_path / "b")])
    names = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    assert names
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_csv_line_endings(tmp_path):
    cli.main(["run", write(tmp_path, HEAT)])
    data = (tmp_path / "out" / "series.csv").read_bytes()
    assert b"\r" not in data and data.endswith(b"\n")


@pytest.mark.parametrize("suite", ["conjugacy", "adjointness"])
def test_check_suites(suite, capsys):
    assert cli.main(["check", suite]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_check_unknown_suite():
    with pytest.raises(SystemExit):
        cli.main(["check", "nope"])


def test_sweep_heat_orders(tmp_path):
    path = write(tmp_path, HEAT.replace("T: 0.02", "T: 0.04"))
    assert cli.main(["sweep", path, "--taus", "0.02,0.01,0.005", "--nxs", "128", "--out", str(tmp_path / "sw")]) == 0
    header, rows = csvio.read_rows(tmp_path / "sw" / "convergence.csv")
    assert header == ["tau", "nx", "error", "observed_order"]
    errs = [float(r[2]) for r in rows]
    assert errs[0] > errs[1] > errs[2]
    assert rows[0][3] == "" and float(rows[2][3]) >= 0.9


def test_sweep_single_row_has_no_order(tmp_path):
    path = write(tmp_path, HEAT)
    assert cli.main(["sweep", path, "--taus", "0.01", "--nxs", "16", "--out", str(tmp_path / "sw")]) == 0
    header, rows = csvio.read_rows(tmp_path / "sw" / "convergence.csv")
    assert header == ["tau", "nx", "error"] and len(rows) == 1


def test_sweep_self_reference(tmp_path):
    path = write(tmp_path, HEAT.replace("exact: {kind: heat}\n", ""))
    assert cli.main(["sweep", path, "--taus", "0.01,0.005", "--nxs", "16,32", "--out", str(tmp_path / "sw")]) == 0
    _, rows = csvio.read_rows(tmp_path / "sw" / "convergence.csv")
    assert float(rows[0][2]) > float(rows[1][2]) > 0
    assert (tmp_path / "sw" / "reference" / "manifest.json").exists()


def test_sweep_parallel_matches_serial(tmp_path):
    path = write(tmp_path, HEAT)
    args = ["sweep", path, "--taus", "0.01,0.005", "--nxs", "16"]
    assert cli.main(args + ["--out", str(tmp_path / "s1")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "s2"), "--jobs", "2"]) == 0
    a = (tmp_path / "s1" / "convergence.csv").read_bytes()
    assert a == (tmp_path / "s2" / "convergence.csv").read_bytes()


def test_sweep_pairs():
    assert cli.sweep_pairs([1, 2], [3, 4]) == [(1, 3), (2, 4)]
    assert cli.sweep_pairs([1, 2], [3]) == [(1, 3), (2, 3)]
    assert cli.sweep_pairs([1, 2], [3, 4, 5]) == [(1, 3), (2, 3), (1, 4), (2, 4), (1, 5), (2, 5)]


def test_restrict_block_average():
    from minflow.grid import build_grid

    lab = {"left": "dirichlet", "right": "dirichlet"}
    fine, coarse = build_grid(1, (8,), (1.0,), lab), build_grid(1, (4,), (1.0,), lab)
    np.testing.assert_allclose(cli.restrict(fine, coarse, np.arange(8.0)), [0.5, 2.5, 4.5, 6.5])


def test_norm_constant_source(capsys):
    assert cli.main(["norm", str(SCENARIOS / "norm_one.yaml")]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(1 / np.sqrt(12), abs=2e-4)


def test_norm_zero_and_scaling(tmp_path, capsys):
    spec = "grid: {dim: 1, nx: 32}\nboundary: {left: {type: dirichlet}, right: {type: neumann}}\nf0: '%s'\n"
    assert cli.main(["norm", write(tmp_path, spec % "0", "z.yaml")]) == 0
    assert float(capsys.readouterr().out) == 0.0
    cli.main(["norm", write(tmp_path, spec % "sin(x)", "a.yaml"), "--p", "3"])
    a = float(capsys.readouterr().out)
    cli.main(["norm", write(tmp_path, spec % "-2.5*sin(x)", "b.yaml"), "--p", "3"])
    assert float(capsys.readouterr().out) == pytest.approx(2.5 * a, rel=1e-10)


def test_norm_invalid_exit_1(tmp_path):
    path = write(tmp_path, "grid: {dim: 1, nx: 8}\nboundary: {left: {type: dirichlet}, right: {type: dirichlet}}\n"
                           "f0: 'q'\n")
    assert cli.main(["norm", path]) == 1


def test_example_scenarios_load():
    from minflow.scenario import load

    for p in SCENARIOS.glob("*.yaml"):
        if p.name != "norm_one.yaml":
            load(str(p))


def test_console_entry_point():
    exe = shutil.which("minflow")
    if exe is None:
        pytest.skip("package not installed")
    import subprocess

    res = subprocess.run([exe, "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "sweep" in res.stdout
