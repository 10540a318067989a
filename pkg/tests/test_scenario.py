import json
import textwrap

import numpy as np
import pytest

from minflow import csvio
from minflow.errors import InvalidSpec, SizeMismatch
from minflow.grid import build_grid
from minflow.scenario import apply_overrides, field_error, load, read_config

BASE = """
grid: {dim: 1, nx: 16}
boundary:
  left: {type: dirichlet, g: 0}
  right: {type: neumann, pi: "0.5"}
nonlinearity: {kind: pme, m: 2}
cost: {kind: quadratic}
initial: {rho0: "x*(1-x)"}
time: {T: 0.02, tau: 0.01}
"""


def write(tmp_path, text, name="s.yaml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return str(p)


def test_load_base(tmp_path):
    ld = load(write(tmp_path, BASE))
    sc = ld.scenario
    assert sc.grid.counts == (16,) and sc.beta.kind == "pme" and sc.algorithm == "transport_forcing"
    x = sc.grid.cell_centers[:, 0]
    np.testing.assert_allclose(sc.rho0, x * (1 - x))
    assert sc.bd.pi[sc.grid.neumann][0] == 0.5 and ld.exact is None


def test_algorithm_alias(tmp_path):
    ld = load(write(tmp_path, BASE + "algorithm: B\n"))
    assert ld.scenario.algorithm == "prediction_correction"


def test_overrides_scale_ny():
    cfg = {"grid": {"dim": 2, "nx": 8, "ny": 4}}
    out = apply_overrides(cfg, tau=0.5, nx=32, out="o")
    assert out["grid"] == {"dim": 2, "nx": 32, "ny": 16}
    assert out["time"]["tau"] == 0.5 and out["output"]["dir"] == "o"
    assert cfg["grid"]["nx"] == 8


@pytest.mark.parametrize("patch", [
    "nonlinearity: {kind: magic}\n",
    "cost: {kind: ppower, p: 0.5}\n",
    "initial: {rho0: 'log(x)'}\n",
    "time: {T: 0.01, tau: 0.1}\n",
    "bogus: 1\n",
    "boundary:\n  left: {type: dirichlet, pi: 1}\n  right: {type: neumann, pi: 0}\n",
    "boundary:\n  left: {type: dirichlet, g: 't'}\n  right: {type: dirichlet}\n",
    "solver: {method: bfgs}\n",
])
def test_invalid_scenarios(tmp_path, patch):
    with pytest.raises((InvalidSpec, ValueError)):
        load(write(tmp_path, BASE + patch))


def test_malformed_yaml(tmp_path):
    with pytest.raises(InvalidSpec):
        read_config(write(tmp_path, "grid: [1, 2\n"))


def test_csv_escape_hatch(tmp_path):
    grid = build_grid(1, (16,), (1.0,), {"left": "dirichlet", "right": "neumann"})
    vals = np.linspace(0, 1, 16)
    csvio.write_field(str(tmp_path / "rho0.csv"), grid, vals)
    ld = load(write(tmp_path, BASE + "initial: {rho0: {csv: rho0.csv}}\n"))
    np.testing.assert_array_equal(ld.scenario.rho0, vals)


def test_exact_heat_error(tmp_path):
    text = BASE.replace("kind: pme, m: 2", "kind: quadratic") + "exact: {kind: heat}\n"
    ld = load(write(tmp_path, text))
    x = ld.scenario.grid.cell_centers[:, 0]
    assert ld.error_norm == "L2"
    assert ld.error(0.0, np.sin(np.pi * x)) == pytest.approx(0.0, abs=1e-15)


def test_field_error_norms():
    g = build_grid(1, (4,), (1.0,), {"left": "dirichlet", "right": "dirichlet"})
    d = np.array([1.0, -1.0, 2.0, 0.0])
    assert field_error(g, d, "L1") == pytest.approx(1.0)
    assert field_error(g, d, "L2") == pytest.approx(np.sqrt(6 / 4))
    assert field_error(g, d, "Linf") == 2.0


def test_field_roundtrip_2d(tmp_path):
    g = build_grid(2, (3, 2), (1.0, 1.0), {s: "dirichlet" for s in ("left", "right", "bottom", "top")})
    v = np.arange(6.0) / 7
    p = str(tmp_path / "f.csv")
    csvio.write_field(p, g, v)
    np.testing.assert_array_equal(csvio.read_field(p, g), v)
    header, rows = csvio.read_rows(p)
    assert header[0] == "y\\x" and len(header) == 4 and len(rows) == 2
    with pytest.raises(SizeMismatch):
        csvio.read_field(p, build_grid(1, (4,), (1.0,), {"left": "dirichlet", "right": "dirichlet"}))


def test_csv_format_rules(tmp_path):
    p = tmp_path / "r.csv"
    csvio.write_rows(str(p), ["a", "b", "c", "d"], [[0.1, True, float("nan"), -float("inf")]])
    assert p.read_bytes() == b"a,b,c,d\n0.1,1,nan,-inf\n"


def test_json_is_strict(tmp_path):
    p = tmp_path / "m.json"
    csvio.write_json_atomic(str(p), {"v": float("inf"), "a": np.arange(2)})
    assert json.loads(p.read_text()) == {"v": "inf", "a": [0, 1]}
    assert not [f for f in tmp_path.iterdir() if f.name.endswith(".tmp")]
