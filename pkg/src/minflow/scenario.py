"""Scenario files: YAML text resolved into a :class:`~minflow.stepper.Scenario`.

A scenario is a nested mapping::

    grid: {dim: 1, nx: 64, lx: 1.0}
    boundary:
      left:  {type: dirichlet, g: "0"}
      right: {type: neumann, pi: "0.5"}
    nonlinearity: {kind: pme, m: 2}
    cost: {kind: quadratic, k: "1"}
    transport: {V: ["0.5"]}
    source: {f0: "0", fbar: ["0"]}
    initial: {rho0: "sin(pi*x)"}
    time: {T: 0.1, tau: 0.001}
    algorithm: transport_forcing
    solver: {tol: 1.0e-8, max_iters: 200000, theta: 1.0}
    output: {dir: out, snapshot_every: 10}
    exact: {kind: heat}

Fields given as expressions may instead be ``{csv: path}``; paths are
relative to the scenario file.  Cell fields read the snapshot layout,
boundary values a ``coordinate,value`` profile along the side, and vector
components a cell field that is averaged onto the faces.
"""

import copy
import os
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import yaml

from . import csvio, oracle
from .errors import InvalidSpec
from .expressions import Expression, coefficient_function
from .grid import SIDES, Grid, boundary_data, build_grid
from .nonlinearity import (CostEntry, NonlinearityEntry, heleshaw, pme, ppower_cost, quadratic,
                           quadratic_cost, sampled, stefan)
from .saddle import SolverParams
from .stepper import ALGORITHMS, Scenario

ALGORITHM_ALIASES = {"A": "transport_forcing", "B": "prediction_correction"}
SECTIONS = ("grid", "boundary", "nonlinearity", "cost", "transport", "source", "initial", "time",
            "algorithm", "solver", "output", "exact", "metric", "seed")


@dataclass
class LoadedScenario:
    """A resolved scenario plus the run settings that live outside the stepper."""

    scenario: Scenario
    config: dict
    exact: Optional[Callable]  # (t, pts) -> cell values
    error_norm: str
    output_dir: str
    snapshot_every: int

    def error(self, t, rho):
        """Error of ``rho`` against the exact solution at time ``t``."""
        if self.exact is None:
            return None
        g = self.scenario.grid
        return field_error(g, rho - self.exact(t, g.cell_centers), self.error_norm)


def field_error(grid, diff, norm):
    if norm == "L1":
        return float(np.dot(np.abs(diff), grid.wc))
    if norm == "L2":
        return float(np.sqrt(np.dot(diff * diff, grid.wc)))
    if norm == "Linf":
        return float(np.max(np.abs(diff)))
    raise InvalidSpec(f"unknown error norm {norm!r}")


def read_config(path):
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise InvalidSpec(f"{path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise InvalidSpec(f"{path}: top level must be a mapping")
    return cfg


def apply_overrides(cfg, tau=None, nx=None, out=None):
    """Copy of ``cfg`` with command-line overrides applied.

    Changing ``nx`` on a 2D grid scales ``ny`` by the same factor so the
    cells keep their aspect ratio.
    """
    cfg = copy.deepcopy(cfg)
    if tau is not None:
        cfg.setdefault("time", {})["tau"] = float(tau)
    if nx is not None:
        g = cfg.setdefault("grid", {})
        old = g.get("nx")
        g["nx"] = int(nx)
        if "ny" in g and old:
            g["ny"] = max(1, int(round(g["ny"] * int(nx) / int(old))))
    if out is not None:
        cfg.setdefault("output", {})["dir"] = str(out)
    return cfg


def _section(cfg, name, default=None):
    val = cfg.get(name, default if default is not None else {})
    if val is None:
        val = {}
    if not isinstance(val, dict):
        raise InvalidSpec(f"section {name!r} must be a mapping")
    return val


def _float(d, key, default=None, section=""):
    if key not in d or d[key] is None:
        if default is None:
            raise InvalidSpec(f"missing {section}.{key}")
        return float(default)
    try:
        return float(d[key])
    except (TypeError, ValueError):
        raise InvalidSpec(f"{section}.{key} must be a number, got {d[key]!r}") from None


def make_grid(cfg) -> Grid:
    g = _section(cfg, "grid")
    if "nx" not in g:
        raise InvalidSpec("missing grid.nx")
    dim = int(g.get("dim", 2 if "ny" in g else 1))
    counts = [int(g["nx"])] + ([int(g.get("ny", g["nx"]))] if dim == 2 else [])
    lengths = [_float(g, "lx", 1.0, "grid")] + ([_float(g, "ly", 1.0, "grid")] if dim == 2 else [])
    origin = [_float(g, "ox", 0.0, "grid")] + ([_float(g, "oy", 0.0, "grid")] if dim == 2 else [])
    b = _section(cfg, "boundary")
    labels = {}
    for side in SIDES[dim]:
        entry = b.get(side)
        if not isinstance(entry, dict) or "type" not in entry:
            raise InvalidSpec(f"boundary.{side} needs a type")
        labels[side] = str(entry["type"]).lower()
    extra = set(b) - set(SIDES[dim])
    if extra:
        raise InvalidSpec(f"unknown boundary sides {sorted(extra)} for a {dim}D grid")
    return build_grid(dim, counts, lengths, labels,
                      allow_pure_neumann=bool(g.get("allow_pure_neumann", False)), origin=origin)


def _path(base, p):
    return p if os.path.isabs(p) else os.path.join(base, p)


def _static_expression(src, what):
    e = Expression(src)
    if "t" in e.names:
        raise InvalidSpec(f"{what} must not depend on t")
    return e


def _side_values(grid, side, spec, base, what):
    mask = grid.side_mask(side)
    if isinstance(spec, dict) and "csv" in spec:
        s, v = csvio.read_profile(_path(base, spec["csv"]))
        axis = 1 if side in ("left", "right") else 0
        if grid.dim == 1:
            return mask, np.full(int(mask.sum()), v[0])
        return mask, np.interp(grid.face_centers[mask, axis], s, v)
    e = _static_expression(spec, what)
    return mask, e.on_points(0.0, grid.face_centers[mask])


def make_boundary(cfg, grid, base="."):
    b = _section(cfg, "boundary")
    g = np.zeros(grid.nfaces)
    pi = np.zeros(grid.nfaces)
    for side in SIDES[grid.dim]:
        entry = b[side]
        kind = grid.labels[side]
        key, other, target = ("g", "pi", g) if kind == "dirichlet" else ("pi", "g", pi)
        if other in entry:
            raise InvalidSpec(f"boundary.{side}: {other} given on a {kind} side")
        mask, vals = _side_values(grid, side, entry.get(key, 0.0), base, f"boundary.{side}.{key}")
        target[mask] = vals
    return boundary_data(grid, g=g, pi=pi)


def make_beta(cfg) -> NonlinearityEntry:
    n = dict(_section(cfg, "nonlinearity"))
    kind = str(n.pop("kind", "quadratic"))
    a = coefficient_function(n.pop("a", n.pop("coef", None)))
    if kind == "quadratic":
        out = quadratic(a)
    elif kind == "pme":
        out = pme(_float(n, "m", section="nonlinearity"), a)
        n.pop("m")
    elif kind == "stefan":
        out = stefan(_float(n, "a1", 0.0, "nonlinearity"), _float(n, "a2", 0.0, "nonlinearity"), a)
        n.pop("a1", None)
        n.pop("a2", None)
    elif kind == "heleshaw":
        out = heleshaw(a)
    elif kind == "sampled":
        out = sampled(n.pop("knots", None), n.pop("values", None), a)
    else:
        raise InvalidSpec(f"unknown nonlinearity kind {kind!r}")
    if n:
        raise InvalidSpec(f"unknown nonlinearity parameters {sorted(n)} for {kind}")
    return out


def make_cost(cfg) -> CostEntry:
    c = dict(_section(cfg, "cost"))
    kind = str(c.pop("kind", "quadratic"))
    k = coefficient_function(c.pop("k", None))
    if kind == "quadratic":
        p = c.pop("p", 2.0)
        if float(p) != 2.0:
            raise InvalidSpec("the quadratic cost has p = 2")
        out = quadratic_cost(k)
    elif kind == "ppower":
        out = ppower_cost(_float(c, "p", section="cost"), k)
        c.pop("p")
    else:
        raise InvalidSpec(f"unknown cost kind {kind!r}")
    if c:
        raise InvalidSpec(f"unknown cost parameters {sorted(c)}")
    return out


def _cell_field(spec, grid, base, what, exact=None):
    if isinstance(spec, dict) and "csv" in spec:
        vals = csvio.read_field(_path(base, spec["csv"]), grid)
        return lambda t, pts: vals
    if isinstance(spec, str) and spec.strip() == "exact":
        if exact is None:
            raise InvalidSpec(f"{what}: 'exact' needs an exact section")
        return exact
    e = Expression(spec)
    return lambda t, pts: e.on_points(t, pts)


def _vector_field(spec, grid, base, what):
    if spec is None:
        return None
    comps = spec if isinstance(spec, (list, tuple)) else [spec]
    if len(comps) != grid.dim:
        raise InvalidSpec(f"{what} needs {grid.dim} component(s), got {len(comps)}")
    fns = []
    for k, comp in enumerate(comps):
        if isinstance(comp, dict) and "csv" in comp:
            cells = csvio.read_field(_path(base, comp["csv"]), grid)
            lo, hi = grid.face_lo, grid.face_hi
            a = np.where(lo >= 0, cells[np.maximum(lo, 0)], np.nan)
            b = np.where(hi >= 0, cells[np.maximum(hi, 0)], np.nan)
            faces = np.where(np.isnan(a), b, np.where(np.isnan(b), a, 0.5 * (a + b)))
            fns.append(lambda t, pts, faces=faces: faces if len(pts) == grid.nfaces else None)
        else:
            e = Expression(comp)
            fns.append(lambda t, pts, e=e: e.on_points(t, pts))

    def fn(t, pts):
        cols = [f(t, pts) for f in fns]
        if any(c is None for c in cols):
            raise InvalidSpec(f"{what}: sampled components are only defined on faces")
        return np.column_stack(cols)
    return fn


def make_exact(cfg):
    ex = cfg.get("exact")
    if ex is None:
        return None, "L2"
    if not isinstance(ex, dict) or "kind" not in ex:
        raise InvalidSpec("exact needs a kind")
    kind = ex["kind"]
    norm = str(ex.get("norm", "L1" if kind == "barenblatt" else "L2"))
    if norm not in ("L1", "L2", "Linf"):
        raise InvalidSpec(f"unknown error norm {norm!r}")
    if kind == "heat":
        return (lambda t, pts: oracle.heat_exact(t, np.asarray(pts)[:, 0])), norm
    if kind == "barenblatt":
        m = _float(ex, "m", section="exact")
        mass = _float(ex, "mass", 1.0, "exact")
        t0 = _float(ex, "t0", 1.0, "exact")
        x0 = _float(ex, "x0", 0.0, "exact")
        return (lambda t, pts: oracle.barenblatt(t0 + t, np.asarray(pts)[:, 0] - x0, m, mass)), norm
    if kind == "expression":
        e = Expression(ex.get("rho", "0"))
        return (lambda t, pts: e.on_points(t, pts)), norm
    raise InvalidSpec(f"unknown exact kind {kind!r}")


def make_params(cfg) -> SolverParams:
    s = dict(_section(cfg, "solver"))
    known = {"tol", "max_iters", "theta", "tau", "sigma", "check_every", "adaptive", "backend", "method"}
    bad = set(s) - known
    if bad:
        raise InvalidSpec(f"unknown solver settings {sorted(bad)}")
    try:
        return SolverParams(
            tol=float(s.get("tol", 1e-8)),
            max_iters=int(s.get("max_iters", 200_000)),
            theta=float(s.get("theta", 1.0)),
            tau=None if s.get("tau") is None else float(s["tau"]),
            sigma=None if s.get("sigma") is None else float(s["sigma"]),
            check_every=int(s.get("check_every", 50)),
            adaptive=bool(s.get("adaptive", True)),
            backend=s.get("backend"),
            method=str(s.get("method", "pdhg")),
        )
    except ValueError as exc:
        raise InvalidSpec(f"solver: {exc}") from None


def load(source, tau=None, nx=None, out=None) -> LoadedScenario:
    """Resolve a scenario from a path or an already parsed mapping."""
    if isinstance(source, (str, os.PathLike)):
        base = os.path.dirname(os.path.abspath(source))
        cfg = read_config(source)
    else:
        base, cfg = ".", source
    cfg = apply_overrides(cfg, tau=tau, nx=nx, out=out)
    unknown = set(cfg) - set(SECTIONS)
    if unknown:
        raise InvalidSpec(f"unknown scenario sections {sorted(unknown)}")
    grid = make_grid(cfg)
    bd = make_boundary(cfg, grid, base)
    beta, cost = make_beta(cfg), make_cost(cfg)
    exact, norm = make_exact(cfg)

    init = _section(cfg, "initial")
    if "rho0" not in init:
        raise InvalidSpec("missing initial.rho0")
    rho0 = np.asarray(_cell_field(init["rho0"], grid, base, "initial.rho0", exact)(0.0, grid.cell_centers),
                      dtype=float)
    rho0 = np.broadcast_to(rho0, (grid.ncells,)).copy()

    tr = _section(cfg, "transport")
    src = _section(cfg, "source")
    V = _vector_field(tr.get("V"), grid, base, "transport.V")
    fbar = _vector_field(src.get("fbar"), grid, base, "source.fbar")
    f0 = None if src.get("f0") is None else _cell_field(src["f0"], grid, base, "source.f0")

    tm = _section(cfg, "time")
    alg = str(cfg.get("algorithm", "transport_forcing"))
    alg = ALGORITHM_ALIASES.get(alg, alg)
    if alg not in ALGORITHMS:
        raise InvalidSpec(f"unknown algorithm {alg!r}")
    outp = _section(cfg, "output")
    metric = _section(cfg, "metric")
    every = int(outp.get("snapshot_every", 1))
    if every < 1:
        raise InvalidSpec("output.snapshot_every must be positive")

    sc = Scenario(grid=grid, bd=bd, beta=beta, cost=cost, rho0=rho0,
                  T=_float(tm, "T", section="time"), tau=_float(tm, "tau", section="time"),
                  V=V, f0=f0, fbar=fbar, algorithm=alg, params=make_params(cfg),
                  snapshot_every=every,
                  p=None if metric.get("p") is None else float(metric["p"]),
                  track_increments=bool(metric.get("increments", True)))
    return LoadedScenario(scenario=sc, config=cfg, exact=exact, error_norm=norm,
                          output_dir=str(outp.get("dir", "out")), snapshot_every=every)
