"""Command line front end: ``minflow run | check | sweep | norm``.

Exit codes: 0 on success, 1 for invalid input (parse errors, unknown
kinds, failed assumption checks, unsupported solver choices), 2 when a
time step cannot be solved to tolerance.
"""

import argparse
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict

import numpy as np
import scipy

from . import __version__, checks, csvio, dualnorm
from ._kernels import default_backend
from .errors import (InfeasibleDomain, InvalidSpec, MinflowError, SizeMismatch, StepFailure, UnsupportedEntry,
                     ValidationFailure)
from .expressions import Expression
from .nonlinearity import CATALOG_VERSION, validate_assumptions
from .scenario import _path, _section, apply_overrides, field_error, load, make_boundary, make_grid, read_config
from .stepper import run

SERIES_COLUMNS = ("step", "t", "mass", "energy", "gap", "iters", "mass_balance_residual", "dual_increment",
                  "dissipation_ok")
INVALID = (InvalidSpec, ValidationFailure, UnsupportedEntry, SizeMismatch, InfeasibleDomain, ValueError,
           OSError)


def _err(msg):
    print(f"minflow: {msg}", file=sys.stderr)


def _versions():
    return {"minflow": __version__, "catalog": CATALOG_VERSION, "numpy": np.__version__,
            "scipy": scipy.__version__, "python": platform.python_version()}


def _code_for(exc):
    """Exit code of an exception raised while loading or running."""
    if isinstance(exc, StepFailure):
        bad_input = (InvalidSpec, ValidationFailure, UnsupportedEntry, SizeMismatch)
        return 1 if isinstance(exc.cause, bad_input) else 2
    return 1 if isinstance(exc, INVALID) else 2


def _summary(traj):
    m = traj.monitors
    if len(traj.times) < 2:
        return {"completed": 0}
    sl = slice(1, None)
    slack = np.asarray(m["dissipation_slack"][sl]) / np.asarray(m["dissipation_scale"][sl])
    return {
        "completed": len(traj.times) - 1,
        "final_time": traj.times[-1],
        "final_mass": m["mass"][-1],
        "final_energy": m["energy"][-1],
        "total_iterations": int(np.sum(m["iters"])),
        "max_relative_gap": float(np.max(m["rel_gap"][sl])),
        "max_feasibility": float(np.max(m["feasibility"][sl])),
        "max_mass_balance_residual": float(np.max(m["mass_balance_residual"][sl])),
        "max_beta_gap": float(np.max(m["beta_gap"][sl])),
        "max_cost_gap": float(np.max(m["cost_gap"][sl])),
        "max_graph_residual": float(np.max(m["graph_residual"][sl])),
        "min_relative_dissipation_slack": float(np.min(slack)),
        "dissipation_ok": bool(all(m["dissipation_ok"])),
    }


def write_series(path, traj):
    m = traj.monitors
    rows = []
    for i, t in enumerate(traj.times):
        rows.append([i, t, m["mass"][i], m["energy"][i], m["gap"][i], int(m["iters"][i]),
                     m["mass_balance_residual"][i], m["dual_increment"][i], bool(m["dissipation_ok"][i])])
    csvio.write_rows(path, SERIES_COLUMNS, rows)


def execute(loaded, out_dir):
    """Run a loaded scenario, write its outputs, return ``(code, manifest, traj)``."""
    sc = loaded.scenario
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "scenario": loaded.config,
        "resolved": {"algorithm": sc.algorithm, "dim": sc.grid.dim, "counts": list(sc.grid.counts),
                     "lengths": list(sc.grid.lengths), "T": sc.T, "tau": sc.tau, "n_steps": sc.n_steps,
                     "metric_p": sc.p},
        "versions": _versions(),
        "solver": dict(asdict(sc.params), backend_used=sc.params.backend or default_backend()),
    }
    traj, code, message = None, 0, "converged"
    t0 = time.perf_counter()
    try:
        pos = sc.grid.cell_centers[:: max(1, sc.grid.ncells // 49)]
        report = validate_assumptions(sc.beta, sc.cost, sc.cost.p, positions=pos)
        manifest["assumptions"] = report.lines()
        if sc.params.method == "newton" and not sc.beta.differentiable_conjugate:
            raise UnsupportedEntry(f"the Newton solver needs a differentiable conjugate; "
                                   f"{sc.beta.kind} does not have one")
        traj = run(sc)
    except StepFailure as exc:
        traj = exc.trajectory
        code, message = _code_for(exc), str(exc)
    except MinflowError as exc:
        code, message = _code_for(exc), f"{type(exc).__name__}: {exc}"
    outputs = []
    if traj is not None:
        write_series(os.path.join(out_dir, "series.csv"), traj)
        outputs.append("series.csv")
        last = len(traj.times) - 1
        for i in range(len(traj.times)):
            if i % loaded.snapshot_every == 0 or i == last:
                name = f"rho_{i:06d}.csv"
                csvio.write_field(os.path.join(out_dir, name), sc.grid, traj.rho[i])
                outputs.append(name)
        manifest["steps"] = _summary(traj)
        if loaded.exact is not None:
            manifest["error"] = {"norm": loaded.error_norm, "time": traj.times[-1],
                                 "value": loaded.error(traj.times[-1], traj.rho[-1])}
    manifest["outputs"] = outputs
    manifest["wall_seconds"] = time.perf_counter() - t0
    manifest["status"] = {"exit_code": code, "message": message}
    csvio.write_json_atomic(os.path.join(out_dir, "manifest.json"), manifest)
    return code, manifest, traj


def _invalid_manifest(path, overrides, exc):
    """Best effort manifest for a scenario that failed to load."""
    try:
        cfg = apply_overrides(read_config(path), **overrides)
        out = _section(cfg, "output").get("dir")
    except Exception:  # noqa: BLE001  the file itself may be unreadable
        return
    if out:
        base = os.path.dirname(os.path.abspath(path))
        csvio.write_json_atomic(os.path.join(_path(base, str(out)), "manifest.json"), {
            "scenario": cfg, "versions": _versions(),
            "status": {"exit_code": 1, "message": f"{type(exc).__name__}: {exc}"}})


def _out_dir(path, loaded):
    return _path(os.path.dirname(os.path.abspath(path)), loaded.output_dir)


def cmd_run(path, tau=None, nx=None, out=None):
    overrides = {"tau": tau, "nx": nx, "out": out}
    try:
        loaded = load(path, **overrides)
    except (MinflowError, *INVALID) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        _invalid_manifest(path, overrides, exc)
        return 1
    out_dir = out if out is not None else _out_dir(path, loaded)
    code, manifest, _ = execute(loaded, out_dir)
    if code:
        _err(manifest["status"]["message"])
        for line in manifest.get("assumptions", []):
            print(f"  {line}", file=sys.stderr)
    else:
        s = manifest["steps"]
        print(f"{s['completed']} steps to t={s['final_time']:.6g}, {s['total_iterations']} iterations, "
              f"max relative gap {s['max_relative_gap']:.2e}")
        if "error" in manifest:
            print(f"{manifest['error']['norm']} error at t={manifest['error']['time']:.6g}: "
                  f"{manifest['error']['value']:.6e}")
    return code


def cmd_check(suite):
    if suite not in checks.SUITES:
        _err(f"unknown suite {suite!r}; choose from {', '.join(checks.SUITES)}")
        return 1
    rows = checks.SUITES[suite]()
    for r in rows:
        print(r.line())
    failed = [r for r in rows if not r.passed]
    print(f"{len(rows) - len(failed)}/{len(rows)} passed")
    if failed:
        _err(f"first failure: {failed[0].name}, value {failed[0].value:.3e}, witness {failed[0].witness!r}")
        return 1
    return 0


# -- sweep ------------------------------------------------------------------

def sweep_pairs(taus, nxs):
    """Equal-length lists refine together; a single entry is broadcast;
    otherwise the full matrix is swept with tau varying fastest."""
    if len(taus) == len(nxs):
        return list(zip(taus, nxs))
    if len(taus) == 1:
        return [(taus[0], n) for n in nxs]
    if len(nxs) == 1:
        return [(t, nxs[0]) for t in taus]
    return [(t, n) for n in nxs for t in taus]


def restrict(fine, coarse, rho):
    """Average a fine cell field onto a coarse grid of the same domain."""
    ratios = [nf // nc for nf, nc in zip(fine.counts, coarse.counts)]
    if any(nf != r * nc for nf, nc, r in zip(fine.counts, coarse.counts, ratios)):
        raise InvalidSpec("reference grid is not an integer refinement")
    if coarse.dim == 1:
        return rho.reshape(coarse.nx, ratios[0]).mean(axis=1)
    a = rho.reshape(coarse.nx, ratios[0], coarse.ny, ratios[1])
    return a.mean(axis=(1, 3)).ravel()


def _sweep_cell(args):
    path, tau, nx, out_dir = args
    try:
        loaded = load(path, tau=tau, nx=nx, out=out_dir)
    except (MinflowError, *INVALID) as exc:
        return {"tau": tau, "nx": nx, "code": 1, "message": str(exc)}
    code, manifest, traj = execute(loaded, out_dir)
    res = {"tau": tau, "nx": nx, "code": code, "message": manifest["status"]["message"]}
    if code == 0:
        res["rho"] = traj.rho[-1]
        res["error"] = manifest.get("error", {}).get("value")
    return res


def observed_orders(rows):
    """log error ratio over log step ratio between consecutive rows."""
    orders = [None]
    for a, b in zip(rows[:-1], rows[1:]):
        ea, eb = a["error"], b["error"]
        if a["tau"] != b["tau"]:
            ratio = a["tau"] / b["tau"]
        elif a["nx"] != b["nx"]:
            ratio = b["nx"] / a["nx"]
        else:
            ratio = 1.0
        if ratio == 1.0 or not (ea > 0 and eb > 0):
            orders.append(None)
        else:
            orders.append(math.log(ea / eb) / math.log(ratio))
    return orders


def cmd_sweep(path, taus, nxs, out=None, jobs=1):
    try:
        base = load(path)
    except (MinflowError, *INVALID) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return 1
    root = out if out is not None else _out_dir(path, base)
    pairs = sweep_pairs(taus, nxs)
    cells = [(path, t, n, os.path.join(root, f"tau{t:g}_nx{n}")) for t, n in pairs]
    need_ref = base.exact is None
    if need_ref:
        cells.append((path, min(taus) / 2, max(nxs) * 2, os.path.join(root, "reference")))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    bad = [r for r in results if r["code"]]
    if bad:
        for r in bad:
            _err(f"tau={r['tau']:g} nx={r['nx']}: {r['message']}")
        return max(r["code"] for r in bad)
    if need_ref:
        ref = results.pop()
        ref_grid = load(path, tau=ref["tau"], nx=ref["nx"]).scenario.grid
        norm = str((base.config.get("exact") or {}).get("norm", "L2"))
        for r in results:
            grid = load(path, tau=r["tau"], nx=r["nx"]).scenario.grid
            r["error"] = field_error(grid, r["rho"] - restrict(ref_grid, grid, ref["rho"]), norm)
    orders = observed_orders(results)
    header = ["tau", "nx", "error"] + (["observed_order"] if len(results) > 1 else [])
    rows = []
    for r, o in zip(results, orders):
        row = [r["tau"], r["nx"], r["error"]]
        if len(results) > 1:
            row.append("" if o is None else csvio.fmt(o))
        rows.append(row)
    os.makedirs(root, exist_ok=True)
    csvio.write_rows(os.path.join(root, "convergence.csv"), header, rows)
    for r, o in zip(results, orders):
        print(f"tau={r['tau']:<10g} nx={r['nx']:<6d} error={r['error']:.6e}"
              + ("" if o is None else f"  order={o:.3f}"))
    return 0


# -- norm -------------------------------------------------------------------

def load_dual_element(path):
    """Grid and DualElement from a file with grid, boundary, f0, fbar and p."""
    cfg = read_config(path)
    grid = make_grid(cfg)
    bd = make_boundary(cfg, grid, os.path.dirname(os.path.abspath(path)))
    f0 = Expression(cfg.get("f0", 0.0)).on_points(0.0, grid.cell_centers)
    comps = cfg.get("fbar", ["0"] * grid.dim)
    comps = comps if isinstance(comps, (list, tuple)) else [comps]
    if len(comps) != grid.dim:
        raise InvalidSpec(f"fbar needs {grid.dim} component(s)")
    vals = np.column_stack([Expression(c).on_points(0.0, grid.face_centers) for c in comps])
    fbar = vals[np.arange(grid.nfaces), grid.face_axis]
    return grid, bd, dualnorm.DualElement(f0, fbar), cfg.get("p")


def cmd_norm(path, p=None):
    try:
        grid, bd, f, p_file = load_dual_element(path)
        p = float(p if p is not None else (p_file if p_file is not None else 2.0))
        val = dualnorm.dual_norm(grid, bd, f, p)
    except (MinflowError, *INVALID) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return 1
    print(f"{val:.12g}")
    return 0


def _floats(s):
    try:
        return [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of numbers: {s!r}") from None


def _ints(s):
    try:
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of integers: {s!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="minflow", description="Proximal minimum-flow evolution solver.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario file")
    p.add_argument("file")
    p.add_argument("--tau", type=float, help="override time.tau")
    p.add_argument("--nx", type=int, help="override grid.nx (ny scales along)")
    p.add_argument("--out", help="output directory (default: output.dir of the scenario)")

    p = sub.add_parser("check", help="run an invariant suite")
    p.add_argument("suite", choices=sorted(checks.SUITES))

    p = sub.add_parser("sweep", help="refinement study over tau and nx")
    p.add_argument("file")
    p.add_argument("--taus", type=_floats, required=True, help="comma separated time steps")
    p.add_argument("--nxs", type=_ints, required=True, help="comma separated cell counts")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs")

    p = sub.add_parser("norm", help="dual norm of a functional")
    p.add_argument("file")
    p.add_argument("--p", type=float, help="Sobolev exponent (default: p from the file, else 2)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.file, tau=args.tau, nx=args.nx, out=args.out)
    if args.command == "check":
        return cmd_check(args.suite)
    if args.command == "sweep":
        if not args.taus or not args.nxs:
            _err("--taus and --nxs need at least one entry")
            return 1
        return cmd_sweep(args.file, args.taus, args.nxs, out=args.out, jobs=args.jobs)
    return cmd_norm(args.file, p=args.p)


if __name__ == "__main__":
    sys.exit(main())
