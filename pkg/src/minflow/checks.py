"""Invariant suites run by ``minflow check``.

Every suite returns a list of :class:`CheckResult`; a suite passes when all
of its rows pass.  The random instances are seeded so that reruns report
identical numbers.
"""

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import nonlinearity as nl
from .grid import SIDES, boundary_data, build_grid, green_defect, green_scale
from .oracle import direct_linear_solve
from .saddle import ProblemData, SolverParams, solve_newton, solve_pd
from .stepper import Scenario, run


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    witness: Any = None

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:<44s} {self.value:11.3e}  (limit {self.threshold:.1e})"


def _sine_coef(pos):
    pos = np.atleast_2d(pos)
    return 1.0 + 0.5 * np.sin(2.0 * np.pi * pos[:, 0])


def beta_catalog():
    return {
        "quadratic": nl.quadratic(2.0),
        "quadratic(x)": nl.quadratic(_sine_coef),
        "pme(m=2)": nl.pme(2.0),
        "pme(m=3.5)": nl.pme(3.5, 0.5),
        "stefan": nl.stefan(0.5, 0.3),
        "heleshaw": nl.heleshaw(),
        "sampled": nl.sampled([-1.0, 0.0, 0.5, 2.0], [1.0, 0.0, 0.25, 2.5]),
    }


def cost_catalog():
    return {
        "quadratic(k=2)": nl.quadratic_cost(2.0),
        "quadratic(x)": nl.quadratic_cost(_sine_coef),
        "ppower(p=1.5)": nl.ppower_cost(1.5),
        "ppower(p=3)": nl.ppower_cost(3.0, 0.7),
    }


def _result(name, value, limit, witness=None, lower=False):
    ok = bool(value >= limit) if lower else bool(value <= limit)
    return CheckResult(name, ok and np.isfinite(value), float(value), float(limit), witness)


# -- conjugacy --------------------------------------------------------------

def conjugacy(n=10_000, seed=0):
    """Fenchel-Young, equality on the subgradient graph, Moreau identity."""
    rng = np.random.default_rng(seed)
    out = []
    for name, b in beta_catalog().items():
        pos = rng.random((n, 2))
        c = np.broadcast_to(b.coefficient(pos), (n,))
        r = rng.uniform(-3, 3, n)
        s = rng.uniform(-3, 3, n)
        with np.errstate(invalid="ignore"):
            fy = nl._beta(b, c, r) + nl._beta_conj(b, c, s) - r * s
        fy = np.where(np.isfinite(fy), fy, np.inf)
        i = int(np.argmin(fy))
        out.append(_result(f"beta {name}: Fenchel-Young", fy[i], -1e-9, (r[i], s[i]), lower=True))

        # equality at r selected from d beta*(s)
        lo, hi = nl._beta_conj_subgrad(b, c, s)
        sel = lo + rng.random(n) * (hi - lo)
        eq = np.abs(nl._beta(b, c, sel) + nl._beta_conj(b, c, s) - sel * s) / (1.0 + np.abs(sel * s))
        i = int(np.argmax(eq))
        out.append(_result(f"beta {name}: equality on graph", eq[i], 1e-7, (sel[i], s[i])))

        lam = 10.0 ** rng.uniform(-3, 3, n)
        s10 = rng.uniform(-10, 10, n)
        y = nl._beta_prox(b, c, lam, s10)
        z = nl._beta_conj_prox(b, c, 1.0 / lam, s10 / lam)
        mo = np.abs(y + lam * z - s10)
        i = int(np.argmax(mo))
        out.append(_result(f"beta {name}: Moreau identity", mo[i], 1e-8, (s10[i], lam[i])))

    for name, f in cost_catalog().items():
        pos = rng.random((n, 2))
        k = np.broadcast_to(f.coefficient(pos), (n,))
        A = rng.uniform(-3, 3, (n, 2))
        B = rng.uniform(-3, 3, (n, 2))
        ua, ub = np.linalg.norm(A, axis=1), np.linalg.norm(B, axis=1)
        fy = nl._cost_mag(f, k, ua) + nl._cost_conj_mag(f, k, ub) - np.sum(A * B, axis=1)
        i = int(np.argmin(fy))
        out.append(_result(f"cost {name}: Fenchel-Young", fy[i], -1e-9, (A[i], B[i]), lower=True))

        # A = dF*(B) lies on the graph, so F(A) + F*(B) = A.B
        d = nl._cost_conj_dmag(f, k, ub)
        Ag = (d / np.where(ub > 0, ub, 1.0))[:, None] * B
        eq = np.abs(nl._cost_mag(f, k, np.linalg.norm(Ag, axis=1)) + nl._cost_conj_mag(f, k, ub)
                    - np.sum(Ag * B, axis=1))
        i = int(np.argmax(eq))
        out.append(_result(f"cost {name}: equality on graph", eq[i], 1e-7, B[i]))

        # prox optimality: the residual (A - P) / lam must map back to P under dF*
        lam = 10.0 ** rng.uniform(-3, 3, n)
        v = nl._cost_prox_mag(f, k, lam, ua)
        P = (v / np.where(ua > 0, ua, 1.0))[:, None] * A
        Rm = np.linalg.norm(A - P, axis=1) / lam
        back = nl._cost_conj_dmag(f, k, Rm)
        mo = np.abs(back - v)
        i = int(np.argmax(mo))
        out.append(_result(f"cost {name}: Moreau identity", mo[i], 1e-8, (A[i], lam[i])))
    return out


# -- adjointness ------------------------------------------------------------

ADJOINT_GRIDS = ((1, (4,)), (1, (16,)), (1, (64,)), (2, (4, 4)), (2, (16, 8)), (2, (64, 64)))


def random_labels(rng, dim):
    sides = SIDES[dim]
    while True:
        labels = {s: ("dirichlet" if rng.random() < 0.5 else "neumann") for s in sides}
        if "dirichlet" in labels.values():
            return labels


def adjointness(n_triples=100, seed=0, grids=ADJOINT_GRIDS):
    """Discrete Green identity on random (eta, phi, g) triples."""
    rng = np.random.default_rng(seed)
    out = []
    for dim, counts in grids:
        grid = build_grid(dim, counts, rng.uniform(0.5, 2.0, dim), random_labels(rng, dim))
        worst, wit = 0.0, None
        for _ in range(n_triples):
            eta = rng.normal(size=grid.ncells)
            phi = rng.normal(size=grid.nfaces)
            g = rng.normal(size=grid.nfaces)
            rel = green_defect(grid, eta, phi, g) / green_scale(grid, eta, phi, g)
            if rel > worst:
                worst, wit = rel, counts
        out.append(_result(f"green identity {dim}D {'x'.join(map(str, counts))}", worst, 1e-12, wit))
    return out


# -- duality ----------------------------------------------------------------

def pi_inflow_problem(nx=32):
    """1D unit interval, inflow pi = 1 at x = 0, g = 0 at x = 1, alpha = 0."""
    grid = build_grid(1, (nx,), (1.0,), {"left": "neumann", "right": "dirichlet"})
    bd = boundary_data(grid, g=0.0, pi=1.0)
    return ProblemData(grid=grid, bd=bd, mu=np.zeros(grid.ncells), chi=np.zeros(grid.nfaces),
                       alpha=0, tau_scale=1.0, beta=None, cost=nl.quadratic_cost(1.0))


def random_instance(rng, beta, cost, alpha=1, dim=None, size=(8, 12)):
    """Random mixed-boundary instance with data of unit size."""
    dim = dim or int(rng.integers(1, 3))
    counts = tuple(int(rng.integers(size[0], size[1] + 1)) for _ in range(dim))
    if dim == 2:
        counts = tuple(max(2, n // 2) for n in counts)
    grid = build_grid(dim, counts, rng.uniform(0.5, 1.5, dim), random_labels(rng, dim))
    bd = boundary_data(grid, g=rng.uniform(-0.5, 0.5, grid.nfaces), pi=rng.uniform(-0.5, 0.5, grid.nfaces))
    mu = rng.uniform(-0.5, 0.5, grid.ncells)
    chi = rng.uniform(-0.3, 0.3, grid.nfaces)
    return ProblemData(grid=grid, bd=bd, mu=mu, chi=chi, alpha=alpha,
                       tau_scale=float(rng.uniform(0.05, 1.0)),
                       beta=beta if alpha else None, cost=cost)


def duality(n_random=3, seed=0, tol=1e-8):
    """Strong duality on the inflow fixture and on random instances."""
    out = []
    pd = pi_inflow_problem()
    sol = solve_pd(pd, SolverParams(tol=tol * 0.1))
    out.append(_result("inflow fixture: relative gap", sol.relative_gap, tol))
    out.append(_result("inflow fixture: feasibility", sol.feasibility_residual, tol))
    out.append(_result("inflow fixture: |primal - 0.5|", abs(sol.primal_value - 0.5), 1e-6))
    rng = np.random.default_rng(seed)
    combos = [(bn, b, cn, c, 1) for bn, b in beta_catalog().items() for cn, c in cost_catalog().items()]
    combos += [("none", None, cn, c, 0) for cn, c in cost_catalog().items()]
    for bn, b, cn, c, alpha in combos:
        worst_gap = worst_feas = 0.0
        wit = None
        for _ in range(n_random):
            pd = random_instance(rng, b, c, alpha)
            sol = solve_pd(pd, SolverParams(tol=tol * 0.1))
            if max(sol.relative_gap, sol.feasibility_residual) > max(worst_gap, worst_feas):
                wit = pd.grid.counts
            worst_gap = max(worst_gap, sol.relative_gap)
            worst_feas = max(worst_feas, sol.feasibility_residual)
        out.append(_result(f"{bn} / {cn}: relative gap", worst_gap, tol, wit))
        out.append(_result(f"{bn} / {cn}: feasibility", worst_feas, tol, wit))
    return out


# -- oracle equivalence -----------------------------------------------------

def oracle_equivalence(seed=0, tol=1e-13):
    """solve_pd against the dense linear solve and the Newton oracle."""
    rng = np.random.default_rng(seed)
    out = []
    for dim, counts in ((1, (16,)), (2, (8, 8))):
        grid = build_grid(dim, counts, (1.0,) * dim, random_labels(rng, dim))
        for bname, beta, ref in (("quadratic", nl.quadratic(1.0), "direct"), ("pme(m=2)", nl.pme(2.0), "newton")):
            bd = boundary_data(grid, g=rng.uniform(0, 0.5, grid.nfaces), pi=rng.uniform(-0.5, 0.5, grid.nfaces))
            pd = ProblemData(grid=grid, bd=bd, mu=rng.uniform(0, 1, grid.ncells),
                             chi=rng.uniform(-0.2, 0.2, grid.nfaces), alpha=1, tau_scale=0.1,
                             beta=beta, cost=nl.quadratic_cost(1.0))
            sol = solve_pd(pd, SolverParams(tol=tol))
            rho_ref = direct_linear_solve(pd)[0] if ref == "direct" else solve_newton(pd).rho
            scale = max(1.0, float(np.max(np.abs(rho_ref))))
            err = float(np.max(np.abs(sol.rho - rho_ref))) / scale
            limit = 1e-6 if ref == "direct" else 1e-5
            out.append(_result(f"{bname} {dim}D vs {ref}", err, limit, int(np.argmax(np.abs(sol.rho - rho_ref)))))
    return out


# -- dissipation ------------------------------------------------------------

def _short_runs(seed=0):
    rng = np.random.default_rng(seed)
    grid = build_grid(1, (32,), (1.0,), {"left": "dirichlet", "right": "neumann"})
    x = grid.cell_centers[:, 0]
    yield "quadratic, free decay", Scenario(
        grid=grid, bd=boundary_data(grid), beta=nl.quadratic(), cost=nl.quadratic_cost(),
        rho0=np.sin(np.pi * x) + 0.1 * rng.random(32), T=0.05, tau=0.01, params=SolverParams(tol=1e-9)), True
    yield "pme(m=2), free decay", Scenario(
        grid=grid, bd=boundary_data(grid), beta=nl.pme(2.0), cost=nl.quadratic_cost(),
        rho0=np.maximum(0.0, 1 - 4 * (x - 0.5) ** 2), T=0.05, tau=0.01, params=SolverParams(tol=1e-9)), True
    yield "stefan, sources and inflow", Scenario(
        grid=grid, bd=boundary_data(grid, g=0.2, pi=0.3), beta=nl.stefan(0.5, 0.5), cost=nl.ppower_cost(3.0),
        rho0=np.where(x < 0.5, 1.0, -0.2), T=0.05, tau=0.01, f0=lambda t, X: np.ones(len(X)),
        params=SolverParams(tol=1e-9)), False
    yield "heleshaw, transport", Scenario(
        grid=grid, bd=boundary_data(grid), beta=nl.heleshaw(), cost=nl.quadratic_cost(),
        rho0=0.5 * np.ones(32), T=0.05, tau=0.01, V=lambda t, X: 0.5 * np.ones(len(X)),
        f0=lambda t, X: np.ones(len(X)), params=SolverParams(tol=1e-9)), False


def dissipation(seed=0):
    """Per-step certificates on short evolutions."""
    out = []
    for name, sc, free in _short_runs(seed):
        tr = run(sc)
        m = {k: np.asarray(v[1:], dtype=float) for k, v in tr.monitors.items()}
        scale = m["cert_scale"]
        out.append(_result(f"{name}: mass balance", float(np.max(m["mass_balance_residual"] / scale)), 1e-6))
        out.append(_result(f"{name}: Fenchel gaps",
                           float(np.max(np.maximum(m["beta_gap"], m["cost_gap"]) / scale)), 1e-6))
        slack = float(np.min(m["dissipation_slack"] / m["dissipation_scale"]))
        out.append(_result(f"{name}: dissipation slack", slack, -1e-8, lower=True))
        if free:
            e = np.asarray(tr.monitors["energy"])
            out.append(_result(f"{name}: energy increase", float(np.max(np.diff(e), initial=0.0)), 0.0))
    return out


SUITES = {
    "conjugacy": conjugacy,
    "adjointness": adjointness,
    "duality": duality,
    "oracle-equivalence": oracle_equivalence,
    "dissipation": dissipation,
}
