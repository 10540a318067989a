"""Time stepping for d_t rho - div(phi + rho V) = f with phi = dF*(grad eta).

Two drivers are provided.

``transport_forcing``
    Each step solves one proximal problem with the transport frozen at the
    previous state: ``mu = rho^{i-1} + tau f0^i`` and forcing flux
    ``chi = rho^{i-1}_up V^i + fbar^i``, where ``rho_up`` is the donor-cell
    face value for the physical velocity ``-V``.
``prediction_correction``
    First advects ``rho^{i-1}`` with velocity ``-V^i`` over the full step
    (explicit donor cell, sub-cycled), then solves the proximal problem
    without transport, ``chi = fbar^i``.

Inputs are averaged over each step with 4-point Gauss-Legendre quadrature.
Time-dependent fields are callables ``fn(t, X)`` with ``X`` of shape
``(n, dim)``; scalars return ``(n,)``, vectors ``(n, dim)``.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import dualnorm
from .errors import InfeasibleDomain, InvalidSpec, NotConverged, StepFailure
from .grid import BoundaryData, Grid, upwind_advect, upwind_face_values
from .nonlinearity import CostEntry, NonlinearityEntry, _beta, _beta_conj_subgrad
from .saddle import ProblemData, SolverParams, residuals, solve_newton, solve_pd

ALGORITHMS = ("transport_forcing", "prediction_correction")
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


@dataclass
class Scenario:
    """Everything needed to run one evolution.

    ``V``, ``f0`` and ``fbar`` may be ``None`` (zero).  ``p`` is the
    exponent of the metric used for the dual-norm increments and defaults
    to the exponent of the cost.
    """

    grid: Grid
    bd: BoundaryData
    beta: NonlinearityEntry
    cost: CostEntry
    rho0: np.ndarray
    T: float
    tau: float
    V: Optional[Callable] = None
    f0: Optional[Callable] = None
    fbar: Optional[Callable] = None
    algorithm: str = "transport_forcing"
    params: SolverParams = field(default_factory=lambda: SolverParams(tol=1e-6))
    snapshot_every: int = 1
    p: Optional[float] = None
    track_increments: bool = True
    cfl: float = 0.5

    def __post_init__(self):
        self.rho0 = self.grid.check_cells(self.rho0, "rho0").copy()
        if not self.T > 0 or not 0 < self.tau <= self.T * (1 + 1e-12):
            raise InvalidSpec("need T > 0 and 0 < tau <= T")
        if self.algorithm not in ALGORITHMS:
            raise InvalidSpec(f"unknown algorithm {self.algorithm!r}")
        c = np.broadcast_to(self.beta.coefficient(self.grid.cell_centers), (self.grid.ncells,))
        bad = ~np.isfinite(_beta(self.beta, c, self.rho0))
        if bad.any():
            cell = int(np.flatnonzero(bad)[0])
            raise InfeasibleDomain(f"rho0 leaves the domain of beta in cell {cell}", witness=cell)
        if self.p is None:
            self.p = self.cost.p

    @property
    def n_steps(self):
        return max(1, math.ceil(self.T / self.tau - 1e-9))

    def time(self, i):
        return min(i * self.tau, self.T) if i < self.n_steps else self.T

    @property
    def c_cells(self):
        return np.broadcast_to(self.beta.coefficient(self.grid.cell_centers), (self.grid.ncells,))


@dataclass
class StepRecord:
    """Data of one accepted step kept for the monitors."""

    tau: float
    rho_ref: np.ndarray  # state the proximal step started from
    f0: np.ndarray
    V: np.ndarray
    fbar: np.ndarray
    chi: np.ndarray
    rho_up: Optional[np.ndarray]  # donor values used in chi (transport-forcing only)
    eta: Optional[np.ndarray] = None
    phi: Optional[np.ndarray] = None


@dataclass
class Trajectory:
    grid: Grid
    bd: BoundaryData
    beta: NonlinearityEntry
    algorithm: str
    inflow: Optional[np.ndarray] = None
    times: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    eta: list = field(default_factory=list)
    phi: list = field(default_factory=list)
    records: list = field(default_factory=list)
    monitors: dict = field(default_factory=lambda: {k: [] for k in MONITOR_KEYS})

    def __len__(self):
        return len(self.times)


MONITOR_KEYS = (
    "mass", "energy", "gap", "rel_gap", "iters", "mass_balance_residual", "dual_increment",
    "dissipation_ok", "dissipation_lhs", "dissipation_rhs", "dissipation_slack", "dissipation_scale",
    "feasibility", "beta_gap", "cost_gap", "graph_residual", "cert_scale",
)


# -- inputs -----------------------------------------------------------------

def _eval_scalar(fn, t, pts, n):
    if fn is None:
        return np.zeros(n)
    return np.broadcast_to(np.asarray(fn(t, pts), dtype=float), (n,)).astype(float)


def _eval_normal(fn, t, grid):
    if fn is None:
        return np.zeros(grid.nfaces)
    vals = np.asarray(fn(t, grid.face_centers), dtype=float)
    if vals.ndim == 0 or (vals.ndim == 1 and grid.dim == 1):
        return np.broadcast_to(vals, (grid.nfaces,)).astype(float)
    vals = np.broadcast_to(vals, (grid.nfaces, grid.dim))
    return vals[np.arange(grid.nfaces), grid.face_axis].astype(float)


def average_inputs(scenario: Scenario, i: int):
    """Gauss-Legendre averages of (V, f0, fbar) over ``]t_{i-1}, t_i]``.

    Exact for polynomials in t of degree at most 7.
    """
    if not 1 <= i <= scenario.n_steps:
        raise IndexError(f"step {i} outside 1..{scenario.n_steps}")
    grid = scenario.grid
    t0, t1 = scenario.time(i - 1), scenario.time(i)
    ts = 0.5 * (t1 - t0) * _GL_NODES + 0.5 * (t0 + t1)
    ws = 0.5 * _GL_WEIGHTS
    Vi = sum(w * _eval_normal(scenario.V, t, grid) for t, w in zip(ts, ws))
    f0i = sum(w * _eval_scalar(scenario.f0, t, grid.cell_centers, grid.ncells) for t, w in zip(ts, ws))
    fbi = sum(w * _eval_normal(scenario.fbar, t, grid) for t, w in zip(ts, ws))
    return Vi, f0i, fbi


def boundary_density(scenario: Scenario):
    """Density in equilibrium with the Dirichlet data: the point of
    ``d beta*(g)`` closest to 0, one entry per face (NaN off Dirichlet)."""
    grid = scenario.grid
    c = np.broadcast_to(scenario.beta.coefficient(grid.face_centers), (grid.nfaces,))
    lo, hi = _beta_conj_subgrad(scenario.beta, c, scenario.bd.g)
    state = np.clip(0.0, lo, hi)
    return np.where(grid.dirichlet, state, np.nan)


# -- single steps -----------------------------------------------------------

def _solve_step(scenario, pd, warm, i):
    if scenario.params.method == "newton":
        return solve_newton(pd, tol=scenario.params.tol)
    try:
        return solve_pd(pd, scenario.params, init=warm)
    except NotConverged as exc:
        raise NotConverged(f"step {i}: {exc}", solution=exc.solution, history=exc.history) from exc


def step_transport_forcing(scenario: Scenario, i: int, rho_prev, warm=None):
    """One step with transport frozen at ``rho_prev``.

    Returns
    -------
    rho, eta, phi : ndarray
    solution : SaddleSolution
    """
    return _transport_forcing(scenario, i, rho_prev, warm)[:4]


def _transport_forcing(scenario, i, rho_prev, warm):
    grid = scenario.grid
    tau = scenario.time(i) - scenario.time(i - 1)
    Vi, f0i, fbi = average_inputs(scenario, i)
    rho_prev = grid.check_cells(rho_prev, "rho_prev")
    rho_up = upwind_face_values(grid, rho_prev, -Vi, boundary_density(scenario))
    chi = rho_up * Vi + fbi
    pd = ProblemData(grid=grid, bd=scenario.bd, mu=rho_prev + tau * f0i, chi=chi, alpha=1,
                     tau_scale=tau, beta=scenario.beta, cost=scenario.cost)
    sol = _solve_step(scenario, pd, warm, i)
    rec = StepRecord(tau=tau, rho_ref=rho_prev.copy(), f0=f0i, V=Vi, fbar=fbi, chi=chi, rho_up=rho_up)
    return sol.rho, sol.eta, sol.phi, sol, rec, pd


def predict(scenario: Scenario, rho, Vi, tau):
    """Donor-cell transport by ``-Vi`` over ``tau``, sub-cycled at the CFL limit."""
    grid = scenario.grid
    vmax = float(np.max(np.abs(Vi))) if Vi.size else 0.0
    if vmax == 0.0:
        return np.array(rho, dtype=float)
    nsub = max(1, math.ceil(tau * vmax / (scenario.cfl * min(grid.h)) - 1e-12))
    dt = tau / nsub
    state = boundary_density(scenario)
    out = np.array(rho, dtype=float)
    for _ in range(nsub):
        out = upwind_advect(grid, out, -Vi, dt, cfl_limit=scenario.cfl, boundary_state=state)
    return out


def step_prediction_correction(scenario: Scenario, i: int, rho_prev, warm=None):
    """Advect, then relax by the proximal problem without transport.

    Returns
    -------
    rho, eta, phi : ndarray
    solution : SaddleSolution
    """
    return _prediction_correction(scenario, i, rho_prev, warm)[:4]


def _prediction_correction(scenario, i, rho_prev, warm):
    grid = scenario.grid
    tau = scenario.time(i) - scenario.time(i - 1)
    Vi, f0i, fbi = average_inputs(scenario, i)
    rho_half = predict(scenario, grid.check_cells(rho_prev, "rho_prev"), Vi, tau)
    pd = ProblemData(grid=grid, bd=scenario.bd, mu=rho_half + tau * f0i, chi=fbi, alpha=1,
                     tau_scale=tau, beta=scenario.beta, cost=scenario.cost)
    sol = _solve_step(scenario, pd, warm, i)
    rec = StepRecord(tau=tau, rho_ref=rho_half, f0=f0i, V=Vi, fbar=fbi, chi=fbi.copy(), rho_up=None)
    return sol.rho, sol.eta, sol.phi, sol, rec, pd


# -- monitors ---------------------------------------------------------------

def _mass_balance(grid, bd, rec, rho):
    a = grid.face_area
    inflow = (np.dot(rec.f0, grid.wc)
              + np.sum((bd.pi * a)[grid.neumann])
              + np.sum((grid.nu * (rec.phi + rec.chi) * a)[grid.dirichlet]))
    return abs(float(np.dot(rho - rec.rho_ref, grid.wc) - rec.tau * inflow))


def _dissipation(grid, bd, beta, c, rec, rho):
    eta, phi = rec.eta, rec.phi
    free = grid.free_index
    wf = grid.wf[free]
    g0 = grid.G_free @ eta
    e_new = float(np.dot(_beta(beta, c, rho), grid.wc))
    e_old = float(np.dot(_beta(beta, c, rec.rho_ref), grid.wc))
    diss = float(np.dot(phi[free] * g0, wf))
    lhs = e_new - e_old + rec.tau * diss
    t_f0 = float(np.dot(rec.f0 * eta, grid.wc))
    t_chi = float(np.dot(rec.chi[free] * g0, wf))
    t_pi = float(np.sum((bd.pi * eta[grid.face_cell] * grid.face_area)[grid.neumann]))
    rhs = rec.tau * (t_f0 - t_chi + t_pi)
    scale = max(1.0, abs(e_new) + abs(e_old) + rec.tau * (abs(diss) + abs(t_f0) + abs(t_chi) + abs(t_pi)))
    return lhs, rhs, scale


def monitor_mass_balance(traj: Trajectory, i: int) -> float:
    """Mass change minus sources and boundary fluxes over step ``i``.

    For the prediction-correction driver the reference state is the
    advected one, so this measures the balance of the proximal step.
    """
    rec = traj.records[i - 1]
    if rec.phi is None:
        return traj.monitors["mass_balance_residual"][i]
    return _mass_balance(traj.grid, traj.bd, rec, traj.rho[i])


def monitor_dissipation(traj: Trajectory, i: int):
    """``(lhs, rhs, flag)`` of the discrete energy-dissipation inequality.

    With ``g~ = 0`` inside the cells the inequality reads

        sum (beta(rho^i) - beta(rho_ref)) w + tau sum phi grad0 eta w_f
          <= tau [ sum f0 eta w - sum chi grad0 eta w_f + sum_N pi eta a ],

    and the flag allows a slack of 1e-8 times the size of the terms.
    """
    rec = traj.records[i - 1]
    if rec.eta is None:
        m = traj.monitors
        return m["dissipation_lhs"][i], m["dissipation_rhs"][i], m["dissipation_ok"][i]
    c = np.broadcast_to(traj.beta.coefficient(traj.grid.cell_centers), (traj.grid.ncells,))
    lhs, rhs, scale = _dissipation(traj.grid, traj.bd, traj.beta, c, rec, traj.rho[i])
    return lhs, rhs, bool(lhs <= rhs + 1e-8 * scale)


def weak_residual(traj: Trajectory, xi, window=None) -> float:
    """Summed defect of the weak formulation tested with ``xi``.

    Each step contributes

        sum (rho^i - rho^{i-1}) xi w + tau [ sum (phi + rho^i_up V + fbar) grad0 xi w_f
                                             - sum f0 xi w - sum_N pi xi a ]

    with the transport evaluated at the new state, so the scheme's explicit
    transport shows up as an O(tau) defect.  ``xi`` vanishes on the
    Dirichlet boundary through the homogeneous gradient.
    """
    grid = traj.grid
    xi = grid.check_cells(xi, "xi")
    free = grid.free_index
    wf = grid.wf[free]
    g0 = grid.G_free @ xi
    i0, i1 = window if window is not None else (1, len(traj.times) - 1)
    total = 0.0
    for i in range(i0, i1 + 1):
        rec = traj.records[i - 1]
        if rec.phi is None:
            raise ValueError(f"step {i} was thinned; keep fields to evaluate the weak residual")
        rho, rho_old = traj.rho[i], traj.rho[i - 1]
        V = rec.V
        up = upwind_face_values(grid, rho, -V, traj.inflow) if np.any(V) else np.zeros(grid.nfaces)
        flux = rec.phi + up * V + rec.fbar
        d = (float(np.dot((rho - rho_old) * xi, grid.wc))
             + rec.tau * (float(np.dot(flux[free] * g0, wf))
                          - float(np.dot(rec.f0 * xi, grid.wc))
                          - float(np.sum((traj.bd.pi * xi[grid.face_cell] * grid.face_area)[grid.neumann]))))
        total += d
    return abs(total)


# -- driver -----------------------------------------------------------------

def run(scenario: Scenario, keep_fields: bool = True) -> Trajectory:
    """Iterate the selected step from ``rho0`` and record the monitors.

    Raises
    ------
    StepFailure
        Wrapping the first failing step, with the partial trajectory.
    """
    grid = scenario.grid
    traj = Trajectory(grid=grid, bd=scenario.bd, beta=scenario.beta, algorithm=scenario.algorithm,
                      inflow=boundary_density(scenario))
    c = np.asarray(scenario.c_cells)
    rho = scenario.rho0.copy()
    traj.times.append(0.0)
    traj.rho.append(rho.copy())
    traj.eta.append(None)
    traj.phi.append(None)
    m = traj.monitors
    e0 = float(np.dot(_beta(scenario.beta, c, rho), grid.wc))
    for key, val in zip(MONITOR_KEYS, (float(np.dot(rho, grid.wc)), e0, 0.0, 0.0, 0, 0.0, 0.0,
                                       True, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)):
        m[key].append(val)

    stepper = _transport_forcing if scenario.algorithm == "transport_forcing" else _prediction_correction
    warm = None
    for i in range(1, scenario.n_steps + 1):
        try:
            rho_new, eta, phi, sol, rec, pd = stepper(scenario, i, rho, warm)
        except Exception as exc:  # record and hand back what was computed
            raise StepFailure(f"step {i} failed: {exc}", step=i, trajectory=traj, cause=exc) from exc
        rec.eta, rec.phi = eta, phi
        traj.times.append(scenario.time(i))
        traj.rho.append(rho_new.copy())
        keep = keep_fields or (i % max(1, scenario.snapshot_every) == 0)
        traj.eta.append(eta.copy() if keep else None)
        traj.phi.append(phi.copy() if keep else None)

        rep = residuals(pd, sol)
        lhs, rhs, dscale = _dissipation(grid, scenario.bd, scenario.beta, c, rec, rho_new)
        m["mass"].append(float(np.dot(rho_new, grid.wc)))
        m["energy"].append(float(np.dot(_beta(scenario.beta, c, rho_new), grid.wc)))
        m["gap"].append(sol.gap)
        m["rel_gap"].append(sol.relative_gap)
        m["iters"].append(sol.iterations)
        m["mass_balance_residual"].append(_mass_balance(grid, scenario.bd, rec, rho_new))
        if scenario.track_increments:
            m["dual_increment"].append(dualnorm.metric_increment(grid, scenario.bd, rho_new, rho, scenario.p))
        else:
            m["dual_increment"].append(float("nan"))
        m["dissipation_ok"].append(bool(lhs <= rhs + 1e-8 * dscale))
        m["dissipation_lhs"].append(lhs)
        m["dissipation_rhs"].append(rhs)
        m["dissipation_slack"].append(rhs - lhs)
        m["dissipation_scale"].append(dscale)
        m["feasibility"].append(sol.feasibility_residual)
        m["beta_gap"].append(rep.beta_gap)
        m["cost_gap"].append(rep.cost_gap)
        m["graph_residual"].append(rep.graph)
        m["cert_scale"].append(rep.scale)
        if not keep:
            rec.eta = rec.phi = None
        traj.records.append(rec)
        warm = sol.state
        rho = rho_new
    return traj
