"""Discrete proximal minimum-flow problem, its dual, and two solvers.

One instance reads

    min_{rho, phi}  alpha sum beta(rho) w_c + tau_s sum F(phi) w_f
                    - tau_s sum_D (phi + chi) nu g a
    s.t.            alpha rho - tau_s div(phi + chi) = mu,
                    (phi + chi) . nu = pi on Neumann faces.

``alpha = 1`` is one implicit step of the energy scheme, ``alpha = 0`` the
pure transport-cost problem.  The Neumann faces are fixed data, so the
unknown flux lives on the free (interior and Dirichlet) faces and the
constraint becomes ``K x = b`` with ``K (rho, phi) = alpha rho - tau_s
Div_free phi`` and ``b = mu + tau_s div(q)``, where ``q`` equals ``chi`` on
free faces and ``nu pi`` on Neumann faces.

The dual function, obtained by dualizing the constraint, is

    D(eta) = sum mu eta w_c - tau_s sum chi grad_g(eta) w_f
             - tau_s sum F*(grad_g eta) w_f - alpha sum beta*(eta) w_c
             + tau_s sum_N pi eta_c a + const_N

where ``const_N = tau_s sum_N F(phi_N) w_f`` is the (fixed) cost of the
Neumann data flux, added to both sides so that values match the
continuous problem.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .errors import InfeasibleDomain, NewtonStall, NotConverged, SingularSystem, SizeMismatch, UnsupportedEntry
from .grid import BoundaryData, Grid, boundary_data, gradient_shift
from .nonlinearity import (
    CostEntry,
    NonlinearityEntry,
    _beta,
    _beta_conj,
    _beta_conj_subgrad,
    _beta_kinks,
    _beta_subgrad,
    _cost_conj_dmag,
    _cost_conj_mag,
    _cost_mag,
)


@dataclass(eq=False)
class ProblemData:
    """One discrete saddle instance.

    Attributes
    ----------
    grid : Grid
    bd : BoundaryData
    mu : CellField
    chi : FaceField
        Forcing flux; its Neumann entries only enter through the fixed
        data flux ``nu pi - chi``.
    alpha : {0, 1}
    tau_scale : float
        1 for static problems, the time step for rate-form time steps.
    beta : NonlinearityEntry
        Ignored when ``alpha == 0``.
    cost : CostEntry
    """

    grid: Grid
    bd: BoundaryData
    mu: np.ndarray
    chi: np.ndarray
    alpha: float
    tau_scale: float
    beta: Optional[NonlinearityEntry]
    cost: CostEntry

    def __post_init__(self):
        self.mu = self.grid.check_cells(self.mu, "mu").copy()
        self.chi = self.grid.check_faces(self.chi, "chi").copy()
        self.grid.check_faces(self.bd.g, "g")
        self.grid.check_faces(self.bd.pi, "pi")
        if self.alpha not in (0, 1):
            raise ValueError("alpha must be 0 or 1")
        if self.tau_scale < 0 or (self.tau_scale == 0 and self.alpha == 0):
            raise ValueError("tau_scale must be positive")
        if self.alpha == 1 and self.beta is None:
            raise ValueError("alpha = 1 needs a nonlinearity entry")

    # -- cached operators ---------------------------------------------------
    @cached_property
    def free(self):
        return self.grid.free_index

    @property
    def G(self):
        return self.grid.G_free

    @property
    def Df(self):
        return self.grid.D_free

    @cached_property
    def wf_free(self):
        return np.ascontiguousarray(self.grid.wf[self.free])

    @cached_property
    def gs_free(self):
        return np.ascontiguousarray(gradient_shift(self.grid, self.bd)[self.free])

    @cached_property
    def phi_neumann(self):
        """Full face field holding the fixed flux ``nu pi - chi`` on Neumann faces."""
        gr = self.grid
        return np.where(gr.neumann, gr.nu * self.bd.pi - self.chi, 0.0)

    @cached_property
    def q_data(self):
        gr = self.grid
        return np.where(gr.neumann, gr.nu * self.bd.pi, self.chi)

    @cached_property
    def b(self):
        return self.mu + self.tau_scale * (self.grid.D @ self.q_data)

    @cached_property
    def c_cells(self):
        if self.beta is None:
            return np.ones(self.grid.ncells)
        c = self.beta.coefficient(self.grid.cell_centers)
        return np.ascontiguousarray(np.broadcast_to(c, (self.grid.ncells,)), dtype=float)

    @cached_property
    def k_faces(self):
        k = self.cost.coefficient(self.grid.face_centers)
        return np.ascontiguousarray(np.broadcast_to(k, (self.grid.nfaces,)), dtype=float)

    @cached_property
    def k_free(self):
        return np.ascontiguousarray(self.k_faces[self.free])

    @cached_property
    def const_neumann(self):
        gr = self.grid
        m = gr.neumann
        vals = _cost_mag(self.cost, self.k_faces[m], np.abs(self.phi_neumann[m]))
        return self.tau_scale * float(np.dot(vals, gr.wf[m]))

    @cached_property
    def b_norm(self):
        return float(np.sqrt(np.dot(self.b**2, self.grid.wc)))

    def grad(self, eta):
        """Gradient of ``eta`` on the free faces (Dirichlet data included)."""
        return self.G @ eta + self.gs_free

    def full_flux(self, phi_free):
        out = self.phi_neumann.copy()
        out[self.free] = phi_free
        return out

    def constraint_residual(self, rho, phi_free):
        """``b - alpha rho + tau_s Div_free phi`` per cell."""
        r = self.b + self.tau_scale * (self.Df @ phi_free)
        if self.alpha:
            r = r - self.alpha * rho
        return r

    def weighted_norm(self, v):
        return float(np.sqrt(np.dot(v * v, self.grid.wc)))


def make_problem(grid, mu=None, chi=None, bd=None, alpha=1, tau_scale=1.0, beta=None, cost=None):
    """Convenience constructor with zero defaults."""
    from .nonlinearity import quadratic_cost

    return ProblemData(
        grid=grid,
        bd=bd if bd is not None else boundary_data(grid),
        mu=np.zeros(grid.ncells) if mu is None else mu,
        chi=np.zeros(grid.nfaces) if chi is None else chi,
        alpha=alpha,
        tau_scale=tau_scale,
        beta=beta,
        cost=cost if cost is not None else quadratic_cost(),
    )


@dataclass
class SolverParams:
    """Settings of :func:`solve_pd`.

    ``tau``/``sigma`` of ``None`` select steps from :func:`norm_estimate_K`
    with ``tau * sigma * L^2 = 1``.  ``adaptive`` rebalances the two steps
    (keeping their product) from the primal and dual residuals every
    ``check_every`` iterations.  ``method="newton"`` makes the time stepper
    call :func:`solve_newton` instead, which only handles differentiable
    conjugates.
    """

    tol: float = 1e-8
    max_iters: int = 200_000
    tau: Optional[float] = None
    sigma: Optional[float] = None
    theta: float = 1.0
    check_every: int = 50
    adaptive: bool = True
    backend: Optional[str] = None
    method: str = "pdhg"

    def __post_init__(self):
        if self.method not in ("pdhg", "newton"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")


@dataclass
class SaddleSolution:
    rho: np.ndarray
    eta: np.ndarray
    phi: np.ndarray
    primal_value: float
    dual_value: float
    gap: float
    feasibility_residual: float
    iterations: int
    converged: bool = True
    history: list = field(default_factory=list, repr=False)
    state: dict = field(default_factory=dict, repr=False)

    @property
    def relative_gap(self):
        return abs(self.gap) / max(1.0, abs(self.primal_value))


# -- objective values -------------------------------------------------------

def _primal(pd, rho, phi_free):
    gr = pd.grid
    val = pd.const_neumann
    if pd.alpha:
        val += pd.alpha * float(np.dot(_beta(pd.beta, pd.c_cells, rho), gr.wc))
    val += pd.tau_scale * float(np.dot(_cost_mag(pd.cost, pd.k_free, np.abs(phi_free)), pd.wf_free))
    tot = pd.full_flux(phi_free) + pd.chi
    m = gr.dirichlet
    val -= pd.tau_scale * float(np.sum((tot * gr.nu * pd.bd.g * gr.face_area)[m]))
    return val


def _dual(pd, eta):
    gr = pd.grid
    grad = pd.grad(eta)
    val = float(np.dot(pd.mu * eta, gr.wc))
    val -= pd.tau_scale * float(np.dot(pd.chi[pd.free] * grad, pd.wf_free))
    val -= pd.tau_scale * float(np.dot(_cost_conj_mag(pd.cost, pd.k_free, np.abs(grad)), pd.wf_free))
    if pd.alpha:
        val -= pd.alpha * float(np.dot(_beta_conj(pd.beta, pd.c_cells, eta), gr.wc))
    m = gr.neumann
    val += pd.tau_scale * float(np.sum((pd.bd.pi * eta[gr.face_cell] * gr.face_area)[m]))
    return val + pd.const_neumann


def primal_value(pd: ProblemData, rho, phi):
    """Primal objective and weighted-L2 feasibility residual.

    ``phi`` is a full FaceField; its Neumann entries are replaced by the
    data flux.  For ``alpha == 0`` ``rho`` is ignored.

    Raises
    ------
    InfeasibleDomain
        If ``beta(rho) = +inf`` in some cell; ``witness`` is that cell and
        ``value`` is ``inf``.
    """
    gr = pd.grid
    phi = gr.check_faces(phi, "phi")
    phi_free = phi[pd.free]
    if pd.alpha:
        rho = gr.check_cells(rho, "rho")
        bvals = _beta(pd.beta, pd.c_cells, rho)
        if not np.all(np.isfinite(bvals)):
            cell = int(np.flatnonzero(~np.isfinite(bvals))[0])
            err = InfeasibleDomain(f"beta(rho) is infinite in cell {cell}", witness=cell)
            err.value = np.inf
            raise err
    else:
        rho = np.zeros(gr.ncells)
    value = _primal(pd, rho, phi_free)
    feas = pd.weighted_norm(pd.constraint_residual(rho, phi_free))
    return value, feas


def dual_value(pd: ProblemData, eta) -> float:
    """Dual objective at the cell potential ``eta`` (Dirichlet data built in)."""
    return _dual(pd, pd.grid.check_cells(eta, "eta"))


# -- operator norm ----------------------------------------------------------

def _kkt_matrix(pd):
    """Matrix of K K* in the weighted spaces: alpha^2 I - tau_s^2 Div_free G."""
    n = pd.grid.ncells
    M = -(pd.tau_scale**2) * (pd.Df @ pd.G)
    if pd.alpha:
        M = M + pd.alpha**2 * sp.identity(n, format="csr")
    return sp.csr_matrix(M)


def gershgorin_bound(pd: ProblemData) -> float:
    """Upper bound of ||K||^2 from Gershgorin discs of K K*."""
    M = _kkt_matrix(pd)
    return float(np.max(np.asarray(abs(M).sum(axis=1)).ravel()))


def norm_estimate_K(pd: ProblemData, iters=50, seed=0) -> float:
    """Estimate of the operator norm of ``(rho, phi) -> alpha rho - tau_s div phi``.

    Power iteration on ``K K*`` (weighted inner products), padded by 5 %
    and capped by the Gershgorin bound, which is always an upper bound.
    """
    M = _kkt_matrix(pd)
    n = M.shape[0]
    rng = np.random.default_rng(seed)
    idx = np.indices(pd.grid.counts).sum(axis=0).ravel()
    v = (-1.0) ** idx + 0.1 * rng.standard_normal(n)
    lam = 0.0
    for _ in range(iters):
        w = M @ v
        nv = np.linalg.norm(w)
        if nv == 0.0:
            break
        lam = float(np.dot(v, w) / np.dot(v, v))
        v = w / nv
    est = 1.05 * np.sqrt(max(lam, 0.0))
    return float(min(est, np.sqrt(gershgorin_bound(pd))))


# -- certification ----------------------------------------------------------

def _polish(pd, rho, phi_free, eta):
    """Feasible primal point and a dual point on the beta-graph.

    For ``alpha = 1`` the density is recovered from the constraint, which
    makes the pair exactly feasible.  Cells where the iterate sits on a
    corner of beta keep the iterate value.  The potential is then projected
    onto the subdifferential of beta at that density.
    """
    if not pd.alpha:
        return np.zeros_like(eta), eta
    beta = pd.beta
    rho_f = (pd.b + pd.tau_scale * (pd.Df @ phi_free)) / pd.alpha
    kink = _beta_kinks(beta, rho)
    rp = np.where(kink, rho, rho_f)
    if beta.kind == "heleshaw":
        rp = np.clip(rp, -1.0, 1.0)
    elif beta.kind == "sampled":
        rp = np.clip(rp, beta.knots[0], beta.knots[-1])
    lo, hi = _beta_subgrad(beta, pd.c_cells, rp)
    return rp, np.clip(eta, lo, hi)


def certify(pd, rho, phi_free, eta):
    """Objective values and residuals at the polished point."""
    rp, es = _polish(pd, rho, phi_free, eta)
    P = _primal(pd, rp, phi_free)
    D = _dual(pd, es)
    feas = pd.weighted_norm(pd.constraint_residual(rp, phi_free))
    return rp, es, P, D, feas


def _zero_state(pd):
    gr = pd.grid
    return (np.zeros(gr.ncells), np.zeros(pd.free.size), np.zeros(gr.ncells))


def solve_pd(pd: ProblemData, params: Optional[SolverParams] = None, init=None) -> SaddleSolution:
    """First-order primal-dual iteration with duality-gap certificate.

    Each iteration takes a prox step on ``(rho, phi)`` against ``K* eta``,
    over-relaxes by ``theta`` and takes an ascent step on ``eta`` along the
    constraint residual.  Every ``check_every`` iterations the point is
    polished (see :func:`certify`) and the run stops once the relative gap
    and the relative feasibility residual are below ``tol``.

    Parameters
    ----------
    init : SaddleSolution or dict, optional
        Warm start; a dict may hold any of ``rho``, ``phi`` (full face
        field), ``eta`` and the step sizes ``tau``/``sigma``.

    Raises
    ------
    NotConverged
        With the last certified iterate and the check history attached.
    """
    params = params or SolverParams()
    rho, phi, eta = _zero_state(pd)
    steps = {}
    if init is not None:
        src = init.state if isinstance(init, SaddleSolution) and init.state else init
        if isinstance(src, SaddleSolution):
            src = {"rho": src.rho, "phi": src.phi, "eta": src.eta}
        if src.get("rho") is not None:
            rho = np.array(src["rho"], dtype=float)
        if src.get("phi") is not None:
            phi = np.array(np.asarray(src["phi"], dtype=float)[pd.free])
        if src.get("eta") is not None:
            eta = np.array(src["eta"], dtype=float)
        steps = {k: src[k] for k in ("tau", "sigma") if src.get(k)}

    L = norm_estimate_K(pd)
    if params.tau is not None and params.sigma is not None:
        tp, sg = params.tau, params.sigma
    elif "tau" in steps and "sigma" in steps:
        tp, sg = float(steps["tau"]), float(steps["sigma"])
        prod = tp * sg * L * L
        if prod > 1.0:
            tp, sg = tp / np.sqrt(prod), sg / np.sqrt(prod)
    else:
        tp = sg = 1.0 / L

    kp = _kernels.KernelProblem(
        G=pd.G, Df=pd.Df, wc=np.ascontiguousarray(pd.grid.wc, dtype=float), wf=pd.wf_free,
        b=np.ascontiguousarray(pd.b), gs=pd.gs_free, c_cells=pd.c_cells, k_free=pd.k_free,
        beta=pd.beta if pd.beta is not None else NonlinearityEntry("quadratic"),
        cost=pd.cost, alpha=float(pd.alpha), tau_s=float(pd.tau_scale), theta=float(params.theta),
    )
    st = _kernels.KernelState(rho=rho, phi=phi, eta=eta, tau=tp, sigma=sg)

    history = []
    adapt, adapt_decay, balance = 0.5, 0.95, 1.5
    bscale = max(1.0, pd.b_norm)
    it = 0

    def check():
        rp, es, P, D, feas = certify(pd, st.rho, st.phi, st.eta)
        rel = abs(P - D) / max(1.0, abs(P))
        history.append({"iter": it, "rel_gap": rel, "feas": feas / bscale, "tau": st.tau, "sigma": st.sigma})
        return rp, es, P, D, feas, rel

    rp, es, P, D, feas, rel = check()
    while not (rel <= params.tol and feas <= params.tol * bscale):
        if it >= params.max_iters:
            sol = _solution(pd, rp, es, st, P, D, feas, it, history, converged=False)
            raise NotConverged(
                f"primal-dual budget of {params.max_iters} iterations exhausted "
                f"(rel gap {rel:.3e}, feasibility {feas / bscale:.3e})",
                solution=sol, history=history,
            )
        n = min(params.check_every, params.max_iters - it)
        pres, dres = _kernels.run_chunk(kp, st, n, backend=params.backend)
        it += n
        if params.adaptive and pres > 0 and dres > 0:
            if pres > balance * dres:
                st.tau /= 1.0 - adapt
                st.sigma *= 1.0 - adapt
                adapt *= adapt_decay
            elif dres > balance * pres:
                st.tau *= 1.0 - adapt
                st.sigma /= 1.0 - adapt
                adapt *= adapt_decay
        rp, es, P, D, feas, rel = check()
    return _solution(pd, rp, es, st, P, D, feas, it, history, converged=True)


def _solution(pd, rp, es, st, P, D, feas, it, history, converged):
    return SaddleSolution(
        rho=rp.copy(), eta=es.copy(), phi=pd.full_flux(st.phi), primal_value=P, dual_value=D,
        gap=P - D, feasibility_residual=feas, iterations=it, converged=converged, history=history,
        state={"rho": st.rho.copy(), "phi": pd.full_flux(st.phi), "eta": st.eta.copy(),
               "tau": st.tau, "sigma": st.sigma},
    )


# -- feasible flux ----------------------------------------------------------

def feasible_init(pd: ProblemData) -> np.ndarray:
    """A flux satisfying ``-tau_s div(phi + chi) = mu`` with the Neumann data.

    Solves the quadratic-cost transport problem: ``phi = grad0 z`` with
    ``-tau_s Div_free grad0 z = b``, a symmetric positive-definite system
    when at least one Dirichlet face exists.
    """
    gr = pd.grid
    if not gr.dirichlet.any():
        raise SingularSystem("no Dirichlet face: the potential is defined up to a constant")
    A = sp.csc_matrix(-pd.tau_scale * (pd.Df @ pd.G))
    z = spla.spsolve(A, pd.b)
    return pd.full_flux(pd.G @ z)


# -- Newton oracle ----------------------------------------------------------

def _beta_conj_d(pd, eta):
    """(d beta*, d^2 beta*) cellwise for differentiable catalog entries."""
    beta, c = pd.beta, pd.c_cells
    if beta.kind == "quadratic":
        return eta / c, 1.0 / c
    m = beta.m
    s = np.maximum(np.abs(eta), 1e-12 * c)
    d1 = np.sign(eta) * (np.abs(eta) / c) ** (1.0 / m)
    d2 = (s / c) ** (1.0 / m - 1.0) / (m * c)
    return d1, d2


def _cost_conj_d(pd, A):
    cost, k = pd.cost, pd.k_free
    if cost.kind == "quadratic":
        return k * A, k
    p = cost.p
    u = np.maximum(np.abs(A), 1e-10)
    return np.sign(A) * _cost_conj_dmag(cost, k, np.abs(A)), (p - 1.0) * k * u ** (p - 2.0)


def _newton_residual(pd, eta):
    A = pd.grad(eta)
    r = -pd.b - pd.tau_scale * (pd.Df @ _cost_conj_d(pd, A)[0])
    if pd.alpha:
        r = r + pd.alpha * _beta_conj_d(pd, eta)[0]
    return r


def solve_newton(pd: ProblemData, tol=1e-12, max_iters=100) -> SaddleSolution:
    """Damped Newton on ``alpha d beta*(eta) - tau_s div(dF*(grad eta)) = b``.

    Only for entries with differentiable conjugates (quadratic, pme).  The
    Jacobian is symmetrised by the cell weights; the step is damped by a
    backtracking search on the weighted residual norm.

    Raises
    ------
    UnsupportedEntry
        For heleshaw, stefan and sampled densities.
    NewtonStall
        When the line search or the iteration budget is exhausted.
    """
    if pd.alpha and pd.beta.kind not in ("quadratic", "pme"):
        raise UnsupportedEntry(f"Newton oracle needs a differentiable conjugate, got {pd.beta.kind}")
    gr = pd.grid
    if not gr.dirichlet.any() and not pd.alpha:
        raise SingularSystem("no Dirichlet face")
    wc = gr.wc

    def jac(eta):
        A = pd.grad(eta)
        d2F = _cost_conj_d(pd, A)[1]
        J = pd.tau_scale * (pd.G.T @ sp.diags(pd.wf_free * d2F) @ pd.G)
        if pd.alpha:
            J = J + sp.diags(pd.alpha * wc * _beta_conj_d(pd, eta)[1])
        return sp.csc_matrix(J)

    # start from the linearised (quadratic) system
    lin = pd.tau_scale * (pd.G.T @ sp.diags(pd.wf_free * pd.k_free) @ pd.G)
    if pd.alpha:
        lin = lin + sp.diags(pd.alpha * wc / pd.c_cells)
    rhs = wc * (pd.b + pd.tau_scale * (pd.Df @ (pd.k_free * pd.gs_free)))
    eta = spla.spsolve(sp.csc_matrix(lin), rhs)

    scale = max(1.0, pd.b_norm)
    r = _newton_residual(pd, eta)
    rn = pd.weighted_norm(r)
    it = 0
    while rn > tol * scale:
        if it >= max_iters:
            raise NewtonStall(f"Newton budget exhausted, residual {rn:.3e}")
        delta = spla.spsolve(jac(eta), -wc * r)
        t = 1.0
        while True:
            cand = eta + t * delta
            rc = _newton_residual(pd, cand)
            rcn = pd.weighted_norm(rc)
            if rcn <= (1.0 - 1e-4 * t) * rn or rcn <= tol * scale:
                break
            t *= 0.5
            if t < 1e-10:
                raise NewtonStall(f"line search failed at residual {rn:.3e}")
        eta, r, rn = cand, rc, rcn
        it += 1
    rho = _beta_conj_d(pd, eta)[0] if pd.alpha else np.zeros(gr.ncells)
    phi_free = _cost_conj_d(pd, pd.grad(eta))[0]
    P = _primal(pd, rho, phi_free)
    D = _dual(pd, eta)
    feas = pd.weighted_norm(pd.constraint_residual(rho, phi_free))
    return SaddleSolution(rho=rho, eta=eta, phi=pd.full_flux(phi_free), primal_value=P, dual_value=D,
                          gap=P - D, feasibility_residual=feas, iterations=it)


# -- optimality report ------------------------------------------------------

@dataclass
class OptimalityReport:
    """Residuals of the discrete optimality system at a candidate solution.

    ``divergence`` is the weighted L2 constraint residual; ``beta_gap`` and
    ``cost_gap`` are the summed Fenchel-Young gaps; ``trace`` is the
    Dirichlet trace defect (zero by construction); ``extremality`` is the
    defect of the energy identity obtained by testing the constraint with
    ``eta``; ``graph`` is the largest cellwise distance of ``rho`` to
    ``d beta*(eta)``.  ``scale`` normalises all of them.
    """

    divergence: float
    beta_gap: float
    cost_gap: float
    trace: float
    extremality: float
    graph: float
    scale: float

    def worst(self):
        return max(self.divergence, self.beta_gap, self.cost_gap, self.trace, self.extremality) / self.scale

    def ok(self, tol):
        return self.worst() <= tol


def residuals(pd: ProblemData, sol: SaddleSolution) -> OptimalityReport:
    gr = pd.grid
    rho = gr.check_cells(sol.rho, "rho") if pd.alpha else np.zeros(gr.ncells)
    eta = gr.check_cells(sol.eta, "eta")
    phi = gr.check_faces(sol.phi, "phi")
    phi_free = phi[pd.free]
    grad = pd.grad(eta)
    div = pd.weighted_norm(pd.constraint_residual(rho, phi_free))
    if pd.alpha:
        fy = _beta(pd.beta, pd.c_cells, rho) + _beta_conj(pd.beta, pd.c_cells, eta) - rho * eta
        bgap = float(np.dot(np.abs(fy), gr.wc))
        lo, hi = _beta_conj_subgrad(pd.beta, pd.c_cells, eta)
        graph = float(np.max(np.maximum(np.maximum(lo - rho, rho - hi), 0.0))) if rho.size else 0.0
    else:
        bgap, graph = 0.0, 0.0
    fy = (_cost_mag(pd.cost, pd.k_free, np.abs(phi_free))
          + _cost_conj_mag(pd.cost, pd.k_free, np.abs(grad)) - phi_free * grad)
    cgap = pd.tau_scale * float(np.dot(np.abs(fy), pd.wf_free))
    # test the constraint with eta, homogeneous gradient (g folded into g~)
    g0 = pd.G @ eta
    lhs = pd.alpha * float(np.dot(rho * eta, gr.wc)) + pd.tau_scale * float(np.dot(phi_free * g0, pd.wf_free))
    m = gr.neumann
    rhs = (float(np.dot(pd.mu * eta, gr.wc))
           - pd.tau_scale * float(np.dot(pd.chi[pd.free] * g0, pd.wf_free))
           + pd.tau_scale * float(np.sum((pd.bd.pi * eta[gr.face_cell] * gr.face_area)[m])))
    scale = max(1.0, abs(sol.primal_value), pd.b_norm)
    return OptimalityReport(divergence=div, beta_gap=bgap, cost_gap=cgap, trace=0.0,
                            extremality=abs(lhs - rhs), graph=graph, scale=scale)
