import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minflow import nonlinearity as nl
from minflow.checks import pi_inflow_problem, random_instance
from minflow.errors import InfeasibleDomain, NotConverged, UnsupportedEntry
from minflow.grid import boundary_data, build_grid
from minflow.oracle import direct_linear_solve
from minflow.saddle import (
    SolverParams,
    dual_value,
    feasible_init,
    make_problem,
    norm_estimate_K,
    primal_value,
    residuals,
    solve_newton,
    solve_pd,
)

DIR1 = {"left": "dirichlet", "right": "dirichlet"}
DIR2 = {"left": "dirichlet", "right": "dirichlet", "bottom": "dirichlet", "top": "dirichlet"}


@pytest.fixture(scope="module")
def inflow_solution():
    pd = pi_inflow_problem(32)
    return pd, solve_pd(pd, SolverParams(tol=1e-10))


def test_zero_data_values():
    g = build_grid(1, (6,), (1.0,), DIR1)
    pd = make_problem(g, beta=nl.quadratic())
    assert primal_value(pd, np.zeros(6), np.zeros(7)) == (0.0, 0.0)
    assert dual_value(pd, np.zeros(6)) == 0.0


def test_inflow_primal_closed_form():
    pd = pi_inflow_problem(32)
    val, feas = primal_value(pd, None, -np.ones(33))
    assert val == pytest.approx(0.5, abs=1e-14)
    assert feas <= 1e-14


@pytest.mark.parametrize("nx", [8, 32, 128])
def test_inflow_dual_quadrature_gap(nx):
    pd = pi_inflow_problem(nx)
    x = pd.grid.cell_centers[:, 0]
    assert dual_value(pd, 1.0 - x) <= 0.5 + 1e-14
    # the gap is second order in h
    assert 0.5 - dual_value(pd, 1.0 - x) <= 0.5 / nx**2


def test_heleshaw_infeasible_density():
    g = build_grid(1, (4,), (1.0,), DIR1)
    pd = make_problem(g, beta=nl.heleshaw())
    with pytest.raises(InfeasibleDomain) as exc:
        primal_value(pd, np.array([0.0, 1.5, 0.0, 0.0]), np.zeros(5))
    assert exc.value.witness == 1 and exc.value.value == np.inf


def test_solve_pd_inflow(inflow_solution):
    pd, sol = inflow_solution
    x = pd.grid.cell_centers[:, 0]
    np.testing.assert_allclose(sol.phi, -1.0, atol=1e-6)
    np.testing.assert_allclose(sol.eta, 1.0 - x, atol=1e-6)
    assert sol.relative_gap <= 1e-8
    assert sol.primal_value == pytest.approx(0.5, abs=1e-6)


def test_solve_pd_zero_data():
    g = build_grid(2, (4, 4), (1.0, 1.0), DIR2)
    sol = solve_pd(make_problem(g, beta=nl.pme(2.0)))
    assert sol.iterations == 0 and sol.converged
    assert not np.any(sol.rho) and not np.any(sol.phi) and not np.any(sol.eta)


def test_solve_pd_matches_dense_oracle(rng, backend):
    g = build_grid(1, (16,), (1.0,), DIR1)
    pd = make_problem(g, mu=rng.uniform(-1, 1, 16), beta=nl.quadratic(), tau_scale=0.1)
    sol = solve_pd(pd, SolverParams(tol=1e-13, backend=backend))
    rho, _ = direct_linear_solve(pd)
    assert np.max(np.abs(sol.rho - rho)) <= 1e-6


def test_solve_pd_budget_raises():
    pd = pi_inflow_problem(64)
    with pytest.raises(NotConverged) as exc:
        solve_pd(pd, SolverParams(tol=1e-14, max_iters=100))
    assert exc.value.solution is not None and exc.value.history


def test_warm_start_reuses_state(inflow_solution):
    pd, sol = inflow_solution
    again = solve_pd(pd, SolverParams(tol=1e-10), init=sol)
    assert again.iterations == 0


def test_newton_quadratic_equals_dense(rng):
    g = build_grid(1, (8,), (1.0,), {"left": "neumann", "right": "dirichlet"})
    bd = boundary_data(g, g=0.3, pi=-0.7)
    pd = make_problem(g, mu=rng.normal(size=8), chi=rng.normal(size=9), bd=bd, beta=nl.quadratic(2.0),
                      cost=nl.quadratic_cost(0.5), tau_scale=0.4)
    sol = solve_newton(pd)
    rho, eta = direct_linear_solve(pd)
    np.testing.assert_allclose(sol.rho, rho, atol=1e-10)
    np.testing.assert_allclose(sol.eta, eta, atol=1e-10)


def test_newton_pme_agrees_with_pd(rng):
    g = build_grid(1, (16,), (1.0,), DIR1)
    pd = make_problem(g, mu=rng.uniform(0.05, 0.5, 16), beta=nl.pme(2.0), tau_scale=0.05)
    a = solve_newton(pd)
    b = solve_pd(pd, SolverParams(tol=1e-13))
    assert np.max(np.abs(a.rho - b.rho)) <= 1e-6


@pytest.mark.parametrize("beta", [nl.heleshaw(), nl.stefan(1.0, 0.0), nl.sampled([-1, 0, 1], [1, 0, 1])])
def test_newton_rejects_nonsmooth(beta):
    g = build_grid(1, (4,), (1.0,), DIR1)
    with pytest.raises(UnsupportedEntry):
        solve_newton(make_problem(g, beta=beta))


def test_residuals_converged(inflow_solution):
    pd, sol = inflow_solution
    rep = residuals(pd, sol)
    assert rep.ok(1e-7)


def test_residuals_zero():
    g = build_grid(1, (4,), (1.0,), DIR1)
    pd = make_problem(g, beta=nl.quadratic())
    rep = residuals(pd, solve_pd(pd))
    assert rep.worst() == 0.0 and rep.graph == 0.0


def test_perturbed_eta_has_positive_fenchel_gap(rng):
    g = build_grid(1, (12,), (1.0,), DIR1)
    pd = make_problem(g, mu=rng.uniform(0, 1, 12), beta=nl.quadratic(), tau_scale=0.1)
    sol = solve_pd(pd, SolverParams(tol=1e-12))
    before = residuals(pd, sol).beta_gap
    sol.eta = sol.eta.copy()
    sol.eta[3] += 0.1
    assert residuals(pd, sol).beta_gap > before + 1e-4


def test_feasible_init_examples(rng):
    g = build_grid(1, (8,), (1.0,), DIR1)
    np.testing.assert_array_equal(feasible_init(make_problem(g, beta=nl.quadratic())), 0.0)
    np.testing.assert_allclose(feasible_init(pi_inflow_problem(16)), -1.0, atol=1e-13)
    g2 = build_grid(2, (8, 8), (1.0, 1.0), {**DIR2, "top": "neumann"})
    pd = make_problem(g2, mu=rng.normal(size=64), alpha=0)
    phi = feasible_init(pd)
    assert pd.weighted_norm(pd.constraint_residual(None, phi[pd.free])) <= 1e-10


@pytest.mark.parametrize("nx", [4, 8, 16])
@pytest.mark.parametrize("labels", [DIR1, {"left": "neumann", "right": "dirichlet"}])
def test_norm_estimate_against_dense(nx, labels):
    g = build_grid(1, (nx,), (1.0,), labels)
    pd = make_problem(g, alpha=0)
    sv = np.sqrt(np.max(np.linalg.eigvals((-(pd.Df @ pd.G)).toarray()).real))
    est = norm_estimate_K(pd)
    assert sv <= est * (1 + 1e-12) and est <= 1.02 * sv


def test_norm_estimate_identity():
    g = build_grid(1, (8,), (1.0,), DIR1)
    assert norm_estimate_K(make_problem(g, alpha=1, tau_scale=0.0, beta=nl.quadratic())) == pytest.approx(1.0)


def test_invalid_problem_data():
    g = build_grid(1, (4,), (1.0,), DIR1)
    with pytest.raises(ValueError):
        make_problem(g, alpha=2, beta=nl.quadratic())
    with pytest.raises(ValueError):
        make_problem(g, alpha=1)
    with pytest.raises(ValueError):
        SolverParams(method="bfgs")


@settings(max_examples=12)
@given(seed=st.integers(0, 2**31), bkind=st.sampled_from(["quadratic", "pme", "stefan", "heleshaw"]),
       ckind=st.sampled_from(["quadratic", "ppower"]))
def test_weak_duality_and_certified_gap(seed, bkind, ckind):
    rng = np.random.default_rng(seed)
    beta = {"quadratic": nl.quadratic(), "pme": nl.pme(2.0), "stefan": nl.stefan(0.5, 0.3),
            "heleshaw": nl.heleshaw()}[bkind]
    cost = nl.quadratic_cost() if ckind == "quadratic" else nl.ppower_cost(3.0)
    pd = random_instance(rng, beta, cost, dim=1, size=(6, 8))
    # any eta bounds any feasible primal from below
    eta = rng.normal(size=pd.grid.ncells)
    sol = solve_pd(pd, SolverParams(tol=1e-8))
    assert dual_value(pd, eta) <= sol.primal_value + 1e-8 * max(1.0, abs(sol.primal_value))
    assert sol.relative_gap <= 1e-8
