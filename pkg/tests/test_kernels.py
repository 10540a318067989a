import numpy as np
import pytest

from minflow import _kernels
from minflow import nonlinearity as nl
from minflow.checks import random_instance
from minflow.saddle import SolverParams, norm_estimate_K, solve_pd

pytestmark = pytest.mark.skipif(not _kernels.HAVE_COMPILED, reason="compiled kernel not built")

BETAS = [nl.quadratic(1.3), nl.pme(2.0), nl.pme(3.5, 0.5), nl.stefan(0.5, 0.3), nl.heleshaw()]
COSTS = [nl.quadratic_cost(0.8), nl.ppower_cost(3.0), nl.ppower_cost(1.5)]


def kernel_problem(pd):
    return _kernels.KernelProblem(
        G=pd.G, Df=pd.Df, wc=np.ascontiguousarray(pd.grid.wc), wf=pd.wf_free, b=np.ascontiguousarray(pd.b),
        gs=pd.gs_free, c_cells=pd.c_cells, k_free=pd.k_free,
        beta=pd.beta if pd.beta is not None else nl.quadratic(), cost=pd.cost,
        alpha=float(pd.alpha), tau_s=float(pd.tau_scale), theta=1.0)


@pytest.mark.parametrize("beta", BETAS, ids=lambda b: b.kind)
@pytest.mark.parametrize("cost", COSTS, ids=lambda c: f"{c.kind}{c.p}")
def test_chunk_backends_agree(beta, cost):
    rng = np.random.default_rng(7)
    pd = random_instance(rng, beta, cost, dim=2)
    kp = kernel_problem(pd)
    L = norm_estimate_K(pd)
    states = []
    res = []
    for backend in ("python", "compiled"):
        st = _kernels.KernelState(rho=np.zeros(pd.grid.ncells), phi=np.zeros(pd.free.size),
                                  eta=np.zeros(pd.grid.ncells), tau=1 / L, sigma=1 / L)
        res.append(_kernels.run_chunk(kp, st, 200, backend=backend))
        states.append(st)
    a, b = states
    scale = 1 + max(np.abs(a.rho).max(), np.abs(a.phi).max(), np.abs(a.eta).max())
    for name in ("rho", "phi", "eta"):
        np.testing.assert_allclose(getattr(a, name), getattr(b, name), atol=1e-10 * scale, rtol=0)
    np.testing.assert_allclose(res[0], res[1], rtol=1e-8, atol=1e-14)


def test_alpha_zero_backends_agree():
    rng = np.random.default_rng(3)
    pd = random_instance(rng, None, nl.quadratic_cost(), alpha=0, dim=1)
    sols = [solve_pd(pd, SolverParams(tol=1e-10, backend=b)) for b in ("python", "compiled")]
    np.testing.assert_allclose(sols[0].eta, sols[1].eta, atol=1e-7)
    assert sols[0].iterations == sols[1].iterations


def test_sampled_falls_back_to_python():
    beta = nl.sampled([-1.0, 0.0, 1.0], [1.0, 0.0, 1.0])
    pd = random_instance(np.random.default_rng(0), beta, nl.quadratic_cost(), dim=1)
    assert not _kernels.compiled_supports(kernel_problem(pd))
    sol = solve_pd(pd, SolverParams(tol=1e-8, backend="compiled"))
    assert sol.relative_gap <= 1e-8


def test_default_backend_env(monkeypatch):
    monkeypatch.setenv("MINFLOW_PURE_PYTHON", "1")
    assert _kernels.default_backend() == "python"
    monkeypatch.setenv("MINFLOW_PURE_PYTHON", "0")
    assert _kernels.default_backend() == "compiled"
