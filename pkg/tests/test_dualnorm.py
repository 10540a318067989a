import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minflow.dualnorm import DualElement, dual_norm, metric_increment, potential, pprime_action
from minflow.errors import SingularSystem
from minflow.grid import build_grid
from minflow.oracle import dense_laplacian
from minflow.stepper import run

sys.path.insert(0, str(Path(__file__).parent))
from test_stepper import heat_scenario  # noqa: E402

DIR1 = {"left": "dirichlet", "right": "dirichlet"}
MIXED2 = {"left": "dirichlet", "right": "neumann", "bottom": "neumann", "top": "dirichlet"}


def element(rng, g):
    return DualElement(rng.normal(size=g.ncells), rng.normal(size=g.nfaces))


def test_zero_element():
    g = build_grid(1, (8,), (1.0,), DIR1)
    assert dual_norm(g, None, DualElement(np.zeros(8), np.zeros(9)), 2.0) == 0.0


@pytest.mark.parametrize("nx,tol", [(64, 2e-3), (256, 2e-4), (1024, 2e-5)])
def test_constant_source_converges(nx, tol):
    g = build_grid(1, (nx,), (1.0,), DIR1)
    val = dual_norm(g, None, DualElement(np.ones(nx), np.zeros(nx + 1)), 2.0)
    assert val == pytest.approx(1 / np.sqrt(12), abs=tol)


@pytest.mark.parametrize("labels,dim,counts", [(DIR1, 1, (20,)), (MIXED2, 2, (5, 6))])
def test_quadratic_case_matches_dense_form(rng, labels, dim, counts):
    g = build_grid(dim, counts, (1.0,) * dim, labels)
    f0 = rng.normal(size=g.ncells)
    z = np.linalg.solve(dense_laplacian(g), f0)
    ref = np.sqrt(np.dot(f0 * z, g.wc))
    assert dual_norm(g, None, DualElement(f0, np.zeros(g.nfaces)), 2.0) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_homogeneity(rng, p):
    g = build_grid(2, (5, 4), (1.0, 1.0), MIXED2)
    for _ in range(5):
        f = element(rng, g)
        lam = rng.uniform(-5, 5)
        base = dual_norm(g, None, f, p)
        assert dual_norm(g, None, f.scaled(lam), p) == pytest.approx(abs(lam) * base, rel=1e-9)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_triangle(rng, p):
    g = build_grid(1, (10,), (1.0,), {"left": "neumann", "right": "dirichlet"})
    for _ in range(5):
        a, b = element(rng, g), element(rng, g)
        lhs = dual_norm(g, None, a + b, p)
        assert lhs <= dual_norm(g, None, a, p) + dual_norm(g, None, b, p) + 1e-9 * max(1.0, lhs)


@settings(max_examples=25)
@given(seed=st.integers(0, 2**31), p=st.sampled_from([1.5, 2.0, 3.0, 4.0]))
def test_norm_is_optimal_pairing(seed, p):
    # |<f, xi>| <= ||f|| ||grad xi||_p for every admissible xi
    rng = np.random.default_rng(seed)
    g = build_grid(1, (9,), (1.0,), DIR1)
    f = element(rng, g)
    xi = rng.normal(size=g.ncells)
    gx = g.G_free @ xi
    wf = g.wf[g.free_index]
    pair = np.dot(f.f0 * xi, g.wc) - np.dot(f.fbar[g.free_index] * gx, wf)
    bound = dual_norm(g, None, f, p) * np.dot(np.abs(gx) ** p, wf) ** (1 / p)
    assert abs(pair) <= bound * (1 + 1e-9) + 1e-12


def test_potential_optimality(rng):
    g = build_grid(1, (12,), (1.0,), DIR1)
    f = element(rng, g)
    z, val = potential(g, f, 3.0)
    for _ in range(20):
        dz = 1e-3 * rng.normal(size=g.ncells)
        gz = g.G_free @ (z + dz)
        wf = g.wf[g.free_index]
        pair = np.dot(f.f0 * (z + dz), g.wc) - np.dot(f.fbar[g.free_index] * gz, wf)
        assert np.dot(np.abs(gz) ** 3, wf) / 3 - pair >= val - 1e-12


def test_neumann_face_part_is_ignored(rng):
    g = build_grid(1, (8,), (1.0,), {"left": "neumann", "right": "dirichlet"})
    f0 = rng.normal(size=8)
    fb = np.zeros(9)
    fb[0] = 5.0
    assert dual_norm(g, None, DualElement(f0, fb), 2.0) == dual_norm(g, None, DualElement(f0, 0 * fb), 2.0)


def test_needs_dirichlet_face():
    g = build_grid(1, (4,), (1.0,), {"left": "neumann", "right": "neumann"}, allow_pure_neumann=True)
    with pytest.raises(SingularSystem):
        dual_norm(g, None, DualElement(np.ones(4), np.zeros(5)), 2.0)


def test_metric_examples(rng):
    g = build_grid(1, (16,), (1.0,), DIR1)
    a, b, c = (rng.normal(size=16) for _ in range(3))
    assert metric_increment(g, None, a, a, 2.0) == 0.0
    assert metric_increment(g, None, a, b, 3.0) == pytest.approx(metric_increment(g, None, b, a, 3.0), abs=1e-12)
    for p in (1.5, 2.0, 3.0):
        dab = metric_increment(g, None, a, b, p)
        assert metric_increment(g, None, a, c, p) + metric_increment(g, None, c, b, p) - dab >= -1e-10


def test_pprime_action_constant_and_single_step():
    sc = heat_scenario(T=0.02, tau=0.02)
    traj = run(sc)
    d = metric_increment(sc.grid, None, traj.rho[1], traj.rho[0], 3.0)
    assert pprime_action(traj, 3.0) == pytest.approx(0.02 ** (1 - 1.5) * d**1.5, rel=1e-14)
    traj.rho = [traj.rho[0], traj.rho[0]]
    assert pprime_action(traj, 3.0) == 0.0


def test_pprime_action_bounded_under_tau_halving():
    vals = [pprime_action(run(heat_scenario(tau=tau, T=0.1)), 2.0) for tau in (0.02, 0.01, 0.005)]
    assert all(np.isfinite(vals))
    # successive values settle at first order in tau
    d1, d2 = abs(vals[1] - vals[0]), abs(vals[2] - vals[1])
    assert d2 < 0.7 * d1
