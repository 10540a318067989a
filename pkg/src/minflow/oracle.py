"""Independent reference computations used to check the solvers.

Nothing here reuses the sparse operators or prox maps of the main modules:
conjugates are brute-force maxima over samples, the linear solve assembles
its own stencil face by face, and the PDE fixtures are closed forms.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import UnsupportedEntry
from .grid import DIRICHLET, INTERIOR, NEUMANN


@dataclass(frozen=True)
class SampledFunction:
    """A function known on strictly increasing abscissae (values may be inf)."""

    abscissae: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.abscissae, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if r.ndim != 1 or r.shape != v.shape:
            raise ValueError("abscissae and values must be matching 1-D arrays")
        if np.any(np.diff(r) <= 0):
            raise ValueError("abscissae must be strictly increasing")
        object.__setattr__(self, "abscissae", r)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, fn, lo=-10.0, hi=10.0, step=1e-3):
        r = np.arange(lo, hi + 0.5 * step, step)
        return cls(r, np.asarray(fn(r), dtype=float))


def conjugate_bruteforce(f: SampledFunction, s):
    """max over samples of ``s * r - f(r)``; a lower bound of the conjugate."""
    s = np.asarray(s, dtype=float)
    finite = np.isfinite(f.values)
    r = f.abscissae[finite]
    v = f.values[finite]
    flat = s.ravel()
    out = np.empty(flat.size)
    chunk = max(1, 2_000_000 // max(r.size, 1))
    for k in range(0, flat.size, chunk):
        blk = flat[k:k + chunk]
        out[k:k + chunk] = np.max(blk[:, None] * r[None, :] - v[None, :], axis=1)
    out = out.reshape(s.shape)
    return float(out) if out.ndim == 0 else out


def _stencil(grid, kface):
    """Dense matrix of ``eta -> -div(k grad0 eta)`` and the Dirichlet lift.

    Returns ``(L, lift)`` where ``-div(k grad_g eta) = L @ eta - lift(g)``.
    Built face by face from the cell adjacency only.
    """
    n = grid.ncells
    L = np.zeros((n, n))
    lift = np.zeros((n, grid.nfaces))
    vol = grid.cell_volume
    for f in range(grid.nfaces):
        kind = grid.face_kind[f]
        a, h, k = grid.face_area[f], grid.face_h[f], kface[f]
        lo, hi = grid.face_lo[f], grid.face_hi[f]
        if kind == INTERIOR:
            c = k * a / (h * vol)
            L[lo, lo] += c
            L[hi, hi] += c
            L[lo, hi] -= c
            L[hi, lo] -= c
        elif kind == DIRICHLET:
            cell = lo if lo >= 0 else hi
            c = 2.0 * k * a / (h * vol)
            L[cell, cell] += c
            lift[cell, f] += c
    return L, lift


def _data_divergence(grid, q):
    """Divergence of face data, accumulated face by face."""
    out = np.zeros(grid.ncells)
    for f in range(grid.nfaces):
        w = q[f] * grid.face_area[f] / grid.cell_volume
        if grid.face_lo[f] >= 0:
            out[grid.face_lo[f]] += w
        if grid.face_hi[f] >= 0:
            out[grid.face_hi[f]] -= w
    return out


def direct_linear_solve(pd):
    """Dense solve of the fully quadratic proximal step.

    With ``beta = a r^2 / 2`` and ``F = |A|^2 / (2k)`` the optimality
    system is ``eta / a + tau L_k eta = mu + tau div(chi) + boundary data``.

    Returns
    -------
    rho, eta : ndarray
    """
    if pd.beta.kind != "quadratic" or pd.cost.kind != "quadratic" or pd.alpha != 1:
        raise UnsupportedEntry("direct_linear_solve needs alpha=1 with quadratic beta and cost")
    grid = pd.grid
    if grid.ncells > 64 * 64:
        raise UnsupportedEntry("dense oracle limited to 64^2 cells")
    a = np.broadcast_to(pd.beta.coefficient(grid.cell_centers), (grid.ncells,))
    k = np.broadcast_to(pd.cost.coefficient(grid.face_centers), (grid.nfaces,))
    L, lift = _stencil(grid, k)
    tau = pd.tau_scale
    q = np.array(pd.chi, dtype=float)
    for f in range(grid.nfaces):
        if grid.face_kind[f] == NEUMANN:
            q[f] = grid.nu[f] * pd.bd.pi[f]
    rhs = pd.mu + tau * _data_divergence(grid, q) + tau * lift @ pd.bd.g
    A = np.diag(1.0 / a) + tau * L
    eta = np.linalg.solve(A, rhs)
    return eta / a, eta


def linear_system_residual(pd, eta):
    """Max-norm residual of the dense system at ``eta`` (oracle self-check)."""
    grid = pd.grid
    a = np.broadcast_to(pd.beta.coefficient(grid.cell_centers), (grid.ncells,))
    k = np.broadcast_to(pd.cost.coefficient(grid.face_centers), (grid.nfaces,))
    L, lift = _stencil(grid, k)
    q = np.where(grid.neumann, grid.nu * pd.bd.pi, pd.chi)
    rhs = pd.mu + pd.tau_scale * (_data_divergence(grid, q) + lift @ pd.bd.g)
    return float(np.max(np.abs(eta / a + pd.tau_scale * L @ eta - rhs)))


def dense_laplacian(grid, k=1.0):
    """Dense ``-div(k grad0 .)`` with homogeneous Dirichlet data."""
    kf = np.broadcast_to(np.asarray(k, dtype=float), (grid.nfaces,))
    return _stencil(grid, kf)[0]


def heat_exact(t, x):
    """exp(-pi^2 t) sin(pi x): heat equation on (0, 1) with zero Dirichlet data."""
    return np.exp(-np.pi**2 * np.asarray(t, dtype=float)) * np.sin(np.pi * np.asarray(x, dtype=float))


@lru_cache(maxsize=None)
def barenblatt_constant(m, mass=1.0):
    """Height constant C giving the requested mass for the 1-D profile."""
    a = 1.0 / (m + 1.0)
    kappa = (m - 1.0) * a / (2.0 * m)
    gam = 1.0 / (m - 1.0)
    edge = 1.0 / np.sqrt(kappa)
    m1, _ = integrate.quad(lambda z: max(1.0 - kappa * z * z, 0.0) ** gam, -edge, edge,
                           epsabs=1e-13, epsrel=1e-13)
    # mass(C) = C^(gam + 1/2) * m1
    return (mass / m1) ** (1.0 / (gam + 0.5))


def barenblatt(t, x, m, mass=1.0):
    """Source-type solution of d_t rho = (rho^m)_xx on the real line."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    a = 1.0 / (m + 1.0)
    kappa = (m - 1.0) * a / (2.0 * m)
    C = barenblatt_constant(float(m), float(mass))
    core = np.maximum(C - kappa * x * x * t ** (-2.0 * a), 0.0)
    return t ** (-a) * core ** (1.0 / (m - 1.0))


def barenblatt_support(t, m, mass=1.0):
    """Half-width of the Barenblatt support at time t."""
    a = 1.0 / (m + 1.0)
    kappa = (m - 1.0) * a / (2.0 * m)
    return np.sqrt(barenblatt_constant(float(m), float(mass)) / kappa) * t**a
