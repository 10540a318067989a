"""Dual Sobolev norm of ``f = f0 + div(fbar)`` and the induced metric.

The norm is computed from the potential problem

    J(z) = (1/p) sum |grad0 z|^p w_f - sum f0 z w_c + sum fbar grad0 z w_f

over cell fields ``z`` vanishing on the Dirichlet boundary.  At the
minimiser ``sum |grad0 z|^p w_f = <f, z>``, so ``-p' min J`` is the p'-th
power of the norm.  ``fbar`` is only read on free faces; Neumann entries
carry no weight.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NewtonStall, SingularSystem


@dataclass
class DualElement:
    """Cell part ``f0`` and face part ``fbar`` of a functional on the grid."""

    f0: np.ndarray
    fbar: np.ndarray

    def scaled(self, lam):
        return DualElement(lam * np.asarray(self.f0), lam * np.asarray(self.fbar))

    def __add__(self, other):
        return DualElement(np.asarray(self.f0) + other.f0, np.asarray(self.fbar) + other.fbar)


def _pairing_vector(grid, f):
    """Euclidean gradient of the linear part: ``<f, z> = c . z``."""
    f0 = grid.check_cells(f.f0, "f0")
    fbar = grid.check_faces(f.fbar, "fbar")
    G = grid.G_free
    wf = grid.wf[grid.free_index]
    return grid.wc * f0 - G.T @ (wf * fbar[grid.free_index])


def potential(grid, f: DualElement, p: float, max_iters=200):
    """Minimiser ``z`` of the potential problem and the optimal value."""
    if not grid.dirichlet.any():
        raise SingularSystem("the dual norm needs at least one Dirichlet face")
    if not 1.0 < p < np.inf:
        raise ValueError("p must lie in (1, inf)")
    c = _pairing_vector(grid, f)
    G = grid.G_free
    wf = grid.wf[grid.free_index]
    L = sp.csc_matrix(G.T @ sp.diags(wf) @ G)
    z = spla.spsolve(L, c)
    if np.max(np.abs(c)) == 0.0:
        return np.zeros(grid.ncells), 0.0

    def J(z):
        gz = G @ z
        return float(np.dot(np.abs(gz) ** p, wf) / p - np.dot(c, z))

    if p == 2.0:
        return z, J(z)
    # rescale the linear guess to the exact optimum along its ray
    gz = G @ z
    s = np.dot(c, z) / np.dot(np.abs(gz) ** p, wf)
    z = z * np.sign(s) * abs(s) ** (1.0 / (p - 1.0))
    # Newton on the smoothed density (x^2 + eps^2)^(p/2) / p, eps -> 0
    scale = float(np.max(np.abs(G @ z)))
    for eps in scale * 10.0 ** -np.arange(1.0, 15.0):
        z = _smoothed_newton(G, wf, c, z, p, eps, max_iters)
    return z, J(z)


def _smoothed_newton(G, wf, c, z, p, eps, max_iters):
    e2 = eps * eps

    def Je(z):
        gz = G @ z
        return float(np.dot((gz * gz + e2) ** (0.5 * p), wf) / p - np.dot(c, z))

    val = Je(z)
    for _ in range(max_iters):
        gz = G @ z
        r2 = gz * gz + e2
        grad = G.T @ (wf * r2 ** (0.5 * p - 1.0) * gz) - c
        hdiag = r2 ** (0.5 * p - 2.0) * ((p - 1.0) * gz * gz + e2)
        H = sp.csc_matrix(G.T @ sp.diags(wf * hdiag) @ G)
        delta = -spla.spsolve(H, grad)
        dec = -float(np.dot(grad, delta))
        if dec <= 1e-20 * max(1.0, abs(val)):
            return z
        if dec <= 1e-13 * max(1.0, abs(val)):
            # below the resolution of J: take the full Newton step
            z = z + delta
            val = Je(z)
            continue
        t = 1.0
        while True:
            cand = z + t * delta
            cv = Je(cand)
            if cv <= val - 1e-4 * t * dec:
                break
            t *= 0.5
            if t < 1e-12:
                if abs(cv - val) <= 1e-15 * max(1.0, abs(val)):
                    return z
                raise NewtonStall("dual norm line search failed")
        z, val = cand, cv
    raise NewtonStall("dual norm Newton budget exhausted")


def dual_norm(grid, boundary, f: DualElement, p: float) -> float:
    """Norm of ``f`` in the dual of the Dirichlet-anchored W^{1,p} space.

    ``boundary`` is accepted for interface symmetry; only the Dirichlet
    labelling of ``grid`` matters since test functions vanish there.
    """
    z, val = potential(grid, f, p)
    q = p / (p - 1.0)
    return float(max(-q * val, 0.0) ** (1.0 / q))


def metric_increment(grid, boundary, rho_a, rho_b, p: float) -> float:
    """Distance ``||rho_a - rho_b||`` in the dual norm."""
    d = np.asarray(rho_a, dtype=float) - np.asarray(rho_b, dtype=float)
    return dual_norm(grid, boundary, DualElement(d, np.zeros(grid.nfaces)), p)


def pprime_action(traj, p: float) -> float:
    """Discrete metric action ``sum tau_i (d(rho^i, rho^{i-1}) / tau_i)^p'``."""
    q = p / (p - 1.0)
    total = 0.0
    for i in range(1, len(traj.times)):
        tau = traj.times[i] - traj.times[i - 1]
        d = metric_increment(traj.grid, None, traj.rho[i], traj.rho[i - 1], p)
        total += tau * (d / tau) ** q
    return total
