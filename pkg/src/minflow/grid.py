"""Uniform staggered grids in 1D/2D with mixed Dirichlet/Neumann boundaries.

Layout
------
Cells are numbered ``c = i * ny + j`` (x index major).  Faces carry the
normal component of a vector field along their axis: the ``(nx+1) * ny``
x-normal faces come first (``f = i * ny + j`` for ``i = 0..nx``), followed
by the ``nx * (ny+1)`` y-normal faces.  In 1D ``ny = 1`` and only x faces
exist.

Quadrature weights: ``w_c`` is the cell volume; ``w_f`` is ``h * area`` on
interior faces and ``(h/2) * area`` on boundary faces.  With these weights
the discrete gradient and divergence satisfy an exact summation-by-parts
identity (see :func:`green_defect`).
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import CFLViolation, InvalidSpec, SizeMismatch

INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2
SIDES = {1: ("left", "right"), 2: ("left", "right", "bottom", "top")}
_LABELS = {"dirichlet": DIRICHLET, "neumann": NEUMANN}


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class Grid:
    """Immutable uniform staggered grid.

    Parameters
    ----------
    dim : int
        1 or 2.
    counts : sequence of int
        Cells per axis.
    lengths : sequence of float
        Domain extent per axis; the domain is ``[0, lx] x [0, ly]``.
    labels : dict
        Maps every side (``left``, ``right`` and in 2D ``bottom``, ``top``)
        to ``"dirichlet"`` or ``"neumann"``.
    allow_pure_neumann : bool
        Permit a boundary without Dirichlet faces.  This leaves the setting
        covered by the existence theory; no guarantees are made.
    """

    def __init__(self, dim, counts, lengths, labels, allow_pure_neumann=False, origin=None):
        if dim not in (1, 2):
            raise InvalidSpec("dim must be 1 or 2")
        counts = tuple(int(n) for n in np.atleast_1d(counts))
        lengths = tuple(float(v) for v in np.atleast_1d(lengths))
        if len(counts) != dim or len(lengths) != dim:
            raise InvalidSpec("counts and lengths need one entry per axis")
        if any(n < 1 for n in counts):
            raise InvalidSpec("cell counts must be positive")
        if any(not v > 0 for v in lengths):
            raise InvalidSpec("domain lengths must be positive")
        missing = [s for s in SIDES[dim] if s not in labels]
        if missing:
            raise InvalidSpec(f"unlabeled boundary sides: {missing}")
        bad = {s: v for s, v in labels.items() if s not in SIDES[dim] or str(v).lower() not in _LABELS}
        if bad:
            raise InvalidSpec(f"invalid boundary labels: {bad}")
        self.dim = dim
        self.counts = counts
        self.lengths = lengths
        self.labels = {s: str(labels[s]).lower() for s in SIDES[dim]}
        self.origin = tuple(float(o) for o in (origin if origin is not None else (0.0,) * dim))
        self.h = tuple(L / n for L, n in zip(lengths, counts))
        self.allow_pure_neumann = bool(allow_pure_neumann)
        self._build()
        if not self.dirichlet.any() and not allow_pure_neumann:
            raise InvalidSpec("at least one Dirichlet side is required")

    # -- construction -------------------------------------------------------
    def _build(self):
        nx = self.counts[0]
        ny = self.counts[1] if self.dim == 2 else 1
        hx = self.h[0]
        hy = self.h[1] if self.dim == 2 else 1.0
        self.nx, self.ny = nx, ny
        self.cell_volume = hx * hy
        self.ncells = nx * ny
        ox = self.origin[0]
        oy = self.origin[1] if self.dim == 2 else 0.0

        I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        xc = ox + (I.ravel() + 0.5) * hx
        yc = oy + (J.ravel() + 0.5) * hy
        self.cell_centers = _readonly(xc[:, None] if self.dim == 1 else np.column_stack([xc, yc]))

        # x faces
        Ix, Jx = np.meshgrid(np.arange(nx + 1), np.arange(ny), indexing="ij")
        Ix, Jx = Ix.ravel(), Jx.ravel()
        lo_x = np.where(Ix > 0, (Ix - 1) * ny + Jx, -1)
        hi_x = np.where(Ix < nx, Ix * ny + Jx, -1)
        kind_x = np.full(Ix.size, INTERIOR)
        kind_x[Ix == 0] = _LABELS[self.labels["left"]]
        kind_x[Ix == nx] = _LABELS[self.labels["right"]]
        cen_x = np.column_stack([ox + Ix * hx, oy + (Jx + 0.5) * hy])
        faces = [(lo_x, hi_x, kind_x, np.zeros(Ix.size, int), cen_x, hy, hx)]
        if self.dim == 2:
            Iy, Jy = np.meshgrid(np.arange(nx), np.arange(ny + 1), indexing="ij")
            Iy, Jy = Iy.ravel(), Jy.ravel()
            lo_y = np.where(Jy > 0, Iy * ny + Jy - 1, -1)
            hi_y = np.where(Jy < ny, Iy * ny + Jy, -1)
            kind_y = np.full(Iy.size, INTERIOR)
            kind_y[Jy == 0] = _LABELS[self.labels["bottom"]]
            kind_y[Jy == ny] = _LABELS[self.labels["top"]]
            cen_y = np.column_stack([ox + (Iy + 0.5) * hx, oy + Jy * hy])
            faces.append((lo_y, hi_y, kind_y, np.ones(Iy.size, int), cen_y, hx, hy))

        lo = np.concatenate([f[0] for f in faces])
        hi = np.concatenate([f[1] for f in faces])
        kind = np.concatenate([f[2] for f in faces])
        axis = np.concatenate([f[3] for f in faces])
        area = np.concatenate([np.full(f[0].size, f[5]) for f in faces])
        hface = np.concatenate([np.full(f[0].size, f[6]) for f in faces])
        centers = np.concatenate([f[4] for f in faces])
        if self.dim == 1:
            centers = centers[:, :1]

        self.nfaces = lo.size
        self.face_lo = _readonly(lo)
        self.face_hi = _readonly(hi)
        self.face_kind = _readonly(kind)
        self.face_axis = _readonly(axis)
        self.face_area = _readonly(area)
        self.face_h = _readonly(hface)
        self.face_centers = _readonly(centers)
        boundary = kind != INTERIOR
        self.nu = _readonly(np.where(lo < 0, -1.0, np.where(hi < 0, 1.0, 0.0)))
        self.face_cell = _readonly(np.where(lo >= 0, lo, hi))
        self.interior = _readonly(kind == INTERIOR)
        self.dirichlet = _readonly(kind == DIRICHLET)
        self.neumann = _readonly(kind == NEUMANN)
        self.free = _readonly(kind != NEUMANN)
        self.free_index = _readonly(np.flatnonzero(kind != NEUMANN))
        self.wc = _readonly(np.full(self.ncells, self.cell_volume))
        self.wf = _readonly(np.where(boundary, 0.5, 1.0) * hface * area)

        # gradient with homogeneous Dirichlet data; Neumann rows stay empty
        rows, cols, vals = [], [], []
        f_int = np.flatnonzero(self.interior)
        for cells, sign in ((lo[f_int], -1.0), (hi[f_int], 1.0)):
            rows.append(f_int)
            cols.append(cells)
            vals.append(sign / hface[f_int])
        f_d = np.flatnonzero(self.dirichlet)
        rows.append(f_d)
        cols.append(self.face_cell[f_d])
        vals.append(-self.nu[f_d] * 2.0 / hface[f_d])
        self.G0 = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.nfaces, self.ncells),
        )
        # divergence over all faces: a cell gains +a/vol from its high face
        rows, cols, vals = [], [], []
        for cells, sign in ((lo, 1.0), (hi, -1.0)):
            m = cells >= 0
            rows.append(cells[m])
            cols.append(np.flatnonzero(m))
            vals.append(sign * area[m] / self.cell_volume)
        self.D = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.ncells, self.nfaces),
        )
        self.G0.data.flags.writeable = False
        self.D.data.flags.writeable = False

    @cached_property
    def G_free(self):
        """Homogeneous gradient restricted to the free (non-Neumann) faces."""
        return sp.csr_matrix(self.G0[self.free_index])

    @cached_property
    def D_free(self):
        """Divergence of fluxes supported on the free faces."""
        return sp.csr_matrix(self.D[:, self.free_index])

    # -- helpers ------------------------------------------------------------
    @property
    def n_dirichlet(self):
        return int(self.dirichlet.sum())

    @property
    def n_neumann(self):
        return int(self.neumann.sum())

    def check_cells(self, v, name="cell field"):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.ncells,):
            raise SizeMismatch(f"{name} has shape {v.shape}, expected ({self.ncells},)")
        return v

    def check_faces(self, v, name="face field"):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.nfaces,):
            raise SizeMismatch(f"{name} has shape {v.shape}, expected ({self.nfaces},)")
        return v

    def side_mask(self, side):
        """Boolean face mask of one boundary side."""
        if side not in SIDES[self.dim]:
            raise InvalidSpec(f"unknown side {side!r} for a {self.dim}D grid")
        axis = SIDES[self.dim].index(side) // 2
        sign = -1.0 if SIDES[self.dim].index(side) % 2 == 0 else 1.0
        return (self.face_kind != INTERIOR) & (self.face_axis == axis) & (self.nu == sign)

    def cell_coords(self):
        """Cell-center coordinates as a tuple of 1-D arrays (x[, y])."""
        return tuple(self.cell_centers[:, k] for k in range(self.dim))

    def face_coords(self):
        return tuple(self.face_centers[:, k] for k in range(self.dim))

    def integrate(self, cell_values):
        return float(np.dot(self.check_cells(cell_values), self.wc))

    def __repr__(self):
        return f"Grid(dim={self.dim}, counts={self.counts}, lengths={self.lengths}, labels={self.labels})"


def build_grid(dim, counts, lengths, labels, allow_pure_neumann=False, origin=None) -> Grid:
    """Construct a :class:`Grid`; see its docstring for the parameters."""
    return Grid(dim, counts, lengths, labels, allow_pure_neumann=allow_pure_neumann, origin=origin)


@dataclass
class BoundaryData:
    """Dirichlet values ``g`` and Neumann flux densities ``pi`` per face.

    Both arrays have one entry per face; entries off the relevant boundary
    part are ignored and stored as zero.
    """

    g: np.ndarray
    pi: np.ndarray


def _face_values(grid, spec, mask):
    out = np.zeros(grid.nfaces)
    if spec is None:
        return out
    if callable(spec):
        vals = np.broadcast_to(np.asarray(spec(grid.face_centers[mask]), dtype=float), (int(mask.sum()),))
        out[mask] = vals
        return out
    arr = np.asarray(spec, dtype=float)
    if arr.ndim == 0:
        out[mask] = float(arr)
    elif arr.shape == (grid.nfaces,):
        out[mask] = arr[mask]
    elif arr.shape == (int(mask.sum()),):
        out[mask] = arr
    else:
        raise SizeMismatch(f"boundary data of shape {arr.shape} does not match the grid")
    if not np.all(np.isfinite(out)):
        raise InvalidSpec("boundary data must be finite")
    return out


def boundary_data(grid: Grid, g=0.0, pi=0.0) -> BoundaryData:
    """Build :class:`BoundaryData` from scalars, callables of position, or arrays.

    Arrays may have one entry per face or one per Dirichlet (resp. Neumann)
    face in face order.
    """
    return BoundaryData(_face_values(grid, g, grid.dirichlet), _face_values(grid, pi, grid.neumann))


def _g_array(grid, g):
    if isinstance(g, BoundaryData):
        return g.g
    if g is None:
        return np.zeros(grid.nfaces)
    return _face_values(grid, g, grid.dirichlet)


def gradient_shift(grid: Grid, g) -> np.ndarray:
    """Affine part of the gradient: ``nu * g * 2 / h`` on Dirichlet faces."""
    ga = _g_array(grid, g)
    return np.where(grid.dirichlet, grid.nu * ga * 2.0 / grid.face_h, 0.0)


def gradient(grid: Grid, eta, g=None) -> np.ndarray:
    """Face-normal gradient of a cell field with Dirichlet data ``g``.

    Interior faces use centered differences, Dirichlet faces a one-sided
    difference over half a cell towards ``g``; Neumann entries are zero.
    """
    eta = grid.check_cells(eta, "eta")
    return grid.G0 @ eta + gradient_shift(grid, g)


def divergence(grid: Grid, phi) -> np.ndarray:
    """Cellwise divergence of a face-normal field (all faces participate)."""
    return grid.D @ grid.check_faces(phi, "phi")


def green_terms(grid: Grid, eta, phi, g=None):
    """The four sums of the discrete Green identity (they add up to zero)."""
    eta = grid.check_cells(eta, "eta")
    phi = grid.check_faces(phi, "phi")
    ga = _g_array(grid, g)
    grad = gradient(grid, eta, ga)
    a = grid.face_area
    t_grad = np.sum((grad * phi * grid.wf)[grid.free])
    t_div = np.dot(eta * divergence(grid, phi), grid.wc)
    t_dir = -np.sum((phi * grid.nu * ga * a)[grid.dirichlet])
    t_neu = -np.sum((phi * grid.nu * eta[grid.face_cell] * a)[grid.neumann])
    return t_grad, t_div, t_dir, t_neu


def green_defect(grid: Grid, eta, phi, g=None) -> float:
    """Absolute defect of the summation-by-parts identity.

    ``sum_free grad(eta) phi w_f + sum eta div(phi) w_c
    - sum_D phi nu g a - sum_N phi nu eta_c a``; zero up to roundoff.
    """
    return abs(float(sum(green_terms(grid, eta, phi, g))))


def green_scale(grid: Grid, eta, phi, g=None) -> float:
    """Magnitude reference for :func:`green_defect` (sum of term moduli)."""
    eta = grid.check_cells(eta)
    phi = grid.check_faces(phi)
    ga = _g_array(grid, g)
    grad = gradient(grid, eta, ga)
    return float(
        np.sum(np.abs(grad * phi * grid.wf))
        + np.sum(np.abs(grid.D) @ np.abs(phi) * np.abs(eta) * grid.wc)
        + np.sum(np.abs(phi * ga) * grid.face_area)
        + np.sum(np.abs(phi * eta[grid.face_cell]) * grid.face_area)
    )


def upwind_face_values(grid: Grid, rho, vel, boundary_state=None) -> np.ndarray:
    """Donor-cell face values of ``rho`` for the face-normal velocity ``vel``.

    On boundary faces the interior cell is the donor for outflow
    (``vel * nu > 0``); for inflow the value comes from ``boundary_state``
    (one entry per face, NaN or None meaning no inflow, i.e. zero).
    """
    rho = grid.check_cells(rho, "rho")
    vel = grid.check_faces(vel, "velocity")
    lo, hi = grid.face_lo, grid.face_hi
    rlo = np.where(lo >= 0, rho[np.maximum(lo, 0)], np.nan)
    rhi = np.where(hi >= 0, rho[np.maximum(hi, 0)], np.nan)
    up = np.where(vel > 0, rlo, rhi)
    bnd = ~grid.interior
    outflow = bnd & (vel * grid.nu > 0)
    up = np.where(outflow, rho[grid.face_cell], up)
    inflow = bnd & ~outflow
    if boundary_state is None:
        up = np.where(inflow, 0.0, up)
    else:
        bs = np.asarray(boundary_state, dtype=float)
        up = np.where(inflow, np.nan_to_num(bs, nan=0.0), up)
    return up


def upwind_advect(grid: Grid, rho, V, dt, cfl_limit=0.5, boundary_state=None) -> np.ndarray:
    """One explicit donor-cell step of ``d_t rho + div(rho V) = 0``.

    Parameters
    ----------
    V : FaceField
        Face-normal velocity.
    cfl_limit : float
        Largest admissible ``dt * max|V| / min(h)``; the default 1/2 keeps
        the 2D scheme monotone.
    boundary_state : FaceField, optional
        ``None`` closes every boundary face (zero flux, mass conserved).
        Otherwise faces with a finite entry are open: outflow carries the
        adjacent cell value and inflow carries the given state.  NaN
        entries stay closed.

    Raises
    ------
    CFLViolation
        If ``dt`` exceeds the CFL bound.
    """
    rho = grid.check_cells(rho, "rho")
    V = grid.check_faces(V, "V")
    vmax = float(np.max(np.abs(V))) if V.size else 0.0
    cfl = dt * vmax / min(grid.h)
    if cfl > cfl_limit * (1 + 1e-12):
        raise CFLViolation(f"CFL number {cfl:.4g} exceeds {cfl_limit:.4g}")
    if vmax == 0.0:
        return rho.copy()
    flux = V * upwind_face_values(grid, rho, V, boundary_state)
    if boundary_state is None:
        flux = np.where(grid.interior, flux, 0.0)
    else:
        closed = ~grid.interior & ~np.isfinite(np.asarray(boundary_state, dtype=float))
        flux = np.where(closed, 0.0, flux)
    return rho - dt * (grid.D @ flux)


def cell_to_face(grid: Grid, v) -> np.ndarray:
    """Face-normal values of a velocity given on cells or analytically.

    ``v`` may be a CellField (scalar per cell, averaged onto faces), a
    tuple of per-axis CellFields, or a callable mapping an ``(n, dim)``
    array of face centers to ``(n, dim)`` velocities (or ``(n,)`` in 1D).
    """
    if callable(v):
        vals = np.asarray(v(grid.face_centers), dtype=float)
        if vals.ndim == 1:
            if grid.dim != 1:
                raise SizeMismatch("analytic velocity must return one column per axis")
            return vals.copy()
        return vals[np.arange(grid.nfaces), grid.face_axis].copy()
    if isinstance(v, (tuple, list)) and len(v) == grid.dim and np.ndim(v[0]) == 1:
        comps = [grid.check_cells(c) for c in v]
        out = np.empty(grid.nfaces)
        for k in range(grid.dim):
            m = grid.face_axis == k
            out[m] = _average(grid, comps[k])[m]
        return out
    return _average(grid, grid.check_cells(v, "v"))


def _average(grid, c):
    lo, hi = grid.face_lo, grid.face_hi
    a = np.where(lo >= 0, c[np.maximum(lo, 0)], np.nan)
    b = np.where(hi >= 0, c[np.maximum(hi, 0)], np.nan)
    return np.where(lo < 0, b, np.where(hi < 0, a, 0.5 * (a + b)))
