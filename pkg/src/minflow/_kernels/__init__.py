"""Backend selection for the primal-dual inner loop.

The compiled extension ``_core`` is used when it imports and supports the
entry kinds; setting ``MINFLOW_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import _pdhg_py

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

HAVE_COMPILED = _core is not None

BETA_CODES = {"quadratic": 0, "pme": 1, "stefan": 2, "heleshaw": 3}
COST_CODES = {"quadratic": 0, "ppower": 1}


def default_backend():
    if os.environ.get("MINFLOW_PURE_PYTHON", "") not in ("", "0"):
        return "python"
    return "compiled" if HAVE_COMPILED else "python"


@dataclass
class KernelProblem:
    """Flattened data of one saddle instance, shared by both backends."""

    G: object  # free faces x cells, CSR
    Df: object  # cells x free faces, CSR
    wc: np.ndarray
    wf: np.ndarray
    b: np.ndarray
    gs: np.ndarray
    c_cells: np.ndarray
    k_free: np.ndarray
    beta: object
    cost: object
    alpha: float
    tau_s: float
    theta: float

    def __post_init__(self):
        i32 = np.int32
        self.csr = tuple(
            np.ascontiguousarray(a, dtype=t)
            for M in (self.G, self.Df)
            for a, t in ((M.indptr, i32), (M.indices, i32), (M.data, float))
        )


@dataclass
class KernelState:
    rho: np.ndarray
    phi: np.ndarray
    eta: np.ndarray
    tau: float
    sigma: float


def compiled_supports(kp):
    return HAVE_COMPILED and (kp.alpha == 0 or kp.beta.kind in BETA_CODES)


def run_chunk(kp, st, n_iter, backend=None):
    backend = backend or default_backend()
    if backend == "compiled" and compiled_supports(kp):
        beta = kp.beta
        return _core.run_chunk(
            *kp.csr,
            kp.wc, kp.wf, kp.b, kp.gs, kp.c_cells, kp.k_free,
            BETA_CODES.get(beta.kind, 0), float(beta.m), float(beta.a1), float(beta.a2),
            COST_CODES[kp.cost.kind], float(kp.cost.p),
            float(kp.alpha), float(kp.tau_s), float(kp.theta),
            st.rho, st.phi, st.eta, float(st.tau), float(st.sigma), int(n_iter),
        )
    return _pdhg_py.run_chunk(kp, st, n_iter)
