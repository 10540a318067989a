"""Pure numpy implementation of the primal-dual inner loop."""

import numpy as np

from ..nonlinearity import _beta_prox, _cost_prox_mag


def run_chunk(kp, st, n_iter):
    """Advance the iteration ``n_iter`` times in place.

    Returns the weighted primal and dual residual norms of the last step,
    which drive the step-size balancing.
    """
    a, ts, th = kp.alpha, kp.tau_s, kp.theta
    tp, sg = st.tau, st.sigma
    rho, phi, eta = st.rho, st.phi, st.eta
    pres = dres = 0.0
    for it in range(n_iter):
        if a > 0:
            rho_n = _beta_prox(kp.beta, kp.c_cells, tp * a, rho + tp * a * eta)
        else:
            rho_n = rho
        v = phi + tp * ts * (kp.G @ eta + kp.gs)
        phi_n = np.sign(v) * _cost_prox_mag(kp.cost, kp.k_free, tp * ts, np.abs(v))
        rb = rho_n + th * (rho_n - rho)
        pb = phi_n + th * (phi_n - phi)
        eta_n = eta + sg * (kp.b - a * rb + ts * (kp.Df @ pb))
        if it == n_iter - 1:
            de = eta - eta_n
            dr = rho - rho_n
            dp = phi - phi_n
            pr_r = dr / tp - a * de
            pr_p = dp / tp - ts * (kp.G @ de)
            pres = np.sqrt(np.dot(pr_r * pr_r, kp.wc) + np.dot(pr_p * pr_p, kp.wf))
            du = de / sg - (a * dr - ts * (kp.Df @ dp))
            dres = np.sqrt(np.dot(du * du, kp.wc))
        rho, phi, eta = rho_n, phi_n, eta_n
    st.rho[:] = rho
    st.phi[:] = phi
    st.eta[:] = eta
    return float(pres), float(dres)
