# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled primal-dual inner loop with inline prox maps.

Beta codes: 0 quadratic, 1 pme, 2 stefan, 3 heleshaw.
Cost codes: 0 quadratic, 1 ppower.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, pow

cnp.import_array()


cdef inline double _sign(double v) nogil:
    if v > 0:
        return 1.0
    if v < 0:
        return -1.0
    return 0.0


cdef double _power_root(double a, double c, double e) nogil:
    """Root u >= 0 of u + c u^e = a, by monotone Newton from above."""
    cdef double u, w, f, df, step, r
    cdef int k
    if a <= 0.0:
        return 0.0
    if e == 1.0:
        return a / (1.0 + c)
    if e == 2.0:
        return 2.0 * a / (1.0 + sqrt(1.0 + 4.0 * c * a))
    if e == 0.5:
        r = 2.0 * a / (c + sqrt(c * c + 4.0 * a))
        return r * r
    if e > 1.0:
        # convex increasing in u; start right of the root
        u = a
        if c > 0:
            w = pow(a / c, 1.0 / e)
            if w < u:
                u = w
        for k in range(100):
            f = u + c * pow(u, e) - a
            df = 1.0 + c * e * pow(u, e - 1.0)
            step = f / df
            u -= step
            if u < 0.0:
                u = 0.0
            if fabs(step) <= 1e-15 * (1.0 + u):
                break
        return u
    # e < 1: solve in w = u^e, where w^(1/e) + c w - a is convex
    r = 1.0 / e
    w = a / c
    u = pow(a, e)
    if u < w:
        w = u
    for k in range(100):
        f = pow(w, r) + c * w - a
        df = r * pow(w, r - 1.0) + c
        step = f / df
        w -= step
        if w < 0.0:
            w = 0.0
        if fabs(step) <= 1e-15 * (1.0 + w):
            break
    return pow(w, r)


cdef inline double _beta_prox(int kind, double c, double lam, double s,
                              double m, double a1, double a2) nogil:
    cdef double A1, A2
    if kind == 0:
        return s / (1.0 + lam * c)
    if kind == 1:
        return _sign(s) * _power_root(fabs(s), lam * c, m)
    if kind == 2:
        A1 = a1 * c
        A2 = a2 * c
        if s > A1:
            return (s + lam * A1) / (1.0 + lam)
        if s < -A2:
            return (s - lam * A2) / (1.0 + lam)
        return s
    if s > 1.0:
        return 1.0
    if s < -1.0:
        return -1.0
    return s


cdef inline double _cost_prox(int kind, double k, double lam, double v, double p) nogil:
    cdef double q
    if kind == 0:
        return k * v / (k + lam)
    q = p / (p - 1.0)
    return _sign(v) * _power_root(fabs(v), lam * pow(k, 1.0 - q), q - 1.0)


def run_chunk(const int[::1] g_ptr, const int[::1] g_idx, const double[::1] g_val,
              const int[::1] d_ptr, const int[::1] d_idx, const double[::1] d_val,
              const double[::1] wc, const double[::1] wf,
              const double[::1] b, const double[::1] gs,
              const double[::1] c_cells, const double[::1] k_free,
              int beta_kind, double m, double a1, double a2,
              int cost_kind, double p,
              double alpha, double tau_s, double theta,
              double[::1] rho, double[::1] phi, double[::1] eta,
              double tp, double sg, int n_iter):
    """Run ``n_iter`` iterations in place; return (primal, dual) residual norms."""
    cdef Py_ssize_t nc = rho.shape[0]
    cdef Py_ssize_t nf = phi.shape[0]
    cdef double[::1] rho_o = np.empty(nc)
    cdef double[::1] phi_o = np.empty(nf)
    cdef double[::1] eta_o = np.empty(nc)
    cdef double[::1] rbar = np.empty(nc)
    cdef double[::1] pbar = np.empty(nf)
    cdef Py_ssize_t i, j, it
    cdef double acc, v, new, pres = 0.0, dres = 0.0, de, t1, t2
    cdef bint last

    with nogil:
        for it in range(n_iter):
            last = it == n_iter - 1
            if last:
                for i in range(nc):
                    rho_o[i] = rho[i]
                    eta_o[i] = eta[i]
                for j in range(nf):
                    phi_o[j] = phi[j]
            # primal step on rho
            if alpha > 0:
                for i in range(nc):
                    v = rho[i] + tp * alpha * eta[i]
                    new = _beta_prox(beta_kind, c_cells[i], tp * alpha, v, m, a1, a2)
                    rbar[i] = new + theta * (new - rho[i])
                    rho[i] = new
            else:
                for i in range(nc):
                    rbar[i] = 0.0
            # primal step on phi
            for j in range(nf):
                acc = gs[j]
                for i in range(g_ptr[j], g_ptr[j + 1]):
                    acc += g_val[i] * eta[g_idx[i]]
                v = phi[j] + tp * tau_s * acc
                new = _cost_prox(cost_kind, k_free[j], tp * tau_s, v, p)
                pbar[j] = new + theta * (new - phi[j])
                phi[j] = new
            # dual ascent
            for i in range(nc):
                acc = 0.0
                for j in range(d_ptr[i], d_ptr[i + 1]):
                    acc += d_val[j] * pbar[d_idx[j]]
                eta[i] = eta[i] + sg * (b[i] - alpha * rbar[i] + tau_s * acc)
        # residuals of the last iteration
        if n_iter > 0:
            for i in range(nc):
                de = eta_o[i] - eta[i]
                t1 = (rho_o[i] - rho[i]) / tp - alpha * de
                pres += wc[i] * t1 * t1
            for j in range(nf):
                acc = 0.0
                for i in range(g_ptr[j], g_ptr[j + 1]):
                    acc += g_val[i] * (eta_o[g_idx[i]] - eta[g_idx[i]])
                t1 = (phi_o[j] - phi[j]) / tp - tau_s * acc
                pres += wf[j] * t1 * t1
            for i in range(nc):
                acc = 0.0
                for j in range(d_ptr[i], d_ptr[i + 1]):
                    acc += d_val[j] * (phi_o[d_idx[j]] - phi[d_idx[j]])
                t2 = (eta_o[i] - eta[i]) / sg - (alpha * (rho_o[i] - rho[i]) - tau_s * acc)
                dres += wc[i] * t2 * t2
    return sqrt(pres), sqrt(dres)
