# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled core of the pairwise interaction-energy quadrature.

Mirrors shelab._energy_fallback exactly: same node layout (from
shelab._energy_plan), same conditional-Gaussian kernel evaluation, same
analytic corner completions.  Gamma weights arrive pre-baked in the plan
arrays, so the hot loop only evaluates the spatial kernel's noncentral
Gaussian expectation G(mu, v) at interpolated path differences; the
v-dependent prefactors are hoisted out of the per-cell loops.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log1p, pow, sqrt

cnp.import_array()

cdef double PI = 3.141592653589793238462643383279502884
DEF MAXD = 8
DEF MAXPREF = 2 * MAXD + 2


cdef inline double _lerp_table(const double* tx, const double* ty, int tn,
                               double inv_dx, double x) nogil:
    cdef int i
    cdef double pos, frac
    pos = x * inv_dx
    i = <int>pos
    if i >= tn - 1:
        return ty[tn - 1]
    frac = pos - i
    return ty[i] + frac * (ty[i + 1] - ty[i])


cdef inline void _g_prep(int code, const double* par, int d, double v,
                         double* pref) nogil:
    """Hoist the v-only factors of G(mu, v) for the current node."""
    cdef double s2, a
    cdef int i
    if code == 0:  # constant_test: G = par[0]
        pref[0] = par[0]
    elif code == 1:  # riesz: G = pref0 * R(log1p(r2 * pref1))
        pref[0] = par[0] * pow(v, -0.5 * par[1])
        pref[1] = 1.0 / v
    elif code == 2:  # gaussian_test: G = pref0 * exp(-r2 * pref1)
        s2 = par[1]
        pref[0] = par[0] * pow(s2 / (s2 + v), 0.5 * par[2])
        pref[1] = 0.5 / (s2 + v)
    elif code == 3:  # mollified_white: G = pref0 * exp(-r2 * pref1)
        s2 = par[1] + v
        pref[0] = par[0] / sqrt(2.0 * PI * s2)
        pref[1] = 0.5 / s2
    else:  # fractional: G = norm * prod_i pref[2i] * R_i(log1p(mu_i^2 pref[2i+1]))
        for i in range(d):
            a = par[2 + 2 * i]
            pref[2 * i] = par[3 + 2 * i] * pow(v, -0.5 * a)
            pref[2 * i + 1] = 1.0 / v
        pref[2 * d] = par[0]


cdef inline double _g_eval(int code, const double* par, const double* tx,
                           const double* ty, int tn, double inv_dx,
                           const double* mu, int d, const double* pref) nogil:
    cdef double r2 = 0.0
    cdef double rho, x, val, eta, dd, a
    cdef int i
    if code == 0:
        return pref[0]
    if code == 4:
        val = pref[2 * d]
        for i in range(d):
            rho = mu[i] * mu[i] * pref[2 * i + 1]
            x = log1p(rho)
            a = par[2 + 2 * i]
            if x >= tx[tn - 1]:
                val *= pref[2 * i] * pow(rho, -0.5 * a) * (
                    1.0 + a * (a + 1.0) / (2.0 * rho))
            else:
                val *= pref[2 * i] * _lerp_table(tx + i * tn, ty + i * tn,
                                                 tn, inv_dx, x)
        return val
    for i in range(d):
        r2 += mu[i] * mu[i]
    if code == 1:
        rho = r2 * pref[1]
        x = log1p(rho)
        if x >= tx[tn - 1]:
            eta = par[1]
            dd = par[2]
            return pref[0] * pow(rho, -0.5 * eta) * (
                1.0 + eta * (eta + 2.0 - dd) / (2.0 * rho))
        return pref[0] * _lerp_table(tx, ty, tn, inv_dx, x)
    # gaussian_test / mollified_white
    return pref[0] * exp(-r2 * pref[1])


cdef inline void _kadd(double* total, double* comp, double term) nogil:
    """Kahan-compensated accumulation."""
    cdef double y = term - comp[0]
    cdef double t = total[0] + y
    comp[0] = (t - total[0]) - y
    total[0] = t


def pair_energy_batch(
    cnp.ndarray[cnp.float64_t, ndim=3] paths_a,
    cnp.ndarray[cnp.float64_t, ndim=3] paths_b,
    double h,
    int lam_code,
    cnp.ndarray[cnp.float64_t, ndim=1] lam_params,
    cnp.ndarray[cnp.float64_t, ndim=1] table_x,
    cnp.ndarray[cnp.float64_t, ndim=1] table_y,
    cnp.ndarray[cnp.float64_t, ndim=2] far_shift,
    cnp.ndarray[cnp.float64_t, ndim=2] far_w,
    cnp.ndarray[cnp.float64_t, ndim=1] adj_u,
    cnp.ndarray[cnp.float64_t, ndim=1] adj_w,
    cnp.ndarray[cnp.float64_t, ndim=1] diag_u,
    cnp.ndarray[cnp.float64_t, ndim=1] diag_w,
    int n_tr,
    int base_sub,
    bint self_pair,
    double corner_tail_self,
    double adj_tail_mass_u,
    double adj_corner_v,
    double diag_tail_self,
    double diag_gamma_mass_corner,
    double diag_u_min,
):
    cdef int batch = paths_a.shape[0]
    cdef int S = paths_a.shape[1] - 1
    cdef int d = paths_a.shape[2]
    cdef int n_adj = adj_u.shape[0]
    cdef int n_diag = diag_u.shape[0]
    cdef int tn
    if lam_code == 4:
        tn = table_x.shape[0] // <int>lam_params[1]
    else:
        tn = table_x.shape[0]
    cdef double inv_dx = (tn - 1) / table_x[tn - 1] if table_x[tn - 1] > 0 else 0.0

    out_arr = np.zeros(batch, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[:, :, ::1] A = paths_a
    cdef double[:, :, ::1] B = paths_b
    cdef double[:, ::1] fsh = far_shift
    cdef double[:, ::1] fw = far_w
    cdef double[::1] au = adj_u
    cdef double[::1] aw = adj_w
    cdef double[::1] du_ = diag_u
    cdef double[::1] dw_ = diag_w
    cdef double[::1] par = lam_params
    cdef double[::1] tx = table_x
    cdef double[::1] ty = table_y

    cdef int b, m, node, p, q, a, i, itr, sgn, c
    cdef double total, comp, w_node, shift, a_off, b_off, v, wa, wb, g, band
    cdef double u, ell, hi_lo, alpha_hi, alpha_lo, s_off, r_off, ws
    cdef double mu[MAXD]
    cdef double pref[MAXPREF]
    cdef double eps_clip, uh
    cdef int n0 = base_sub if base_sub > 0 else 1

    if d > MAXD:
        raise ValueError("compiled backend supports d <= 8")

    eps_clip = 1e-9 * h

    with nogil:
        for b in range(batch):
            total = 0.0
            comp = 0.0

            # ---- far cells: bands |a - b| = m >= 2
            for m in range(2, S):
                for node in range(2):
                    shift = fsh[m, node]
                    w_node = fw[m, node] / (n0 * n0)
                    if w_node == 0.0:
                        continue
                    for p in range(n0):
                        for q in range(n0):
                            a_off = (p + 0.5) * h / n0 + 0.5 * shift
                            b_off = (q + 0.5) * h / n0 - 0.5 * shift
                            if a_off < eps_clip:
                                a_off = eps_clip
                            elif a_off > h - eps_clip:
                                a_off = h - eps_clip
                            if b_off < eps_clip:
                                b_off = eps_clip
                            elif b_off > h - eps_clip:
                                b_off = h - eps_clip
                            v = (a_off * (h - a_off) + b_off * (h - b_off)) / h
                            wa = a_off / h
                            wb = b_off / h
                            _g_prep(lam_code, &par[0], d, v, pref)
                            band = 0.0
                            for a in range(m, S):
                                # s in step a (later), r in step a - m
                                for c in range(d):
                                    mu[c] = (A[b, a, c] * (1.0 - wa)
                                             + A[b, a + 1, c] * wa
                                             - B[b, a - m, c] * (1.0 - wb)
                                             - B[b, a - m + 1, c] * wb)
                                band += _g_eval(lam_code, &par[0], &tx[0],
                                                &ty[0], tn, inv_dx, mu, d, pref)
                            if self_pair:
                                _kadd(&total, &comp, 2.0 * w_node * band)
                            else:
                                _kadd(&total, &comp, w_node * band)
                                band = 0.0
                                for a in range(m, S):
                                    # r in step a (later), s in step a - m
                                    for c in range(d):
                                        mu[c] = (A[b, a - m, c] * (1.0 - wb)
                                                 + A[b, a - m + 1, c] * wb
                                                 - B[b, a, c] * (1.0 - wa)
                                                 - B[b, a + 1, c] * wa)
                                    band += _g_eval(lam_code, &par[0], &tx[0],
                                                    &ty[0], tn, inv_dx, mu, d, pref)
                                _kadd(&total, &comp, w_node * band)

            # ---- adjacent cells |a - b| = 1
            for i in range(n_adj):
                u = au[i]
                ws = aw[i] / n_tr
                ell = u if u < 2.0 * h - u else 2.0 * h - u
                hi_lo = u - h if u > h else 0.0
                for itr in range(n_tr):
                    alpha_hi = hi_lo + (itr + 0.5) * ell / n_tr
                    alpha_lo = alpha_hi + h - u
                    v = (alpha_hi * (h - alpha_hi)
                         + alpha_lo * (h - alpha_lo)) / h
                    wa = alpha_hi / h
                    wb = alpha_lo / h
                    _g_prep(lam_code, &par[0], d, v, pref)
                    band = 0.0
                    for a in range(1, S):
                        # s in step a (higher), r in step a - 1
                        for c in range(d):
                            mu[c] = (A[b, a, c] * (1.0 - wa)
                                     + A[b, a + 1, c] * wa
                                     - B[b, a - 1, c] * (1.0 - wb)
                                     - B[b, a, c] * wb)
                        band += _g_eval(lam_code, &par[0], &tx[0], &ty[0], tn,
                                        inv_dx, mu, d, pref)
                    if self_pair:
                        _kadd(&total, &comp, 2.0 * ws * band)
                    else:
                        _kadd(&total, &comp, ws * band)
                        band = 0.0
                        for a in range(1, S):
                            # r in step a (higher), s in step a - 1
                            for c in range(d):
                                mu[c] = (A[b, a - 1, c] * (1.0 - wb)
                                         + A[b, a, c] * wb
                                         - B[b, a, c] * (1.0 - wa)
                                         - B[b, a + 1, c] * wa)
                            band += _g_eval(lam_code, &par[0], &tx[0], &ty[0],
                                            tn, inv_dx, mu, d, pref)
                        _kadd(&total, &comp, ws * band)

            # adjacent corner strips
            if self_pair:
                _kadd(&total, &comp, 2.0 * (S - 1) * corner_tail_self)
            else:
                _g_prep(lam_code, &par[0], d, adj_corner_v, pref)
                band = 0.0
                for a in range(1, S):
                    for c in range(d):
                        mu[c] = A[b, a, c] - B[b, a, c]
                    band += _g_eval(lam_code, &par[0], &tx[0], &ty[0], tn,
                                    inv_dx, mu, d, pref)
                _kadd(&total, &comp, 2.0 * adj_tail_mass_u * band)

            # ---- diagonal cells
            if self_pair:
                for i in range(n_diag):
                    u = du_[i]
                    v = u * (h - u) / h
                    ws = 2.0 * dw_[i]
                    uh = u / h
                    _g_prep(lam_code, &par[0], d, v, pref)
                    band = 0.0
                    for a in range(S):
                        for c in range(d):
                            mu[c] = uh * (A[b, a + 1, c] - A[b, a, c])
                        band += _g_eval(lam_code, &par[0], &tx[0], &ty[0], tn,
                                        inv_dx, mu, d, pref)
                    _kadd(&total, &comp, ws * band)
                _kadd(&total, &comp, S * diag_tail_self)
            else:
                for i in range(n_diag):
                    u = du_[i]
                    ell = h - u
                    ws = dw_[i] / n_tr
                    for sgn in range(2):
                        for itr in range(n_tr):
                            if sgn == 0:
                                s_off = u + (itr + 0.5) * ell / n_tr
                                r_off = s_off - u
                            else:
                                s_off = (itr + 0.5) * ell / n_tr
                                r_off = s_off + u
                            v = (s_off * (h - s_off)
                                 + r_off * (h - r_off)) / h
                            wa = s_off / h
                            wb = r_off / h
                            _g_prep(lam_code, &par[0], d, v, pref)
                            band = 0.0
                            for a in range(S):
                                for c in range(d):
                                    mu[c] = (A[b, a, c] * (1.0 - wa)
                                             + A[b, a + 1, c] * wa
                                             - B[b, a, c] * (1.0 - wb)
                                             - B[b, a + 1, c] * wb)
                                band += _g_eval(lam_code, &par[0], &tx[0],
                                                &ty[0], tn, inv_dx, mu, d, pref)
                            _kadd(&total, &comp, ws * band)
                # corner strip u < u_min across both signs
                for itr in range(n_tr):
                    s_off = (itr + 0.5) * h / n_tr
                    v = 2.0 * s_off * (h - s_off) / h
                    wa = s_off / h
                    _g_prep(lam_code, &par[0], d, v, pref)
                    band = 0.0
                    for a in range(S):
                        for c in range(d):
                            mu[c] = ((A[b, a, c] - B[b, a, c]) * (1.0 - wa)
                                     + (A[b, a + 1, c] - B[b, a + 1, c]) * wa)
                        band += _g_eval(lam_code, &par[0], &tx[0], &ty[0], tn,
                                        inv_dx, mu, d, pref)
                    _kadd(&total, &comp,
                          2.0 * diag_gamma_mass_corner
                          * (h - 0.5 * diag_u_min) * band / n_tr)

            out[b] = total
    return out_arr
