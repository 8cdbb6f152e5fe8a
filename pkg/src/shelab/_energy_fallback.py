"""Pure-NumPy implementation of the pairwise interaction-energy quadrature.

Semantics shared with the compiled backend (shelab._energy):

The energy  I = int_0^t int_0^t gamma(s - r) Lambda(B^i_s - B^j_r) ds dr  is
integrated over the (steps x steps) grid of path cells.  At every node the
spatial kernel is evaluated through the conditional (Brownian-bridge) law of
the path between its grid points,

    E[Lambda(B_s - B_r) | grid] = G(mu(s, r), v(s, r)),

with mu the piecewise-linear interpolated difference and v the bridge
variance.  Nodes never touch the diagonal s = r and Lambda is never
evaluated at the exact origin; the conditional evaluation keeps the node
values unbiased (tower property) where a raw piecewise-linear evaluation
would make the self-energy integral divergent for beta + a >= 1.

Node layout comes from shelab._energy_plan: u-direction weights are exact
gamma moments with centroid nodes, far cells get one transverse midpoint,
near-diagonal cells geometric layers with n_tr transverse midpoints, and the
sub-layer corner mass is completed analytically.  Mode "offset_diagonal"
drops the centroid shift (plain midpoints in u), the crude comparison
scheme.
"""

from __future__ import annotations

import numpy as np

from . import _energy_plan as _plan
from . import kernels as _k

BACKEND_NAME = "numpy"


def _zeta(alpha, h):
    """Brownian-bridge variance of the path at local offset alpha in [0, h]."""
    return alpha * (h - alpha) / h


def _interp(paths, alpha, h):
    """Path values at local offset alpha inside every step: (batch, S, d)."""
    w = alpha / h
    return paths[:, :-1, :] * (1.0 - w) + paths[:, 1:, :] * w


class PackedKernel:
    """Space kernel closure used by the quadrature (wraps gauss_expectation)."""

    def __init__(self, spec):
        self.spec = spec
        self.eta_eff, self.tail_coef = _k.diag_tail_coefficients(spec)

    def g(self, mu, v):
        return _k.gauss_expectation(self.spec, mu, v)


def pair_energy_batch(
    paths_a: np.ndarray,
    paths_b: np.ndarray,
    h: float,
    gamma_code: int,
    gamma_amp: float,
    gamma_beta: float,
    lam: PackedKernel,
    self_pair: bool,
    mode: str = "midpoint_tensor",
    refinement: int = 3,
    base_sub: int = 1,
    geo_levels: int = 12,
) -> np.ndarray:
    """Energies for a batch of path pairs; paths_*: (batch, S+1, d)."""
    if mode not in ("midpoint_tensor", "offset_diagonal"):
        raise ValueError(f"unknown quadrature mode {mode!r}")
    plan = _plan.build_plan(
        paths_a.shape[1] - 1, h, gamma_code, gamma_amp, gamma_beta,
        refinement, geo_levels,
    )
    centered = mode == "midpoint_tensor"
    parts = [
        _far_cells(paths_a, paths_b, h, plan, lam, self_pair, base_sub, centered),
        _adjacent_cells(paths_a, paths_b, h, plan, lam, self_pair),
    ]
    if self_pair:
        parts.append(_diagonal_self(paths_a, h, plan, lam))
    else:
        parts.append(_diagonal_cross(paths_a, paths_b, h, plan, lam))
    return np.sum(np.stack(parts, axis=0), axis=0)


def _far_cells(paths_a, paths_b, h, plan, lam, self_pair, base_sub, centered):
    batch, n_nodes, d = paths_a.shape
    S = n_nodes - 1
    total = np.zeros(batch)
    if S < 3:
        return total
    n0 = max(1, int(base_sub))
    sub_offsets = [(q + 0.5) * h / n0 for q in range(n0)]
    eps_clip = 1e-9 * h
    for m in range(2, S):
        vals = np.zeros(batch)
        for node in range(2):
            shift = plan.far_shift[m, node] if centered else 0.0
            w_node = (plan.far_w[m, node] if centered else 0.5 * plan.far_w[m].sum())
            w_node /= n0 * n0
            node_vals = np.zeros(batch)
            for osa in sub_offsets:
                for osb in sub_offsets:
                    a_off = min(max(osa + shift / 2.0, eps_clip), h - eps_clip)
                    b_off = min(max(osb - shift / 2.0, eps_clip), h - eps_clip)
                    v = _zeta(a_off, h) + _zeta(b_off, h)
                    pa = _interp(paths_a, a_off, h)[:, m:, :]
                    pb = _interp(paths_b, b_off, h)[:, :-m, :]
                    g_hi = lam.g(pa - pb, v)  # s in the later step
                    if self_pair:
                        node_vals += 2.0 * np.sum(g_hi, axis=1)
                    else:
                        pa2 = _interp(paths_a, b_off, h)[:, :-m, :]
                        pb2 = _interp(paths_b, a_off, h)[:, m:, :]
                        g_lo = lam.g(pa2 - pb2, v)  # r in the later step
                        node_vals += np.sum(g_hi, axis=1) + np.sum(g_lo, axis=1)
            vals += w_node * node_vals
        total += vals
    return total


def _adjacent_cells(paths_a, paths_b, h, plan, lam, self_pair):
    """Cells |a - b| = 1 in rotated (u, transverse) coordinates.

    With u = |s - r| in (0, 2h), the point in the higher of the two steps has
    local offset alpha_hi in [max(0, u-h), min(h, u)] (extent min(u, 2h-u)),
    the lower one alpha_lo = alpha_hi + h - u.
    """
    batch, n_nodes, d = paths_a.shape
    S = n_nodes - 1
    total = np.zeros(batch)
    if S < 2:
        return total
    n_tr = plan.n_tr
    for u, w_u in zip(plan.adj_u, plan.adj_w):
        ell = min(u, 2.0 * h - u)
        hi_lo = max(0.0, u - h)
        w_node = w_u / n_tr
        for itr in range(n_tr):
            alpha_hi = hi_lo + (itr + 0.5) * ell / n_tr
            alpha_lo = alpha_hi + h - u
            v = _zeta(alpha_hi, h) + _zeta(alpha_lo, h)
            hi_a = _interp(paths_a, alpha_hi, h)[:, 1:, :]
            lo_b = _interp(paths_b, alpha_lo, h)[:, :-1, :]
            g0 = lam.g(hi_a - lo_b, v)  # s in higher step
            if self_pair:
                total += w_node * 2.0 * np.sum(g0, axis=1)
            else:
                lo_a = _interp(paths_a, alpha_lo, h)[:, :-1, :]
                hi_b = _interp(paths_b, alpha_hi, h)[:, 1:, :]
                g1 = lam.g(lo_a - hi_b, v)  # r in higher step
                total += w_node * (np.sum(g0, axis=1) + np.sum(g1, axis=1))

    # corner strips u < adj_u_min (one per orientation per cell)
    if self_pair:
        tail = plan.corner_tail_self(lam.eta_eff, lam.tail_coef)
        total += 2.0 * (S - 1) * tail
    else:
        # corners touch interior grid nodes where mu = A_a - B_a != 0 a.s.
        mu = paths_a[:, 1:-1, :] - paths_b[:, 1:-1, :]
        g = lam.g(mu, plan.adj_u_min / 3.0)
        total += 2.0 * plan.adj_tail_mass_u * np.sum(g, axis=1)
    return total


def _diagonal_self(paths, h, plan, lam):
    """Self-pair diagonal cells via the exact 1-d reduction

    cell_a = 2 int_0^h gamma(u) G((u/h) dB_a, u(h-u)/h) (h - u) du.
    """
    batch, n_nodes, d = paths.shape
    S = n_nodes - 1
    db = paths[:, 1:, :] - paths[:, :-1, :]  # (batch, S, d)
    total = np.zeros(batch)
    for u, w in zip(plan.diag_u, plan.diag_w):
        v = u * (h - u) / h
        g = lam.g((u / h) * db, v)  # (batch, S)
        total += 2.0 * w * np.sum(g, axis=1)
    tail = plan.diag_tail_self(lam.eta_eff, lam.tail_coef)
    return total + S * tail


def _diagonal_cross(paths_a, paths_b, h, plan, lam):
    """Cross-pair diagonal cells: two signed triangles, u in (0, h),
    transverse extent h - u; the sub-u_min strip is completed with the gamma
    mass times transverse probes of G near u = 0."""
    batch, n_nodes, d = paths_a.shape
    S = n_nodes - 1
    n_tr = plan.n_tr
    total = np.zeros(batch)
    for u, w_u in zip(plan.diag_u, plan.diag_w):
        ell = h - u
        w_node = w_u / n_tr
        for sign in (1.0, -1.0):
            for itr in range(n_tr):
                s_off = (u if sign > 0 else 0.0) + (itr + 0.5) * ell / n_tr
                r_off = s_off - sign * u
                v = _zeta(s_off, h) + _zeta(r_off, h)
                pa = _interp(paths_a, s_off, h)
                pb = _interp(paths_b, r_off, h)
                g = lam.g(pa - pb, v)  # (batch, S)
                total += w_node * np.sum(g, axis=1)
    # corner strip u in (0, u_min), extent ~ h, both signs
    probes = np.zeros(batch)
    for itr in range(n_tr):
        s_off = (itr + 0.5) * h / n_tr
        pa = _interp(paths_a, s_off, h)
        pb = _interp(paths_b, s_off, h)
        v = 2.0 * _zeta(s_off, h)
        probes += np.sum(lam.g(pa - pb, v), axis=1) / n_tr
    u_min = plan.diag_u_min
    return total + 2.0 * plan.diag_gamma_mass_corner * (h - 0.5 * u_min) * probes
