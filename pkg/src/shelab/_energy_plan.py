"""Node/weight layout for the interaction-energy quadrature.

The double integral over a path cell factorises into the diagonal direction
u = s - r (where gamma lives and the kernel singularity sits) and the
transverse direction.  In the u-direction every cell or layer interval
carries a two-point Gauss rule for the measure gamma(u) ell(u) du (exact
closed-form moments, ell the transverse extent), so the scheme integrates
cubic variation of the kernel profile exactly.  Both backends (NumPy and
Cython) consume the same plan; in expectation over paths the scheme's bias
equals its deterministic defect on the smooth profile
u -> gamma(u) E[Lambda(B_s - B_r)], which the tests pin directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


def _mom(amp: float, beta: float, k: int, u1: float, u2: float) -> float:
    """int_{u1}^{u2} amp u^{-beta} u^k du (closed form)."""
    p = k + 1.0 - beta
    return amp * (u2**p - u1**p) / p


def _gauss2_from_moments(M0, M1, M2, M3):
    """Two-point Gauss rule (nodes, weights) for a positive measure with raw
    moments M0..M3 (Jacobi-matrix form; falls back to the centroid when the
    measure is numerically degenerate)."""
    if M0 <= 0.0:
        return [], []
    c = M1 / M0
    m2 = M2 / M0 - c * c
    if m2 <= 0.0 or not np.isfinite(m2):
        return [c], [M0]
    mu3 = M3 / M0 - 3.0 * c * (M2 / M0) + 2.0 * c**3
    a1 = c
    a2 = c + mu3 / m2
    half = 0.5 * (a1 + a2)
    disc = np.sqrt(0.25 * (a2 - a1) ** 2 + m2)
    x_lo, x_hi = half - disc, half + disc
    if x_hi - x_lo <= 0.0:
        return [c], [M0]
    w_hi = (M1 - M0 * x_lo) / (x_hi - x_lo)
    w_lo = M0 - w_hi
    if w_lo < 0.0 or w_hi < 0.0:
        return [c], [M0]
    return [x_lo, x_hi], [w_lo, w_hi]


def _tri_gauss2(amp, beta, u_c, w):
    """Gauss-2 rule for gamma(u) (w - |u - u_c|) du on [u_c - w, u_c + w]
    (the far-cell u-profile); requires u_c - w > 0."""
    M = [0.0] * 4
    for k in range(4):
        ml = _mom(amp, beta, k, u_c - w, u_c)
        ml1 = _mom(amp, beta, k + 1, u_c - w, u_c)
        mr = _mom(amp, beta, k, u_c, u_c + w)
        mr1 = _mom(amp, beta, k + 1, u_c, u_c + w)
        M[k] = (w - u_c) * ml + ml1 + (w + u_c) * mr - mr1
    return _gauss2_from_moments(*M)


def _interval_gauss2(amp, beta, u1, u2, weight):
    """Gauss-2 rule for gamma(u) (c0 + c1 u) du on [u1, u2]."""
    c0, c1 = weight
    M = [
        c0 * _mom(amp, beta, k, u1, u2) + c1 * _mom(amp, beta, k + 1, u1, u2)
        for k in range(4)
    ]
    return _gauss2_from_moments(*M)


def _interval_nodes(amp, beta, u1, u2, n, weight):
    """n sub-intervals of [u1, u2], Gauss-2 per sub-interval."""
    out_u, out_w = [], []
    edges = np.linspace(u1, u2, n + 1)
    for a, b in zip(edges[:-1], edges[1:]):
        us, ws = _interval_gauss2(amp, beta, a, b, weight)
        out_u += us
        out_w += ws
    return out_u, out_w


@dataclass(frozen=True)
class EnergyPlan:
    S: int
    h: float
    gamma_code: int
    gamma_amp: float
    gamma_beta: float
    # far cells: per band m >= 2, two Gauss nodes (as shifts from m h) with
    # exact gamma-cell masses
    far_shift: np.ndarray    # (S, 2)  row m used for bands +-m, m >= 2
    far_w: np.ndarray        # (S, 2)
    # adjacent cells: u-nodes with ell-weighted gamma masses, per orientation
    adj_u: np.ndarray
    adj_w: np.ndarray
    adj_tail_mass_u: float   # int_0^{u_min} gamma(u) u du (corner strip)
    adj_u_min: float
    # diagonal cells: u-nodes in (0, h) with masses int gamma (h - u) du
    diag_u: np.ndarray
    diag_w: np.ndarray
    diag_u_min: float
    diag_gamma_mass_corner: float  # int_0^{u_min} gamma du
    n_tr: int

    def diag_tail_self(self, eta_eff: float, coef: float) -> float:
        """Per-cell analytic completion of the diagonal strip u < diag_u_min."""
        return 2.0 * _gl_tail(self.diag_u_min, self.h, self.gamma_code,
                              self.gamma_amp, self.gamma_beta, eta_eff, coef,
                              "diag")

    def corner_tail_self(self, eta_eff: float, coef: float) -> float:
        """Per-corner analytic completion of adjacent cells, u < adj_u_min."""
        return _gl_tail(self.adj_u_min, self.h, self.gamma_code,
                        self.gamma_amp, self.gamma_beta, eta_eff, coef,
                        "corner")


@lru_cache(maxsize=64)
def build_plan(S: int, h: float, gamma_code: int, gamma_amp: float,
               gamma_beta: float, refinement: int, geo_levels: int) -> EnergyPlan:
    amp = gamma_amp
    beta = gamma_beta if gamma_code == 1 else 0.0
    n_u = max(1, refinement - 2)
    n_tr = max(2, refinement - 1)

    far_shift = np.zeros((S, 2))
    far_w = np.zeros((S, 2))
    for m in range(2, S):
        us, ws = _tri_gauss2(amp, beta, m * h, h)
        if len(us) == 1:
            us = [us[0], us[0]]
            ws = [ws[0] * 0.5, ws[0] * 0.5]
        far_shift[m] = np.asarray(us) - m * h
        far_w[m] = ws

    # adjacent cells: ell(u) = u on (0, h], ell(u) = 2h - u on [h, 2h]
    adj_u, adj_w = _interval_nodes(amp, beta, h, 2.0 * h, n_u, (2.0 * h, -1.0))
    top = h
    for _ in range(geo_levels):
        lo = top / 2.0
        us, ws = _interval_nodes(amp, beta, lo, top, n_u, (0.0, 1.0))
        adj_u += us
        adj_w += ws
        top = lo
    adj_u_min = top
    adj_tail_mass_u = _mom(amp, beta, 1, 0.0, adj_u_min)

    # diagonal cells: weight gamma(u) (h - u) on (0, h)
    diag_u, diag_w = [], []
    top = h
    for _ in range(geo_levels):
        lo = top / 2.0
        us, ws = _interval_nodes(amp, beta, lo, top, n_u, (h, -1.0))
        diag_u += us
        diag_w += ws
        top = lo
    diag_u_min = top
    diag_gamma_mass_corner = _mom(amp, beta, 0, 0.0, diag_u_min)

    return EnergyPlan(
        S=S,
        h=h,
        gamma_code=gamma_code,
        gamma_amp=amp,
        gamma_beta=beta,
        far_shift=far_shift,
        far_w=far_w,
        adj_u=np.array(adj_u),
        adj_w=np.array(adj_w),
        adj_tail_mass_u=adj_tail_mass_u,
        adj_u_min=adj_u_min,
        diag_u=np.array(diag_u),
        diag_w=np.array(diag_w),
        diag_u_min=diag_u_min,
        diag_gamma_mass_corner=diag_gamma_mass_corner,
        n_tr=n_tr,
    )


_GL_N, _GL_W = np.polynomial.legendre.leggauss(16)
_GL_Z = 0.5 * (_GL_N + 1.0)
_GL_WZ = 0.5 * _GL_W


def _gl_tail(u_min, h, code, amp, beta, eta_eff, coef, kind):
    """Gauss-Legendre value of the analytic corner strip after the power
    substitution u = u_min z^{1/q} absorbing the joint singularity.

    kind "diag":    int_0^{u_min} gamma(u) coef (u(h-u)/h)^{-a/2} (h-u) du
    kind "corner":  int_0^{u_min} gamma(u) coef u^{-a/2} u du
    """
    b = beta if code == 1 else 0.0
    q = (1.0 if kind == "diag" else 2.0) - b - eta_eff / 2.0
    if q <= 0.0:
        raise ValueError("non-integrable diagonal tail (inadmissible kernel pair)")
    u = u_min * _GL_Z ** (1.0 / q)
    jac = (u_min / q) * _GL_Z ** (1.0 / q - 1.0)
    g = amp * u ** (-b) if code == 1 else np.full_like(u, amp)
    if kind == "diag":
        vs = u * (h - u) / h
        ell = h - u
    else:
        vs = u
        ell = u
    core = vs ** (-eta_eff / 2.0) if eta_eff > 0 else np.ones_like(u)
    return float(np.sum(g * coef * core * ell * jac * _GL_WZ))
