"""Simplex integrals, spectral tail bounds and Le Gall's dyadic partition.

Three ingredients of the chaos-summability machinery:

* the exact simplex integral J_m(t, alpha) (Gamma-product closed form, with
  an independent nested-quadrature oracle for tests),
* the tail/bulk spectral split C_N = int_{|xi| >= N} mu(d xi)/|xi|^2,
  D_N = mu{|xi| <= N} and the binomial bound
  sum_k (n choose k) (t^k / k!) D_N^k (2 C_N)^{n-k} it controls,
* the partition of the triangle T_2(t) into dyadic rectangles
  A_{n,k} = J_{n,k} x I_{n,k} with disjoint time supports (exact rational
  endpoints, so disjointness tests are exact).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import integrate, special

from . import kernels as _k
from .kernels import KernelError, SpaceKernelSpec
from .paths import stream_for


class InsufficientSamples(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# simplex integrals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimplexSpec:
    """Order-m simplex integral with per-increment exponents alpha_i."""

    m: int
    t: float
    alpha: tuple[float, ...]

    def __post_init__(self):
        if self.m < 1 or len(self.alpha) != self.m:
            raise KernelError("order m >= 1 with one exponent per increment")
        if self.t <= 0:
            raise KernelError("horizon t must be positive")
        if any(a <= -1.0 or a >= 1.0 for a in self.alpha):
            raise KernelError("exponents must lie in (-1, 1)")

    @property
    def alpha_sum(self) -> float:
        return float(sum(self.alpha))


def simplex_integral_exact(spec: SimplexSpec) -> float:
    """J_m(t, alpha) = prod Gamma(alpha_i + 1) t^{|alpha| + m}
    / Gamma(|alpha| + m + 1)."""
    log_val = sum(special.gammaln(a + 1.0) for a in spec.alpha)
    log_val -= special.gammaln(spec.alpha_sum + spec.m + 1.0)
    return math.exp(log_val) * spec.t ** (spec.alpha_sum + spec.m)


def _alg_quad(f, lo, hi, a_lo, a_hi, limit=80):
    """int_lo^hi (r - lo)^{a_lo} (hi - r)^{a_hi} f(r) dr with smooth f,
    via QUADPACK's algebraic-weight rule (QAWS)."""
    val, _ = integrate.quad(f, lo, hi, weight="alg", wvar=(a_lo, a_hi), limit=limit)
    return val


def simplex_integral_quadrature(spec: SimplexSpec) -> float:
    """Independent oracle: nested adaptive quadrature of

        int_{0 < r_1 < ... < r_m < t} prod (r_i - r_{i-1})^{alpha_i} dr,

    with algebraic endpoint weights handled natively at every level
    (the inner integrals scale like powers of their upper limit, which the
    next level absorbs into its weight).  Supports m <= 3."""
    if spec.m > 3:
        raise KernelError("quadrature oracle supports m <= 3")
    alpha = spec.alpha
    t = spec.t

    if spec.m == 1:
        return _alg_quad(lambda r: 1.0, 0.0, t, alpha[0], 0.0)

    def inner1(r2):
        if r2 <= 0.0:
            return 0.0
        return _alg_quad(lambda r1: 1.0, 0.0, r2, alpha[0], alpha[1])

    p12 = 1.0 + alpha[0] + alpha[1]  # inner1(r2) ~ r2^{p12}

    if spec.m == 2:
        return _alg_quad(
            lambda r2: inner1(r2) / r2**p12 if r2 > 0 else 0.0,
            0.0, t, p12, 0.0,
        )

    def inner2(r3):
        if r3 <= 0.0:
            return 0.0
        return _alg_quad(
            lambda r2: inner1(r2) / r2**p12 if r2 > 0 else 0.0,
            0.0, r3, p12, alpha[2], limit=60,
        )

    p123 = 2.0 + alpha[0] + alpha[1] + alpha[2]
    return _alg_quad(
        lambda r3: inner2(r3) / r3**p123 if r3 > 0 else 0.0,
        0.0, t, p123, 0.0, limit=60,
    )


# ---------------------------------------------------------------------------
# C_N / D_N and the binomial bound
# ---------------------------------------------------------------------------


def cn_dn(spec: SpaceKernelSpec, N: float) -> tuple[float, float]:
    """(C_N, D_N) with C_N = int_{|xi| >= N} mu(d xi)/|xi|^2 (quadrature plus
    analytic power-law tail) and D_N = mu{|xi| <= N}."""
    if N <= 0:
        raise KernelError("N must be positive")
    return _k.mu_tail_over_xi2(spec, N), _k.mu_ball_mass(spec, N)


def lemma1_bound(spec: SpaceKernelSpec, t: float, n: int, N: float) -> float:
    """sum_{k=0}^n (n choose k) (t^k / k!) D_N^k (2 C_N)^{n-k}."""
    if n < 0:
        raise KernelError("order n must be nonnegative")
    C_N, D_N = cn_dn(spec, N)
    total = 0.0
    for k in range(n + 1):
        total += (
            math.comb(n, k)
            * t**k
            / math.factorial(k)
            * D_N**k
            * (2.0 * C_N) ** (n - k)
        )
    return total


def lemma1_lhs(
    spec: SpaceKernelSpec,
    t: float,
    n: int,
    samples: int = 200_000,
    seed: int = 0,
    tol: float | None = None,
) -> tuple[float, float]:
    """Estimate (value, stderr) of

        int_{R^{nd}} int_{S_{t,n}} exp(-sum w_i |xi_i|^2) dw prod mu(d xi_i)
        = int_{S_{t,n}} prod_i m(w_i) dw,

    by importance sampling the simplex factors w_i ~ q proportional to
    w^{-rho} on (0, t), with rho the small-w singularity exponent of the
    smoothed spectral mass m (keeps the weight variance finite), and an
    indicator for sum w_i <= t.
    """
    if n < 1 or n > 4:
        raise KernelError("lemma1_lhs supports 1 <= n <= 4")
    rho, _ = _k.mu_smoothed_singularity(spec)
    if rho >= 1.0:
        raise KernelError("non-integrable smoothed mass (mu too heavy)")
    rng = stream_for(seed, 901, n)
    q_pow = rho  # proposal exponent; q(w) = (1 - rho) w^{-rho} / t^{1-rho}
    u = rng.random((samples, n))
    w = t * u ** (1.0 / (1.0 - q_pow))
    inside = w.sum(axis=1) <= t
    m_vals = np.ones(samples)
    for i in range(n):
        m_vals *= _m_vec(spec, w[:, i])
    q_dens = np.prod(
        (1.0 - q_pow) * w ** (-q_pow) / t ** (1.0 - q_pow), axis=1
    )
    weights = np.where(inside, m_vals / q_dens, 0.0)
    value = float(weights.mean())
    stderr = float(weights.std(ddof=1) / math.sqrt(samples))
    if tol is not None and stderr > tol:
        raise InsufficientSamples(
            f"stderr {stderr:.3e} exceeds tol {tol:.3e}; increase samples"
        )
    return value, stderr


def _m_vec(spec: SpaceKernelSpec, w: np.ndarray) -> np.ndarray:
    rho, coef = _k.mu_smoothed_singularity(spec)
    if spec.family in ("riesz", "fractional", "constant_test"):
        if rho == 0.0:
            return np.full_like(w, coef)
        return coef * w ** (-rho)
    if spec.family == "mollified_white":
        eps = float(spec.epsilon)
        return spec.normalization * np.sqrt(np.pi / (w + eps / 2.0))
    if spec.family == "gaussian_test":
        s = float(spec.scale)
        d = spec.d
        return (
            spec.normalization
            * (2.0 * math.pi) ** (d / 2.0)
            * s**d
            * (np.pi / (w + s * s / 2.0)) ** (d / 2.0)
        )
    return np.array([_k.mu_smoothed_mass(spec, wi) for wi in w])


# ---------------------------------------------------------------------------
# Le Gall partition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LeGallRectangle:
    """A_{n,k} = J_{n,k} x I_{n,k}, half-open dyadic rectangles in T_2(t).

    Endpoints are stored as exact rational multiples of t (Fractions), so
    disjointness checks are exact.
    """

    n: int
    k: int
    t: float
    j_lo: Fraction
    j_hi: Fraction
    i_lo: Fraction
    i_hi: Fraction

    def __post_init__(self):
        if not (self.j_lo < self.j_hi <= self.i_lo < self.i_hi):
            raise KernelError("J must lie strictly left of I")

    @property
    def area_fraction(self) -> Fraction:
        return (self.j_hi - self.j_lo) * (self.i_hi - self.i_lo)

    @property
    def area(self) -> float:
        return float(self.area_fraction) * self.t * self.t

    def bounds(self) -> tuple[float, float, float, float]:
        t = self.t
        return (
            float(self.j_lo) * t,
            float(self.j_hi) * t,
            float(self.i_lo) * t,
            float(self.i_hi) * t,
        )


def legall_partition(n_max: int, t: float) -> list[LeGallRectangle]:
    """All A_{n,k}, n <= n_max, k <= 2^{n-1}, with exact dyadic endpoints
    (2k-2) t / 2^n, (2k-1) t / 2^n, 2k t / 2^n."""
    if n_max < 1:
        raise KernelError("n_max must be >= 1")
    out = []
    for n in range(1, n_max + 1):
        denom = 2**n
        for k in range(1, 2 ** (n - 1) + 1):
            out.append(
                LeGallRectangle(
                    n=n,
                    k=k,
                    t=t,
                    j_lo=Fraction(2 * k - 2, denom),
                    j_hi=Fraction(2 * k - 1, denom),
                    i_lo=Fraction(2 * k - 1, denom),
                    i_hi=Fraction(2 * k, denom),
                )
            )
    return out


def partition_area(rectangles: Sequence[LeGallRectangle]) -> Fraction:
    """Exact cumulative area as a fraction of t^2."""
    return sum((r.area_fraction for r in rectangles), Fraction(0))


def rectangles_disjoint(a: LeGallRectangle, b: LeGallRectangle) -> bool:
    """Exact half-open disjointness check."""
    j_overlap = a.j_lo < b.j_hi and b.j_lo < a.j_hi
    i_overlap = a.i_lo < b.i_hi and b.i_lo < a.i_hi
    return not (j_overlap and i_overlap)


def write_partition_csv(path: str, rectangles: Sequence[LeGallRectangle]):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "k", "j_lo", "j_hi", "i_lo", "i_hi"])
        for r in rectangles:
            j_lo, j_hi, i_lo, i_hi = r.bounds()
            writer.writerow([r.n, r.k, repr(j_lo), repr(j_hi), repr(i_lo), repr(i_hi)])
