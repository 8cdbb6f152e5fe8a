"""Covariance structures of the driving noise.

The noise has covariance  E[W'(t,x) W'(s,y)] = gamma(t-s) * Lambda(x-y)  with
gamma a nonnegative-definite function on R and Lambda a nonnegative-definite
function (or tempered distribution) on R^d.  The spectral measure mu is the
Fourier transform of Lambda under the convention

    F u (xi) = int exp(-i <xi, x>) u(x) dx,      F^{-1} carrying (2 pi)^{-d}.

Every family stores its normalisation constant explicitly so that
(Lambda, mu) are an exact Fourier pair; the Gaussian pairing identity

    int exp(-s |xi|^2) mu(d xi)
        = (2 pi)^d int (4 pi s)^{-d/2} exp(-|x|^2 / 4s) Lambda(x) dx

is enforced by tests for every family with a locally integrable Lambda.

Shipped space families
----------------------
riesz            Lambda(x) = |x|^{-eta},  mu = c_{eta,d} |xi|^{eta-d} dxi,
                 valid for 0 < eta < min(2, d).  The boundary eta = d = 1 is
                 supported in the distributional sense mu = Lebesgue (c=1);
                 there Lambda is not locally integrable and the pairing
                 identity has no finite normalisation.
bessel           mu = c_bessel (1+|xi|^2)^{-eta/2} dxi with the matching
                 kernel Lambda(x) = int_0^inf w^{(eta-d)/2 - 1} e^{-w}
                 e^{-|x|^2/4w} dw (Gamma-weight representation).
fractional       Lambda(x) = prod_i H_i (2H_i - 1)|x_i|^{2H_i-2}, H_i in
                 (1/2, 1), admissible when sum H_i > d - 1.
mollified_white  Lambda = heat kernel p_eps (d = 1), mu density
                 exp(-eps xi^2 / 2); the eps -> 0 limit is space white noise
                 with Lebesgue spectral measure.  An exact Dirac Lambda is
                 rejected at construction.
gaussian_test    Lambda(x) = exp(-|x|^2 / 2 scale^2) (smooth test kernel).
constant_test    Lambda = c (degenerate test kernel, mu = point mass at 0).

Time families: riesz_time (|t|^{-beta}), fbm_derivative (H(2H-1)|t|^{2H-2},
i.e. beta = 2 - 2H), constant, none (time-independent noise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import integrate, special


class KernelError(ValueError):
    """Invalid kernel specification or evaluation request."""


class SingularAtZero(KernelError):
    """Pointwise evaluation requested at a singular point."""


class OutOfRange(KernelError):
    """Parameter outside the family's admissible range."""


class QuadratureNotConverged(RuntimeError):
    """Adaptive quadrature stalled before reaching the requested tolerance."""


class DominationViolated(RuntimeError):
    """Smoothed spectral mass exceeded its value at the origin."""


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere S^{d-1}."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


# ---------------------------------------------------------------------------
# time kernels
# ---------------------------------------------------------------------------

_TIME_FAMILIES = ("riesz_time", "fbm_derivative", "constant", "none")


@dataclass(frozen=True)
class TimeKernelSpec:
    """Temporal covariance gamma.

    ``riesz_time``       gamma(t) = normalization * |t|^{-beta}
    ``fbm_derivative``   gamma(t) = normalization * H(2H-1) |t|^{2H-2}
    ``constant``         gamma(t) = normalization * c
    ``none``             time-independent noise (no temporal integral)
    """

    family: str
    beta: float | None = None
    H: float | None = None
    c: float | None = None
    normalization: float = 1.0

    def __post_init__(self):
        if self.family not in _TIME_FAMILIES:
            raise KernelError(f"unknown time kernel family {self.family!r}")
        if self.normalization <= 0:
            raise OutOfRange("normalization must be positive")
        if self.family == "riesz_time":
            if self.beta is None or not 0.0 < self.beta < 1.0:
                raise OutOfRange("riesz_time requires 0 < beta < 1")
        elif self.family == "fbm_derivative":
            if self.H is None or not 0.5 < self.H < 1.0:
                raise OutOfRange("fbm_derivative requires 1/2 < H < 1")
        elif self.family == "constant":
            if self.c is None or self.c < 0:
                raise OutOfRange("constant requires c >= 0")

    # -- classmethod constructors ------------------------------------------
    @classmethod
    def riesz_time(cls, beta: float, normalization: float = 1.0) -> "TimeKernelSpec":
        return cls("riesz_time", beta=beta, normalization=normalization)

    @classmethod
    def fbm_derivative(cls, H: float, normalization: float = 1.0) -> "TimeKernelSpec":
        return cls("fbm_derivative", H=H, normalization=normalization)

    @classmethod
    def constant(cls, c: float = 1.0, normalization: float = 1.0) -> "TimeKernelSpec":
        return cls("constant", c=c, normalization=normalization)

    @classmethod
    def none(cls) -> "TimeKernelSpec":
        return cls("none")

    # -- derived attributes -------------------------------------------------
    @property
    def beta_eff(self) -> float:
        """Power-law exponent of the singularity at t = 0 (0 if bounded)."""
        if self.family == "riesz_time":
            return float(self.beta)
        if self.family == "fbm_derivative":
            return 2.0 - 2.0 * float(self.H)
        return 0.0

    @property
    def amplitude(self) -> float:
        """Prefactor A so that gamma(t) = A |t|^{-beta_eff} (power families)."""
        if self.family == "riesz_time":
            return self.normalization
        if self.family == "fbm_derivative":
            H = float(self.H)
            return self.normalization * H * (2.0 * H - 1.0)
        if self.family == "constant":
            return self.normalization * float(self.c)
        return 0.0

    @property
    def singular(self) -> bool:
        return self.family in ("riesz_time", "fbm_derivative")

    def to_dict(self) -> dict:
        out = {"family": self.family, "normalization": self.normalization}
        if self.beta is not None:
            out["beta"] = self.beta
        if self.H is not None:
            out["H"] = self.H
        if self.c is not None:
            out["c"] = self.c
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TimeKernelSpec":
        return cls(
            family=data["family"],
            beta=data.get("beta"),
            H=data.get("H"),
            c=data.get("c"),
            normalization=data.get("normalization", 1.0),
        )


def eval_gamma(spec: TimeKernelSpec, t: float) -> float:
    """Evaluate gamma(t); even in t; singular families reject t = 0."""
    if spec.family == "none":
        raise KernelError("time-independent noise has no gamma to evaluate")
    at = abs(float(t))
    if spec.singular:
        if at == 0.0:
            raise SingularAtZero("gamma is singular at t = 0")
        return spec.amplitude * at ** (-spec.beta_eff)
    return spec.amplitude


def gamma_integral(spec: TimeKernelSpec, t: float) -> float:
    """int_0^t gamma(r) dr (closed form for all shipped families)."""
    if spec.family == "none":
        raise KernelError("time-independent noise has no gamma")
    if t < 0:
        raise KernelError("t must be nonnegative")
    b = spec.beta_eff
    if b > 0:
        return spec.amplitude * t ** (1.0 - b) / (1.0 - b)
    return spec.amplitude * t


def gamma_spectral_amplitude(spec: TimeKernelSpec) -> float:
    """Constant c with F[gamma](tau) = c |tau|^{beta - 1} for power families.

    Pinned by the 1-d Fourier pairing oracle; closed form
    c(beta) = 2 sin(pi beta / 2) Gamma(1 - beta) times the kernel amplitude.
    """
    b = spec.beta_eff
    if b <= 0.0:
        raise KernelError("no power-law spectral density for this family")
    return spec.amplitude * 2.0 * math.sin(math.pi * b / 2.0) * math.gamma(1.0 - b)


def gamma_spectral_cell_mass(spec: TimeKernelSpec, lo: float, hi: float) -> float:
    """Mass of F[gamma] on the frequency cell [lo, hi), lo >= 0 (doubled for
    the mirror cell by the caller).  The constant family is a point mass
    2 pi c at tau = 0."""
    if spec.family == "none":
        raise KernelError("time-independent noise has no time spectrum")
    if spec.family == "constant":
        return 2.0 * math.pi * spec.amplitude if lo <= 0.0 < hi else 0.0
    b = spec.beta_eff
    c = gamma_spectral_amplitude(spec)
    # integral of c tau^{beta-1} over [lo, hi)
    return c * (hi**b - lo**b) / b


# ---------------------------------------------------------------------------
# space kernels
# ---------------------------------------------------------------------------

_SPACE_FAMILIES = (
    "riesz",
    "bessel",
    "fractional",
    "mollified_white",
    "gaussian_test",
    "constant_test",
)


def riesz_constant(eta: float, d: int) -> float:
    """Constant c_{eta,d} with F[|x|^{-eta}] = c_{eta,d} |xi|^{eta-d}.

    Fourier-consistent under the module convention, i.e. it satisfies the
    Gaussian pairing identity (with its (2 pi)^d factor).  Requires
    0 < eta < min(2, d): at eta = d both sides of the pairing identity
    diverge and no finite normalisation exists.
    """
    if d < 1:
        raise OutOfRange("dimension must be >= 1")
    if not 0.0 < eta < 2.0:
        raise OutOfRange("riesz exponent must lie in (0, 2)")
    if eta >= d:
        raise OutOfRange(
            "riesz constant undefined for eta >= d: the kernel-side integral "
            "diverges (eta -> d limit rejected by the pairing oracle)"
        )
    return (
        2.0 ** (d - eta)
        * math.pi ** (d / 2.0)
        * math.gamma((d - eta) / 2.0)
        / math.gamma(eta / 2.0)
    )


def bessel_constant(eta: float, d: int) -> float:
    """Normalisation of the Bessel spectral density (1+|xi|^2)^{-eta/2},
    paired with Lambda(x) = int_0^inf w^{(eta-d)/2-1} e^{-w} e^{-|x|^2/4w} dw."""
    return 2.0**d * math.pi ** (d / 2.0) * math.gamma(eta / 2.0)


@dataclass(frozen=True)
class SpaceKernelSpec:
    """Spatial covariance Lambda with spectral measure mu = F(Lambda)."""

    family: str
    d: int
    eta: float | None = None
    Hvec: tuple[float, ...] | None = None
    epsilon: float | None = None
    scale: float | None = None
    c: float | None = None
    normalization: float = 1.0
    validate: bool = True

    def __post_init__(self):
        if self.family not in _SPACE_FAMILIES:
            raise KernelError(f"unknown space kernel family {self.family!r}")
        if self.d < 1:
            raise OutOfRange("dimension must be >= 1")
        if self.normalization <= 0:
            raise OutOfRange("normalization must be positive")
        if not self.validate:
            return
        if self.family == "riesz":
            eta = self.eta
            if eta is None or not 0.0 < eta < 2.0:
                raise OutOfRange("riesz requires 0 < eta < 2")
            # eta > d makes mu signed (not a covariance); eta = d is only
            # coherent as the white-noise boundary in d = 1.
            if eta > self.d:
                raise OutOfRange("riesz requires eta <= d (positive-definiteness)")
            if eta == self.d and self.d != 1:
                raise OutOfRange("riesz eta = d supported only for d = 1")
        elif self.family == "bessel":
            if self.eta is None or self.eta <= max(self.d - 2, 0):
                raise OutOfRange("bessel requires eta > max(d - 2, 0)")
        elif self.family == "fractional":
            if not self.Hvec or len(self.Hvec) != self.d:
                raise OutOfRange("fractional requires one Hurst index per axis")
            if any(not 0.5 < h < 1.0 for h in self.Hvec):
                raise OutOfRange("fractional requires H_i in (1/2, 1)")
            if sum(self.Hvec) <= self.d - 1:
                raise OutOfRange("fractional requires sum H_i > d - 1")
        elif self.family == "mollified_white":
            if self.d != 1:
                raise OutOfRange("mollified_white is supported in d = 1 only")
            if self.epsilon is None or self.epsilon <= 0:
                raise OutOfRange(
                    "mollified_white requires epsilon > 0 (exact white noise "
                    "Lambda = delta_0 is rejected at construction)"
                )
        elif self.family == "gaussian_test":
            if self.scale is None or self.scale <= 0:
                raise OutOfRange("gaussian_test requires scale > 0")
        elif self.family == "constant_test":
            if self.c is None or self.c < 0:
                raise OutOfRange("constant_test requires c >= 0")

    # -- constructors --------------------------------------------------------
    @classmethod
    def riesz(cls, eta: float, d: int, normalization: float = 1.0, validate: bool = True):
        return cls("riesz", d=d, eta=eta, normalization=normalization, validate=validate)

    @classmethod
    def bessel(cls, eta: float, d: int, normalization: float = 1.0, validate: bool = True):
        return cls("bessel", d=d, eta=eta, normalization=normalization, validate=validate)

    @classmethod
    def fractional(cls, Hvec: Sequence[float], normalization: float = 1.0):
        Hvec = tuple(float(h) for h in Hvec)
        return cls("fractional", d=len(Hvec), Hvec=Hvec, normalization=normalization)

    @classmethod
    def mollified_white(cls, epsilon: float, normalization: float = 1.0):
        return cls("mollified_white", d=1, epsilon=epsilon, normalization=normalization)

    @classmethod
    def gaussian_test(cls, scale: float = 1.0, d: int = 1, normalization: float = 1.0):
        return cls("gaussian_test", d=d, scale=scale, normalization=normalization)

    @classmethod
    def constant_test(cls, c: float = 1.0, d: int = 1, normalization: float = 1.0):
        return cls("constant_test", d=d, c=c, normalization=normalization)

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        out = {"family": self.family, "dim": self.d, "normalization": self.normalization}
        if self.eta is not None:
            out["eta"] = self.eta
        if self.Hvec is not None:
            out["Hvec"] = list(self.Hvec)
        if self.epsilon is not None:
            out["epsilon"] = self.epsilon
        if self.scale is not None:
            out["scale"] = self.scale
        if self.c is not None:
            out["c"] = self.c
        return out

    @classmethod
    def from_dict(cls, data: dict, validate: bool = True) -> "SpaceKernelSpec":
        hvec = data.get("Hvec")
        return cls(
            family=data["family"],
            d=int(data["dim"]),
            eta=data.get("eta"),
            Hvec=tuple(hvec) if hvec is not None else None,
            epsilon=data.get("epsilon"),
            scale=data.get("scale"),
            c=data.get("c"),
            normalization=data.get("normalization", 1.0),
            validate=validate,
        )

    # -- structural properties -------------------------------------------------
    @property
    def singular_at_zero(self) -> bool:
        if self.family in ("riesz", "fractional"):
            return True
        if self.family == "bessel":
            return self.eta <= self.d
        return False

    @property
    def self_singularity_order(self) -> float:
        """Exponent a with Lambda(x) ~ |x|^{-a} near 0 (0 for bounded kernels).

        Drives the self-energy admissibility a < 2 - 2 beta."""
        if self.family == "riesz":
            return float(self.eta)
        if self.family == "fractional":
            return sum(2.0 - 2.0 * h for h in self.Hvec)
        if self.family == "bessel":
            return max(float(self.d) - float(self.eta), 0.0)
        return 0.0


def _riesz_mu_constant(spec: SpaceKernelSpec) -> float:
    """Spectral normalisation of the riesz family including the eta = d = 1
    white-noise boundary, where mu is Lebesgue by convention (c = 1)."""
    eta, d = float(spec.eta), spec.d
    if eta == d == 1:
        return 1.0
    return riesz_constant(eta, d)


def eval_lambda(spec: SpaceKernelSpec, x) -> float:
    """Pointwise Lambda(x); symmetric in x -> -x, nonnegative."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (spec.d,):
        raise KernelError(f"point must have dimension {spec.d}")
    r = float(np.linalg.norm(x))
    norm = spec.normalization
    if spec.family == "riesz":
        if r == 0.0:
            raise SingularAtZero("riesz kernel singular at the origin")
        return norm * r ** (-float(spec.eta))
    if spec.family == "fractional":
        if np.any(x == 0.0):
            raise SingularAtZero("fractional kernel singular on coordinate hyperplanes")
        val = norm
        for xi, h in zip(x, spec.Hvec):
            val *= h * (2.0 * h - 1.0) * abs(xi) ** (2.0 * h - 2.0)
        return val
    if spec.family == "bessel":
        if r == 0.0 and spec.eta <= spec.d:
            raise SingularAtZero("bessel kernel singular at the origin for eta <= d")
        return norm * _bessel_lambda(float(spec.eta), spec.d, r)
    if spec.family == "mollified_white":
        eps = float(spec.epsilon)
        return norm * math.exp(-(r**2) / (2.0 * eps)) / math.sqrt(2.0 * math.pi * eps)
    if spec.family == "gaussian_test":
        s = float(spec.scale)
        return norm * math.exp(-(r**2) / (2.0 * s**2))
    # constant_test
    return norm * float(spec.c)


def _bessel_lambda(eta: float, d: int, r: float) -> float:
    """int_0^inf w^{(eta-d)/2 - 1} e^{-w} e^{-r^2/(4w)} dw by adaptive
    quadrature of the integral representation."""
    a = (eta - d) / 2.0

    if r == 0.0:
        return math.gamma(a)  # requires a > 0, guarded by caller

    def integrand(w):
        return w ** (a - 1.0) * math.exp(-w - r * r / (4.0 * w))

    # the integrand peaks near w* = r/2; split there for stable adaptivity
    w_star = max(r / 2.0, 1e-12)
    left, el = integrate.quad(integrand, 0.0, w_star, limit=200)
    right, er = integrate.quad(integrand, w_star, np.inf, limit=200)
    return left + right


def mu_density(spec: SpaceKernelSpec, xi) -> float:
    """Density of mu w.r.t. Lebesgue at xi (family normalisation included)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi.shape != (spec.d,):
        raise KernelError(f"point must have dimension {spec.d}")
    r = float(np.linalg.norm(xi))
    norm = spec.normalization
    if spec.family == "riesz":
        eta, d = float(spec.eta), spec.d
        if r == 0.0 and eta < d:
            raise SingularAtZero("riesz spectral density singular at the origin")
        return norm * _riesz_mu_constant(spec) * (r ** (eta - d) if eta != d else 1.0)
    if spec.family == "bessel":
        eta = float(spec.eta)
        return norm * bessel_constant(eta, spec.d) * (1.0 + r * r) ** (-eta / 2.0)
    if spec.family == "fractional":
        if np.any(xi == 0.0):
            raise SingularAtZero("fractional spectral density singular on hyperplanes")
        val = norm
        for x, h in zip(xi, spec.Hvec):
            val *= _axis_fractional_constant(h) * abs(x) ** (1.0 - 2.0 * h)
        return val
    if spec.family == "mollified_white":
        return norm * math.exp(-float(spec.epsilon) * r * r / 2.0)
    if spec.family == "gaussian_test":
        s = float(spec.scale)
        return norm * (2.0 * math.pi) ** (spec.d / 2.0) * s**spec.d * math.exp(
            -(s * r) ** 2 / 2.0
        )
    raise KernelError("constant_test has a point-mass spectrum (no density)")


@lru_cache(maxsize=None)
def _axis_fractional_constant(h: float) -> float:
    """1-d constant: F[H(2H-1)|x|^{2H-2}] = const * |xi|^{1-2H}."""
    beta = 2.0 - 2.0 * h
    return h * (2.0 * h - 1.0) * 2.0 * math.sin(math.pi * beta / 2.0) * math.gamma(1.0 - beta)


def fractional_angular_moment(spec: SpaceKernelSpec) -> float:
    """int_{S^{d-1}} prod_i |omega_i|^{1-2H_i} d omega (Dirichlet formula)."""
    a = [1.0 - 2.0 * h for h in spec.Hvec]
    num = 2.0 * math.prod(math.gamma((ai + 1.0) / 2.0) for ai in a)
    return num / math.gamma((spec.d + sum(a)) / 2.0)


def _radial_profile(spec: SpaceKernelSpec):
    """(K, p, angular) with mu(d xi) = K |xi|^{p} * [angular profile] for the
    radially reducible families; None when not an exact power law."""
    norm = spec.normalization
    if spec.family == "riesz":
        return norm * _riesz_mu_constant(spec), float(spec.eta) - spec.d, sphere_area(spec.d)
    if spec.family == "fractional":
        prefac = norm * math.prod(_axis_fractional_constant(h) for h in spec.Hvec)
        return prefac, sum(1.0 - 2.0 * h for h in spec.Hvec), fractional_angular_moment(spec)
    return None


def mu_ball_mass(spec: SpaceKernelSpec, R: float) -> float:
    """D_R = mu{ |xi| <= R }."""
    if R < 0:
        raise KernelError("radius must be nonnegative")
    norm = spec.normalization
    if spec.family == "constant_test":
        return norm * float(spec.c) * (2.0 * math.pi) ** spec.d
    prof = _radial_profile(spec)
    if prof is not None:
        K, p, ang = prof
        expo = p + spec.d  # radial integrand r^{p + d - 1}
        return K * ang * R**expo / expo
    if spec.family == "mollified_white":
        eps = float(spec.epsilon)
        return norm * math.sqrt(2.0 * math.pi / eps) * math.erf(R * math.sqrt(eps / 2.0))
    if spec.family == "gaussian_test":
        s = float(spec.scale)
        d = spec.d
        ang = sphere_area(d)
        val, _ = integrate.quad(
            lambda r: r ** (d - 1) * math.exp(-(s * r) ** 2 / 2.0), 0.0, R
        )
        return norm * (2.0 * math.pi) ** (d / 2.0) * s**d * ang * val
    if spec.family == "bessel":
        eta, d = float(spec.eta), spec.d
        cb = bessel_constant(eta, d) * norm
        ang = sphere_area(d)
        val, _ = integrate.quad(
            lambda r: r ** (d - 1) * (1.0 + r * r) ** (-eta / 2.0), 0.0, R
        )
        return cb * ang * val
    raise KernelError(f"unsupported family {spec.family}")


def mu_tail_over_xi2(spec: SpaceKernelSpec, R: float) -> float:
    """C_R = int_{|xi| >= R} mu(d xi) / |xi|^2 (analytic tail handling)."""
    if R <= 0:
        raise KernelError("radius must be positive")
    norm = spec.normalization
    if spec.family == "constant_test":
        return 0.0
    prof = _radial_profile(spec)
    if prof is not None:
        K, p, ang = prof
        expo = p + spec.d - 3.0  # r^{p + d - 1 - 2}
        if expo >= -1.0:
            return math.inf
        return -K * ang * R ** (expo + 1.0) / (expo + 1.0)
    if spec.family == "mollified_white":
        eps = float(spec.epsilon)
        val, _ = integrate.quad(
            lambda r: math.exp(-eps * r * r / 2.0) / (r * r), R, np.inf
        )
        return 2.0 * norm * val
    if spec.family == "gaussian_test":
        s = float(spec.scale)
        d = spec.d
        val, _ = integrate.quad(
            lambda r: r ** (d - 3) * math.exp(-(s * r) ** 2 / 2.0), R, np.inf
        )
        return norm * (2.0 * math.pi) ** (d / 2.0) * s**d * sphere_area(d) * val
    if spec.family == "bessel":
        eta, d = float(spec.eta), spec.d
        if eta + 2.0 <= d:
            return math.inf
        cb = bessel_constant(eta, d) * norm
        val, _ = integrate.quad(
            lambda r: r ** (d - 3) * (1.0 + r * r) ** (-eta / 2.0), R, np.inf
        )
        return cb * sphere_area(d) * val
    raise KernelError(f"unsupported family {spec.family}")


# ---------------------------------------------------------------------------
# smoothed spectral mass  m(w) = int exp(-w |xi|^2) mu(d xi)
# ---------------------------------------------------------------------------


def mu_smoothed_mass(spec: SpaceKernelSpec, w: float) -> float:
    """m(w) = int exp(-w |xi|^2) mu(d xi); closed form for power families."""
    if w < 0:
        raise KernelError("w must be nonnegative")
    norm = spec.normalization
    if spec.family == "constant_test":
        return norm * float(spec.c) * (2.0 * math.pi) ** spec.d
    prof = _radial_profile(spec)
    if prof is not None:
        K, p, ang = prof
        s = (p + spec.d) / 2.0  # int r^{p+d-1} e^{-w r^2} dr = Gamma(s)/(2 w^s)
        if w == 0.0:
            return math.inf
        return K * ang * 0.5 * math.gamma(s) * w ** (-s)
    if spec.family == "mollified_white":
        eps = float(spec.epsilon)
        return norm * math.sqrt(math.pi / (w + eps / 2.0))
    if spec.family == "gaussian_test":
        s = float(spec.scale)
        d = spec.d
        return (
            norm
            * (2.0 * math.pi) ** (d / 2.0)
            * s**d
            * (math.pi / (w + s * s / 2.0)) ** (d / 2.0)
        )
    if spec.family == "bessel":
        eta, d = float(spec.eta), spec.d
        cb = bessel_constant(eta, d) * norm * sphere_area(d)
        if w == 0.0 and eta <= d:
            return math.inf

        def integrand(r):
            return r ** (d - 1) * (1.0 + r * r) ** (-eta / 2.0) * math.exp(-w * r * r)

        val, _ = integrate.quad(integrand, 0.0, np.inf, limit=200)
        return cb * val
    raise KernelError(f"unsupported family {spec.family}")


def mu_smoothed_singularity(spec: SpaceKernelSpec) -> tuple[float, float]:
    """(rho, coef) with m(w) ~ coef * w^{-rho} as w -> 0 (rho = 0 when m is
    bounded at 0, coef = m(0))."""
    prof = _radial_profile(spec)
    if prof is not None:
        K, p, ang = prof
        s = (p + spec.d) / 2.0
        return s, K * ang * 0.5 * math.gamma(s)
    if spec.family == "bessel":
        eta, d = float(spec.eta), spec.d
        if eta > d:
            return 0.0, mu_smoothed_mass(spec, 0.0)
        if eta == d:
            # logarithmic; treat as a mild power for importance sampling
            return 0.05, mu_smoothed_mass(spec, 1e-4) * (1e-4) ** 0.05
        rho = (d - eta) / 2.0
        coef = mu_smoothed_mass(spec, 1e-6) * (1e-6) ** rho
        return rho, coef
    return 0.0, mu_smoothed_mass(spec, 0.0)


# ---------------------------------------------------------------------------
# conditional Gaussian expectation  G(mu, v) = E[Lambda(mu + sqrt(v) Z)]
# ---------------------------------------------------------------------------

_RIESZ_TABLE_SIZE = 768
_RIESZ_RHO_MAX = 4.0e6


@lru_cache(maxsize=None)
def _noncentral_inverse_moment_table(eta: float, d: int):
    """Table of R(rho) = E[|Z + sqrt(rho) e_1|^{-eta}], Z ~ N(0, I_d), on a
    log1p-uniform rho grid.  Used by the energy quadrature hot path."""
    xs = np.linspace(0.0, math.log1p(_RIESZ_RHO_MAX), _RIESZ_TABLE_SIZE)
    rhos = np.expm1(xs)
    vals = np.empty_like(rhos)
    for i, rho in enumerate(rhos):
        vals[i] = _noncentral_inverse_moment_exact(eta, d, rho)
    return xs, vals


def _noncentral_inverse_moment_exact(eta: float, d: int, rho: float) -> float:
    """E[|Z + nu e_1|^{-eta}] with nu = sqrt(rho), by adaptive quadrature."""
    nu = math.sqrt(rho)
    if d == 1:
        # int_0^inf x^{-eta} (phi(x - nu) + phi(x + nu)) dx, substitution
        # x = u^{1/(1-eta)} to remove the endpoint singularity.
        q = 1.0 / (1.0 - eta)

        def phi(z):
            return math.exp(-z * z / 2.0) / math.sqrt(2.0 * math.pi)

        def integrand(u):
            x = u**q
            return q * u ** (q - 1.0) * x ** (-eta) * (phi(x - nu) + phi(x + nu))

        hi = (nu + 10.0) ** (1.0 - eta)
        val, _ = integrate.quad(integrand, 0.0, hi, limit=400)
        return val
    # d >= 2: |Z + nu e_1|^2 ~ noncentral chi-square with d dof, lambda = rho
    from scipy.stats import ncx2

    def integrand(y):
        return y ** (-eta / 2.0) * ncx2.pdf(y, d, rho)

    # small-y singularity is integrable: y^{(d-eta)/2 - 1}
    split = max(1.0, rho / 2.0)
    v1, _ = integrate.quad(integrand, 0.0, split, limit=400)
    v2, _ = integrate.quad(integrand, split, np.inf, limit=400)
    return v1 + v2


def noncentral_inverse_moment(eta: float, d: int, rho) -> np.ndarray:
    """R(rho) via the cached table with power-law asymptote beyond it."""
    xs, vals = _noncentral_inverse_moment_table(eta, d)
    rho = np.asarray(rho, dtype=float)
    out = np.interp(np.log1p(rho), xs, vals)
    big = rho > _RIESZ_RHO_MAX
    if np.any(big):
        rb = rho[big]
        out = np.array(out, copy=True)
        out[big] = rb ** (-eta / 2.0) * (1.0 + eta * (eta + 2.0 - d) / (2.0 * rb))
    return out


def gauss_expectation(spec: SpaceKernelSpec, mu, v):
    """E[Lambda(mu + sqrt(v) Z)], Z ~ N(0, I_d); vectorised over leading axes.

    mu has shape (..., d), v broadcasts over (...).  This is the node kernel
    of the interaction-energy quadrature: evaluating Lambda through the
    conditional (Brownian-bridge) law keeps the quadrature unbiased at the
    diagonal singularity.
    """
    mu = np.asarray(mu, dtype=float)
    v = np.asarray(v, dtype=float)
    if mu.shape[-1] != spec.d:
        raise KernelError(f"mean vector must have dimension {spec.d}")
    norm = spec.normalization
    if spec.family == "constant_test":
        return np.broadcast_to(norm * float(spec.c), np.broadcast_shapes(mu.shape[:-1], v.shape)).copy()
    if spec.family == "gaussian_test":
        s2 = float(spec.scale) ** 2
        denom = s2 + v
        r2 = np.sum(mu * mu, axis=-1)
        return norm * (s2 / denom) ** (spec.d / 2.0) * np.exp(-r2 / (2.0 * denom))
    if spec.family == "mollified_white":
        tau = float(spec.epsilon) + v
        r2 = np.sum(mu * mu, axis=-1)
        return norm * np.exp(-r2 / (2.0 * tau)) / np.sqrt(2.0 * math.pi * tau)
    if spec.family == "riesz":
        eta = float(spec.eta)
        r2 = np.sum(mu * mu, axis=-1)
        with np.errstate(divide="ignore"):
            rho = np.where(v > 0, r2 / np.where(v > 0, v, 1.0), np.inf)
        out = np.empty(np.broadcast_shapes(r2.shape, v.shape), dtype=float)
        vz = np.broadcast_to(v, out.shape) == 0
        r2b = np.broadcast_to(r2, out.shape)
        if np.any(vz):
            if np.any(r2b[vz] == 0.0):
                raise SingularAtZero("riesz kernel requested at the exact origin")
            out[vz] = r2b[vz] ** (-eta / 2.0)
        nz = ~vz
        vb = np.broadcast_to(v, out.shape)
        out[nz] = vb[nz] ** (-eta / 2.0) * noncentral_inverse_moment(
            eta, spec.d, np.broadcast_to(rho, out.shape)[nz]
        )
        return norm * out
    if spec.family == "fractional":
        shape = np.broadcast_shapes(mu.shape[:-1], v.shape)
        out = np.full(shape, norm, dtype=float)
        vb = np.broadcast_to(v, shape)
        if np.any(vb == 0.0):
            raise SingularAtZero("fractional kernel needs v > 0 in gauss_expectation")
        for i, h in enumerate(spec.Hvec):
            a = 2.0 - 2.0 * h
            amp = h * (2.0 * h - 1.0)
            rho = np.broadcast_to(mu[..., i] ** 2, shape) / vb
            out *= amp * vb ** (-a / 2.0) * noncentral_inverse_moment(a, 1, rho)
        return out
    if spec.family == "bessel":
        eta, d = float(spec.eta), spec.d
        shape = np.broadcast_shapes(mu.shape[:-1], v.shape)
        r2 = np.broadcast_to(np.sum(mu * mu, axis=-1), shape)
        vb = np.broadcast_to(v, shape)
        flat_out = np.empty(r2.size)
        for i, (rr, vv) in enumerate(zip(r2.ravel(), vb.ravel())):
            flat_out[i] = _bessel_gauss_expectation(eta, d, rr, vv)
        return norm * flat_out.reshape(shape)
    raise KernelError(f"unsupported family {spec.family}")


def _bessel_gauss_expectation(eta: float, d: int, r2: float, v: float) -> float:
    """E[Lambda_bessel(N(mu, v I))] via the w-integral representation."""
    a = (eta - d) / 2.0

    def integrand(w):
        gain = (2.0 * w / (2.0 * w + v)) ** (d / 2.0) if v > 0 else 1.0
        return w ** (a - 1.0) * math.exp(-w - r2 / (2.0 * (2.0 * w + v))) * gain

    lo_val, _ = integrate.quad(integrand, 0.0, 1.0, limit=200)
    hi_val, _ = integrate.quad(integrand, 1.0, np.inf, limit=200)
    return lo_val + hi_val


def diag_tail_coefficients(spec: SpaceKernelSpec) -> tuple[float, float]:
    """(eta_eff, coef) with gauss_expectation(~0, v) ~ coef * v^{-eta_eff/2}
    as v -> 0; used for the analytic completion of the diagonal quadrature."""
    norm = spec.normalization
    if spec.family == "riesz":
        eta = float(spec.eta)
        return eta, norm * float(noncentral_inverse_moment(eta, spec.d, 0.0))
    if spec.family == "fractional":
        coef = norm
        for h in spec.Hvec:
            a = 2.0 - 2.0 * h
            coef *= h * (2.0 * h - 1.0) * float(noncentral_inverse_moment(a, 1, 0.0))
        return spec.self_singularity_order, coef
    if spec.family == "gaussian_test":
        return 0.0, norm
    if spec.family == "mollified_white":
        eps = float(spec.epsilon)
        return 0.0, norm / math.sqrt(2.0 * math.pi * eps)
    if spec.family == "constant_test":
        return 0.0, norm * float(spec.c)
    if spec.family == "bessel":
        a = spec.self_singularity_order
        if a == 0.0:
            return 0.0, norm * math.gamma((float(spec.eta) - spec.d) / 2.0)
        v_small = 1e-8
        coef = _bessel_gauss_expectation(float(spec.eta), spec.d, 0.0, v_small)
        return a, norm * coef * v_small ** (a / 2.0)
    raise KernelError(f"unsupported family {spec.family}")


# ---------------------------------------------------------------------------
# integrability hypotheses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HypothesisReport:
    integral_value: float
    exponent_p: float
    converged: bool
    quadrature_error: float

    @property
    def finite(self) -> bool:
        return math.isfinite(self.integral_value)


def mu_tail_exponent(spec: SpaceKernelSpec) -> float:
    """sigma with mu-density ~ |xi|^{-sigma} radially at infinity
    (math.inf for super-polynomial decay / compact spectra)."""
    if spec.family == "riesz":
        return spec.d - float(spec.eta)
    if spec.family == "bessel":
        return float(spec.eta)
    if spec.family == "fractional":
        return sum(2.0 * h - 1.0 for h in spec.Hvec)
    return math.inf


def mu_moment_integral(spec: SpaceKernelSpec, p: float, tol: float = 1e-9) -> HypothesisReport:
    """Evaluate int mu(d xi) / (1 + |xi|^p) with analytic divergence detection.

    Finiteness is decided by the tail-exponent comparison (quadrature is only
    trusted on analytically finite integrals); on finite integrals the value
    is computed by radial quadrature with the tail mapped to a bounded
    interval.
    """
    if p < 0:
        raise KernelError("p must be nonnegative")
    sigma = mu_tail_exponent(spec)
    finite = (sigma + p) > spec.d
    if not finite:
        return HypothesisReport(math.inf, p, True, 0.0)
    if spec.family == "constant_test":
        val = spec.normalization * float(spec.c) * (2.0 * math.pi) ** spec.d
        return HypothesisReport(val, p, True, 0.0)

    d = spec.d

    def radial_density(r):
        # mu restricted to the sphere of radius r, integrated over angles
        prof = _radial_profile(spec)
        if prof is not None:
            K, pw, ang = prof
            return K * ang * r ** (pw + d - 1)
        if spec.family == "mollified_white":
            return 2.0 * spec.normalization * math.exp(-float(spec.epsilon) * r * r / 2.0)
        if spec.family == "gaussian_test":
            s = float(spec.scale)
            return (
                spec.normalization
                * (2.0 * math.pi) ** (d / 2.0)
                * s**d
                * sphere_area(d)
                * r ** (d - 1)
                * math.exp(-(s * r) ** 2 / 2.0)
            )
        if spec.family == "bessel":
            return (
                spec.normalization
                * bessel_constant(float(spec.eta), d)
                * sphere_area(d)
                * r ** (d - 1)
                * (1.0 + r * r) ** (-float(spec.eta) / 2.0)
            )
        raise KernelError(f"unsupported family {spec.family}")

    def integrand(r):
        return radial_density(r) / (1.0 + r**p)

    # possible power singularity at r = 0: radial density ~ r^{q}, q > -1
    prof = _radial_profile(spec)
    q = prof[1] + d - 1 if prof is not None else 0.0
    R = 1.0
    if q > -1.0 and q != 0.0:
        # substitution r = u^{1/(1+q)} smooths the origin
        e = 1.0 / (1.0 + q)

        def head_integrand(u):
            r = u**e
            return e * u ** (e - 1.0) * integrand(r)

        head, eh = integrate.quad(head_integrand, 0.0, R ** (1.0 + q), limit=300)
    else:
        head, eh = integrate.quad(integrand, 0.0, R, limit=300)

    # tail via r = R / z, z in (0, 1]
    def tail_integrand(z):
        r = R / z
        return integrand(r) * R / (z * z)

    tail, et = integrate.quad(tail_integrand, 0.0, 1.0, limit=300)
    err = eh + et
    value = head + tail
    converged = err < max(tol, abs(value) * tol)
    if not converged:
        raise QuadratureNotConverged(
            f"mu moment integral stalled: err {err:.2e} > tol {tol:.2e}"
        )
    return HypothesisReport(value, p, converged, err)


def smoothed_mu_sup_bound(
    spec: SpaceKernelSpec,
    v: float,
    eta_probe: Sequence[Sequence[float]] | Sequence[float],
    rel_tol: float = 1e-7,
) -> dict:
    """Evaluate g(eta) = int exp(-(v/2)|xi - eta|^2) mu(d xi) at probe points
    and assert the nonnegativity-of-Lambda domination g(eta) <= g(0)."""
    if v <= 0:
        raise KernelError("v must be positive")
    g0 = mu_smoothed_mass(spec, v / 2.0)
    probes = [np.atleast_1d(np.asarray(p, dtype=float)) for p in eta_probe]
    values = [_smoothed_mass_shifted(spec, v, p) for p in probes]
    for p, g in zip(probes, values):
        if g > g0 * (1.0 + rel_tol) + 1e-300:
            raise DominationViolated(
                f"g({p}) = {g:.6e} exceeds g(0) = {g0:.6e}: broken kernel "
                "normalisation or quadrature"
            )
    return {"g0": g0, "probes": [p.tolist() for p in probes], "values": values, "ok": True}


def _smoothed_mass_shifted(spec: SpaceKernelSpec, v: float, eta: np.ndarray) -> float:
    """g(eta) = int exp(-(v/2)|xi - eta|^2) mu(d xi)."""
    if eta.shape != (spec.d,):
        raise KernelError(f"probe must have dimension {spec.d}")
    e = float(np.linalg.norm(eta))
    if e == 0.0:
        return mu_smoothed_mass(spec, v / 2.0)
    if spec.family == "constant_test":
        return spec.normalization * float(spec.c) * (2.0 * math.pi) ** spec.d * math.exp(
            -v * e * e / 2.0
        )
    if spec.family == "gaussian_test":
        # gaussian x gaussian closed form
        s = float(spec.scale)
        a = v / 2.0
        b = s * s / 2.0
        d = spec.d
        pref = spec.normalization * (2.0 * math.pi) ** (d / 2.0) * s**d
        return pref * (math.pi / (a + b)) ** (d / 2.0) * math.exp(
            -a * b / (a + b) * e * e
        )
    if spec.family == "mollified_white":
        eps = float(spec.epsilon)
        a = v / 2.0
        b = eps / 2.0
        return spec.normalization * math.sqrt(math.pi / (a + b)) * math.exp(
            -a * b / (a + b) * e * e
        )
    if spec.d == 1:

        def density(x):
            return mu_density(spec, np.array([x]))

        def integrand(x):
            return math.exp(-v / 2.0 * (x - e) ** 2) * density(x)

        val = 0.0
        err = 0.0
        # split at the density singularity (origin) and the gaussian peak
        pieces = sorted({-np.inf, 0.0, e, np.inf})
        for lo, hi in zip(pieces[:-1], pieces[1:]):
            piece, pe = integrate.quad(integrand, lo, hi, limit=400)
            val += piece
            err += pe
        return val
    if spec.family == "riesz":
        # radial measure: g(|eta|) via the angular Laplace kernel
        K, p, _ = _radial_profile(spec)
        d = spec.d

        def angular(r):
            z = v * r * e
            if d == 2:
                return 2.0 * math.pi * special.i0e(z) * math.exp(z)
            if d == 3:
                return 4.0 * math.pi * math.sinh(z) / z if z > 0 else 4.0 * math.pi
            raise KernelError("shifted smoothed mass supports d <= 3")

        def integrand(r):
            return (
                K
                * r ** (p + d - 1)
                * math.exp(-v / 2.0 * (r * r + e * e))
                * angular(r)
            )

        val, _ = integrate.quad(integrand, 0.0, np.inf, limit=400)
        return val
    raise KernelError("shifted smoothed mass not implemented for this family/dimension")


# ---------------------------------------------------------------------------
# packing for the compiled energy kernel
# ---------------------------------------------------------------------------

GAMMA_CODE = {"constant": 0, "power": 1}
LAMBDA_CODE = {
    "constant_test": 0,
    "riesz": 1,
    "gaussian_test": 2,
    "mollified_white": 3,
    "fractional": 4,
}


def pack_time_kernel(spec: TimeKernelSpec) -> tuple[int, float, float]:
    """(code, amplitude, beta) consumed by the energy quadrature."""
    if spec.family == "none":
        raise KernelError("pack a concrete gamma (use constant(1) for momSk2)")
    if spec.beta_eff > 0.0:
        return GAMMA_CODE["power"], spec.amplitude, spec.beta_eff
    return GAMMA_CODE["constant"], spec.amplitude, 0.0


def pack_space_kernel(spec: SpaceKernelSpec):
    """Flatten a space kernel for the compiled backend.

    Returns (code, params, table_x, table_y) where params layout depends on
    the family; bessel is not packable (handled by the python fallback).
    """
    norm = spec.normalization
    if spec.family == "constant_test":
        return (
            LAMBDA_CODE["constant_test"],
            np.array([norm * float(spec.c)]),
            np.zeros(1),
            np.zeros(1),
        )
    if spec.family == "gaussian_test":
        return (
            LAMBDA_CODE["gaussian_test"],
            np.array([norm, float(spec.scale) ** 2, float(spec.d)]),
            np.zeros(1),
            np.zeros(1),
        )
    if spec.family == "mollified_white":
        return (
            LAMBDA_CODE["mollified_white"],
            np.array([norm, float(spec.epsilon)]),
            np.zeros(1),
            np.zeros(1),
        )
    if spec.family == "riesz":
        eta = float(spec.eta)
        xs, vals = _noncentral_inverse_moment_table(eta, spec.d)
        return (
            LAMBDA_CODE["riesz"],
            np.array([norm, eta, float(spec.d)]),
            xs,
            vals,
        )
    if spec.family == "fractional":
        # params: [norm, d, a_1, amp_1, ..., a_d, amp_d]; stacked axis tables
        params = [norm, float(spec.d)]
        xs_list, ys_list = [], []
        for h in spec.Hvec:
            a = 2.0 - 2.0 * h
            params.extend([a, h * (2.0 * h - 1.0)])
            xs, vals = _noncentral_inverse_moment_table(a, 1)
            xs_list.append(xs)
            ys_list.append(vals)
        return (
            LAMBDA_CODE["fractional"],
            np.array(params),
            np.concatenate(xs_list),
            np.concatenate(ys_list),
        )
    raise KernelError(f"family {spec.family} has no packed form (python fallback only)")
