"""Monte Carlo Feynman-Kac estimators for E[u_{t,x}^k].

Skorohod moments carry only cross-pair interaction energies,

    E[u_{t,x}^k] = E_B[ prod_i u0(B^i_t + x) exp( sum_{i<j} I_{ij} ) ],

while Stratonovich moments additionally carry the diagonal self-energies.
The diagonal convention is pinned by the constant-kernel closed form
(k = 2, t = 1, unit kernels gives exactly e^3): the Stratonovich exponent is

    sum_{i != j} I_{ij} + (1/2) sum_i I_{ii}
        = 2 sum_{i<j} I_{ij} + (1/2) sum_i I_{ii}.

Everything is estimated in the log domain: per-sample exponents are stored
raw and reduced with a deterministic pairwise-tree log-sum-exp, so results
are independent of worker count and stable against overflow.
"""

from __future__ import annotations

import json
import math
import multiprocessing
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate

from . import kernels as _k
from .kernels import (
    KernelError,
    QuadratureNotConverged,
    SpaceKernelSpec,
    TimeKernelSpec,
)
from .paths import (
    InadmissibleSelfEnergy,
    QuadratureRule,
    bundle_energy_sums,
    stream_for,
)

CHUNK = 256  # samples per RNG chunk; fixed so results are worker-invariant


class IllConditionedFit(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# log-domain reduction
# ---------------------------------------------------------------------------


def tree_logsumexp(x: np.ndarray) -> float:
    """Pairwise-tree log-sum-exp; deterministic, order-defined reduction."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("empty reduction")
    while x.size > 1:
        n_even = (x.size // 2) * 2
        combined = np.logaddexp(x[0:n_even:2], x[1:n_even:2])
        if x.size % 2:
            combined = np.concatenate([combined, x[-1:]])
        x = combined
    return float(x[0])


def log_mean_exp(x: np.ndarray) -> float:
    return tree_logsumexp(x) - math.log(len(x))


def log_weight_stats(x: np.ndarray) -> tuple[float, float, float]:
    """(log_mean, stderr_log, ess) of exp(x) via max-shifted weights."""
    x = np.asarray(x, dtype=float)
    n = x.size
    log_mean = log_mean_exp(x)
    shift = np.max(x)
    w = np.exp(x - shift)
    mean_w = w.mean()
    if n > 1:
        se = w.std(ddof=1) / (mean_w * math.sqrt(n))
    else:
        se = math.inf
    ess = float(w.sum() ** 2 / np.sum(w * w))
    return log_mean, float(se), ess


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_SENSES = ("skorohod", "stratonovich")
_NOISE_KINDS = ("time_dependent", "time_independent")


@dataclass(frozen=True)
class MomentConfig:
    sense: str
    gamma: TimeKernelSpec
    lam: SpaceKernelSpec
    k: int
    t: float
    noise_kind: str = "time_dependent"
    x: tuple[float, ...] | None = None
    u0: str = "one"
    u0_center: tuple[float, ...] | None = None
    u0_width: float = 1.0
    samples: int = 2000
    steps: int = 48
    seed: int = 0
    rule: QuadratureRule = field(default_factory=QuadratureRule)

    def __post_init__(self):
        if self.sense not in _SENSES:
            raise KernelError(f"unknown sense {self.sense!r}")
        if self.noise_kind not in _NOISE_KINDS:
            raise KernelError(f"unknown noise kind {self.noise_kind!r}")
        if self.k < 1:
            raise KernelError("moment order k must be >= 1")
        if self.t < 0:
            raise KernelError("t must be nonnegative")
        if self.u0 not in ("one", "gaussian_bump"):
            raise KernelError("u0 must be 'one' or 'gaussian_bump'")
        if self.samples < 2 or self.steps < 2:
            raise KernelError("samples and steps must be >= 2")
        if self.sense == "stratonovich" and self.noise_kind == "time_dependent":
            a = self.lam.self_singularity_order
            if a >= 2.0 - 2.0 * self.gamma.beta_eff:
                raise InadmissibleSelfEnergy(
                    f"stratonovich requires a < 2 - 2 beta, got a = {a:.3g}, "
                    f"beta = {self.gamma.beta_eff:.3g}"
                )
        if self.lam.family == "riesz" and self.lam.eta == self.lam.d:
            raise KernelError(
                "riesz eta = d has no pointwise Fourier-consistent kernel; "
                "use mollified_white for the white-noise boundary"
            )

    @property
    def position(self) -> np.ndarray:
        if self.x is None:
            return np.zeros(self.lam.d)
        return np.asarray(self.x, dtype=float)

    def energy_gamma(self) -> TimeKernelSpec:
        """gamma used inside the double time integral (momSk2 drops it)."""
        if self.noise_kind == "time_independent":
            return TimeKernelSpec.constant(1.0)
        return self.gamma

    def to_dict(self) -> dict:
        return {
            "sense": self.sense,
            "noise_kind": self.noise_kind,
            "gamma": self.gamma.to_dict(),
            "lambda": self.lam.to_dict(),
            "k": self.k,
            "t": self.t,
            "x": list(self.position),
            "u0": self.u0,
            "u0_center": list(self.u0_center) if self.u0_center else None,
            "u0_width": self.u0_width,
            "samples": self.samples,
            "steps": self.steps,
            "seed": self.seed,
            "rule": {
                "mode": self.rule.mode,
                "refinement": self.rule.refinement,
                "base_sub": self.rule.base_sub,
                "geo_levels": self.rule.geo_levels,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MomentConfig":
        rule = data.get("rule", {})
        return cls(
            sense=data["sense"],
            noise_kind=data.get("noise_kind", "time_dependent"),
            gamma=TimeKernelSpec.from_dict(data["gamma"]),
            lam=SpaceKernelSpec.from_dict(data["lambda"]),
            k=int(data["k"]),
            t=float(data["t"]),
            x=tuple(data["x"]) if data.get("x") is not None else None,
            u0=data.get("u0", "one"),
            u0_center=tuple(data["u0_center"]) if data.get("u0_center") else None,
            u0_width=float(data.get("u0_width", 1.0)),
            samples=int(data["samples"]),
            steps=int(data["steps"]),
            seed=int(data.get("seed", 0)),
            rule=QuadratureRule(
                mode=rule.get("mode", "midpoint_tensor"),
                refinement=int(rule.get("refinement", 3)),
                base_sub=int(rule.get("base_sub", 1)),
                geo_levels=int(rule.get("geo_levels", 12)),
            ),
        )


@dataclass(frozen=True)
class MomentEstimate:
    log_mean: float
    stderr_log: float
    samples_used: int
    ess: float
    config: MomentConfig
    degenerate_variance: bool = False

    def to_dict(self) -> dict:
        return {
            "log_mean": self.log_mean,
            "stderr_log": self.stderr_log,
            "samples_used": self.samples_used,
            "ess": self.ess,
            "degenerate_variance": self.degenerate_variance,
            "config": self.config.to_dict(),
        }


# ---------------------------------------------------------------------------
# sampling core
# ---------------------------------------------------------------------------


def _log_u0(cfg: MomentConfig, endpoints: np.ndarray) -> np.ndarray:
    """sum_i log u0(B^i_t + x) per sample; endpoints: (batch, k, d)."""
    if cfg.u0 == "one":
        return np.zeros(endpoints.shape[0])
    center = (
        np.zeros(cfg.lam.d)
        if cfg.u0_center is None
        else np.asarray(cfg.u0_center, dtype=float)
    )
    pos = endpoints + cfg.position
    dev = pos - center
    return -np.sum(dev * dev, axis=(1, 2)) / (2.0 * cfg.u0_width**2)


def sample_energy_sums(cfg: MomentConfig, chunk_index: int, n: int):
    """(off_sum, diag_sum, log_u0) arrays for one seeded chunk of bundles."""
    rng = stream_for(cfg.seed, chunk_index)
    h = cfg.t / cfg.steps
    incr = rng.standard_normal((n, cfg.k, cfg.steps, cfg.lam.d)) * math.sqrt(h)
    values = np.zeros((n, cfg.k, cfg.steps + 1, cfg.lam.d))
    np.cumsum(incr, axis=2, out=values[:, :, 1:, :])
    include_diag = cfg.sense == "stratonovich"
    off, diag = bundle_energy_sums(
        values, cfg.t, cfg.energy_gamma(), cfg.lam, cfg.rule, include_diag
    )
    logu = _log_u0(cfg, values[:, :, -1, :])
    return off, diag, logu


def _chunk_worker(payload):
    cfg_dict, chunk_index, n = payload
    cfg = MomentConfig.from_dict(cfg_dict)
    off, diag, logu = sample_energy_sums(cfg, chunk_index, n)
    return chunk_index, off, diag, logu


def collect_energy_sums(cfg: MomentConfig, workers: int = 1):
    """All chunks, in deterministic chunk order regardless of worker count."""
    chunks = []
    remaining = cfg.samples
    idx = 0
    while remaining > 0:
        n = min(CHUNK, remaining)
        chunks.append((cfg.to_dict(), idx, n))
        remaining -= n
        idx += 1
    if workers > 1 and len(chunks) > 1:
        with multiprocessing.Pool(workers) as pool:
            results = pool.map(_chunk_worker, chunks)
        results.sort(key=lambda r: r[0])
    else:
        results = [_chunk_worker(c) for c in chunks]
    off = np.concatenate([r[1] for r in results])
    diag = np.concatenate([r[2] for r in results])
    logu = np.concatenate([r[3] for r in results])
    return off, diag, logu


def sample_log_weights(cfg: MomentConfig, workers: int = 1) -> np.ndarray:
    """Per-sample log weights of the moment estimator (raw exponents)."""
    off, diag, logu = collect_energy_sums(cfg, workers)
    if cfg.sense == "skorohod":
        return logu + off
    # stratonovich: paper's full double sum with the diagonal halved
    return logu + 2.0 * off + 0.5 * diag


def _estimate(cfg: MomentConfig, workers: int) -> MomentEstimate:
    t0 = time.time()
    lw = sample_log_weights(cfg, workers)
    log_mean, se, ess = log_weight_stats(lw)
    return MomentEstimate(
        log_mean=log_mean,
        stderr_log=se,
        samples_used=len(lw),
        ess=ess,
        config=cfg,
        degenerate_variance=ess < 0.01 * len(lw),
    )


def skorohod_moment(cfg: MomentConfig, workers: int = 1) -> MomentEstimate:
    if cfg.sense != "skorohod":
        raise KernelError("config sense must be 'skorohod'")
    return _estimate(cfg, workers)


def stratonovich_moment(cfg: MomentConfig, workers: int = 1) -> MomentEstimate:
    if cfg.sense != "stratonovich":
        raise KernelError("config sense must be 'stratonovich'")
    return _estimate(cfg, workers)


def moment(cfg: MomentConfig, workers: int = 1) -> MomentEstimate:
    return _estimate(cfg, workers)


# ---------------------------------------------------------------------------
# spectral quadratures (deterministic oracles)
# ---------------------------------------------------------------------------


def variance_V_spectral(
    gamma: TimeKernelSpec,
    lam: SpaceKernelSpec,
    t: float,
    tol: float = 1e-9,
) -> float:
    """sigma_t^2 = E_B Var_W(V_{t,x}): after the change of variables
    x = u - v the double time integral collapses to

        2 (2 pi)^{-d} int_0^t (t - x) gamma(x) m(x/2) dx,

    with m the smoothed spectral mass.  The (2 pi)^{-d} is the Parseval
    factor making the spectral value match the kernel-side path expectation.
    """
    if t < 0:
        raise KernelError("t must be nonnegative")
    if t == 0.0:
        return 0.0
    beta = gamma.beta_eff
    amp = gamma.amplitude
    rho, _ = _k.mu_smoothed_singularity(lam)
    q = 1.0 - beta - rho
    if q <= 0.0:
        raise KernelError(
            "variance integral diverges: requires beta + singularity < 1 "
            "(Hypothesis-style admissibility fails)"
        )

    def f(z):
        x = z ** (1.0 / q)
        return (
            (t - x)
            * amp
            * (x ** (-beta) if beta > 0 else 1.0)
            * _k.mu_smoothed_mass(lam, x / 2.0)
            * (1.0 / q)
            * z ** (1.0 / q - 1.0)
        )

    val, err = integrate.quad(f, 0.0, t**q, limit=300)
    if err > max(tol, abs(val) * 1e-8):
        raise QuadratureNotConverged(f"variance quadrature error {err:.2e}")
    return 2.0 * val / (2.0 * math.pi) ** lam.d


def expected_cross_energy(
    gamma: TimeKernelSpec,
    lam: SpaceKernelSpec,
    t: float,
) -> float:
    """E[I] for two independent paths from the same point:

        (2 pi)^{-d} int_0^t gamma(x) [ int_x^{2t-x} m(y/2) dy ] dx.
    """
    if t == 0.0:
        return 0.0
    beta = gamma.beta_eff
    amp = gamma.amplitude
    rho, coef = _k.mu_smoothed_singularity(lam)
    exact_power = lam.family in ("riesz", "fractional", "constant_test")

    if exact_power:
        # m(y/2) = coef (y/2)^{-rho}
        c2 = coef * 2.0**rho

        def inner(x):
            if rho == 0.0:
                return c2 * (2.0 * t - 2.0 * x)
            return c2 * ((2.0 * t - x) ** (1.0 - rho) - x ** (1.0 - rho)) / (1.0 - rho)

    else:

        def inner(x):
            val, _ = integrate.quad(
                lambda y: _k.mu_smoothed_mass(lam, y / 2.0), x, 2.0 * t - x, limit=200
            )
            return val

    q = 1.0 - beta

    def outer(z):
        x = z ** (1.0 / q)
        g = amp * (x ** (-beta) if beta > 0 else 1.0)
        return g * inner(x) * (1.0 / q) * z ** (1.0 / q - 1.0)

    val, _ = integrate.quad(outer, 0.0, t**q, limit=300)
    return val / (2.0 * math.pi) ** lam.d


# ---------------------------------------------------------------------------
# intermittency exponent fitting
# ---------------------------------------------------------------------------


def reference_exponents(
    lam: SpaceKernelSpec,
    gamma: TimeKernelSpec | None = None,
    noise_kind: str = "time_dependent",
) -> tuple[float, float]:
    """(kappa1, kappa2) with log E[u^k] ~ t^{kappa1} k^{kappa2}.

    Time dependent: ((4 - 2 beta - a)/(2 - a), (4 - a)/(2 - a)); time
    independent: both (4 - a)/(2 - a).  The white-space d = 1 case is the
    a = 1 boundary, giving (3 - 2 beta, 3) and (3, 3).
    """
    if lam.family == "mollified_white":
        a = 1.0
    elif lam.family == "riesz":
        a = float(lam.eta)
    elif lam.family == "fractional":
        a = lam.self_singularity_order
    elif lam.family == "bessel":
        a = lam.self_singularity_order
    else:
        raise KernelError("no reference exponents for bounded test kernels")
    if a >= 2.0:
        raise KernelError("reference exponents require a < 2")
    if noise_kind == "time_independent":
        kap = (4.0 - a) / (2.0 - a)
        return kap, kap
    beta = gamma.beta_eff if gamma is not None else 0.0
    return (4.0 - 2.0 * beta - a) / (2.0 - a), (4.0 - a) / (2.0 - a)


def fit_intermittency_exponents(table) -> dict:
    """Least-squares fit of log(log-moment) = c + kappa1 log t + kappa2 log k.

    ``table`` is an iterable of mappings with keys t, k, log_mean and
    optionally stderr_log.  Requires >= 3 distinct t and k values and
    positive log-moments.
    """
    rows = list(table)
    ts = sorted({r["t"] for r in rows})
    ks = sorted({r["k"] for r in rows})
    if len(ts) < 3 or len(ks) < 3:
        raise IllConditionedFit("need at least 3 values of both t and k")
    y, X, w = [], [], []
    for r in rows:
        lm = r["log_mean"]
        if not (lm > 0 and math.isfinite(lm)):
            raise IllConditionedFit(f"nonpositive log-moment at t={r['t']}, k={r['k']}")
        y.append(math.log(lm))
        X.append([1.0, math.log(r["t"]), math.log(r["k"])])
        sigma = r.get("stderr_log", 0.0) / lm
        w.append(1.0 / max(sigma, 1e-3))
    X = np.asarray(X)
    y = np.asarray(y)
    w = np.asarray(w)
    Xw = X * w[:, None]
    yw = y * w
    coef, _, rank, _ = np.linalg.lstsq(Xw, yw, rcond=None)
    if rank < 3:
        raise IllConditionedFit("design matrix is rank deficient")
    residuals = y - X @ coef
    return {
        "intercept": float(coef[0]),
        "kappa1": float(coef[1]),
        "kappa2": float(coef[2]),
        "residuals": residuals.tolist(),
    }


# ---------------------------------------------------------------------------
# result emission
# ---------------------------------------------------------------------------


def write_moment_json(est: MomentEstimate, path: str, runtime: float | None = None):
    payload = est.to_dict()
    if runtime is not None:
        payload["runtime_s"] = runtime
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def append_sweep_csv(path: str, rows):
    """Append (t, k, log_mean, stderr_log, ess) rows; writes header if new."""
    import csv
    import os

    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(["t", "k", "log_mean", "stderr_log", "ess", "samples"])
        for r in rows:
            writer.writerow(
                [r["t"], r["k"], repr(r["log_mean"]), repr(r["stderr_log"]),
                 repr(r["ess"]), r["samples"]]
            )
