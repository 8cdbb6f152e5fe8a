"""Wiener-chaos series terms for the second moment.

For flat initial data the n-th chaos weight of the solution satisfies

    T_n := n! ||f_n||^2 = E[I^n] / n!,

with I the cross interaction energy of two independent Brownian paths: the
terms are the Taylor coefficients of E[u^2] = E[exp(I)].  Terms are
estimated from shared path-pair samples (all powers of the same I values),
so partial-sum errors come from the per-sample truncated exponential and
positive cross-term correlations cancel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import fk_moments as _fk
from .kernels import KernelError, SpaceKernelSpec, TimeKernelSpec
from .paths import QuadratureRule, batch_pair_energy, stream_for

CHUNK = 256


@dataclass(frozen=True)
class ChaosTerm:
    n: int
    value: float
    stderr: float
    method: str = "path_mc"


def sample_cross_energies(
    gamma: TimeKernelSpec,
    lam: SpaceKernelSpec,
    t: float,
    samples: int,
    steps: int,
    seed: int,
    rule: QuadratureRule = QuadratureRule(),
) -> np.ndarray:
    """I values over independent path pairs (flat initial data, start 0)."""
    h = t / steps
    out = []
    idx = 0
    remaining = samples
    while remaining > 0:
        n = min(CHUNK, remaining)
        rng = stream_for(seed, idx)
        incr = rng.standard_normal((n, 2, steps, lam.d)) * math.sqrt(h)
        values = np.zeros((n, 2, steps + 1, lam.d))
        np.cumsum(incr, axis=2, out=values[:, :, 1:, :])
        out.append(
            batch_pair_energy(values[:, 0], values[:, 1], t, gamma, lam, rule, False)
        )
        remaining -= n
        idx += 1
    return np.concatenate(out)


def chaos_terms_from_energies(energies: np.ndarray, n_max: int) -> list[ChaosTerm]:
    """T_n = mean(I^n)/n! for n = 0..n_max with per-term standard errors."""
    n_samples = len(energies)
    terms = [ChaosTerm(0, 1.0, 0.0, "exact")]
    powers = np.ones_like(energies)
    for n in range(1, n_max + 1):
        powers = powers * energies
        fact = math.factorial(n)
        mean = powers.mean() / fact
        se = powers.std(ddof=1) / fact / math.sqrt(n_samples)
        terms.append(ChaosTerm(n, float(mean), float(se)))
    return terms


def chaos_term(
    n: int,
    gamma: TimeKernelSpec,
    lam: SpaceKernelSpec,
    t: float,
    samples: int = 4000,
    steps: int = 48,
    seed: int = 0,
    rule: QuadratureRule = QuadratureRule(),
) -> ChaosTerm:
    """MC estimate of T_n = E[I^n]/n! (u0 = 1 only)."""
    if n < 0:
        raise KernelError("chaos order must be nonnegative")
    if n == 0:
        return ChaosTerm(0, 1.0, 0.0, "exact")
    energies = sample_cross_energies(gamma, lam, t, samples, steps, seed, rule)
    return chaos_terms_from_energies(energies, n)[n]


def chaos_partial_sum(
    n_max: int,
    gamma: TimeKernelSpec,
    lam: SpaceKernelSpec,
    t: float,
    samples: int = 4000,
    steps: int = 48,
    seed: int = 0,
    rule: QuadratureRule = QuadratureRule(),
) -> dict:
    """sum_{n <= N} T_n from shared samples, with the partial-sum standard
    error taken from the per-sample truncated exponentials (correlations
    between terms included by construction)."""
    energies = sample_cross_energies(gamma, lam, t, samples, steps, seed, rule)
    terms = chaos_terms_from_energies(energies, n_max)
    # per-sample truncated exponential sum_{n<=N} I^n / n!
    per_sample = np.ones_like(energies)
    powers = np.ones_like(energies)
    for n in range(1, n_max + 1):
        powers = powers * energies
        per_sample = per_sample + powers / math.factorial(n)
    total = float(per_sample.mean())
    se = float(per_sample.std(ddof=1) / math.sqrt(len(energies)))
    return {
        "n_max": n_max,
        "terms": terms,
        "partial_sum": total,
        "stderr": se,
        "samples": len(energies),
    }


def jackknife_ratio(energies: np.ndarray, n: int) -> tuple[float, float]:
    """Delete-one jackknife estimate of T_{n+1}/T_n (ratio diagnostics)."""
    n_samples = len(energies)
    pn = energies**n
    pn1 = energies ** (n + 1)
    sn, sn1 = pn.sum(), pn1.sum()
    full = (sn1 / (n + 1)) / sn if sn > 0 else math.inf
    loo = (sn1 - pn1) / (n + 1) / (sn - pn)
    jk = n_samples * full - (n_samples - 1) * loo.mean()
    se = math.sqrt((n_samples - 1) / n_samples * np.sum((loo - loo.mean()) ** 2))
    return float(jk), float(se)


def compare_with_fk(
    partial: dict,
    gamma: TimeKernelSpec,
    lam: SpaceKernelSpec,
    t: float,
    samples: int = 4000,
    steps: int = 48,
    seed: int = 1,
    rule: QuadratureRule = QuadratureRule(),
) -> dict:
    """Companion report: partial sum vs the k = 2 Skorohod FK estimate."""
    cfg = _fk.MomentConfig(
        sense="skorohod", gamma=gamma, lam=lam, k=2, t=t,
        samples=samples, steps=steps, seed=seed, rule=rule,
    )
    est = _fk.skorohod_moment(cfg)
    fk_mean = math.exp(est.log_mean)
    fk_se = fk_mean * est.stderr_log
    diff = partial["partial_sum"] - fk_mean
    combined = math.hypot(partial["stderr"], fk_se)
    return {
        "partial_sum": partial["partial_sum"],
        "partial_stderr": partial["stderr"],
        "fk_moment": fk_mean,
        "fk_stderr": fk_se,
        "difference": diff,
        "combined_stderr": combined,
        "z": diff / combined if combined > 0 else math.inf,
    }


def write_chaos_csv(path: str, terms: list[ChaosTerm]):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "value", "stderr"])
        for term in terms:
            writer.writerow([term.n, repr(term.value), repr(term.stderr)])
