"""Brownian path sampling and pairwise interaction energies.

The interaction energy

    I_{ij} = int_0^t int_0^t gamma(s - r) Lambda(B^i_s - B^j_r) ds dr

is the exponent of every Feynman-Kac moment estimator.  Its double
time-quadrature is the hot kernel of the package; the heavy lifting lives in
the compiled extension (shelab._energy) with a NumPy fallback selected at
import time (see shelab.energy_backend).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import energy_backend
from .kernels import (
    KernelError,
    SpaceKernelSpec,
    TimeKernelSpec,
    pack_time_kernel,
)


class InadmissibleSelfEnergy(KernelError):
    """Self-energy requested with a >= 2 - 2 beta (exponential moments blow up)."""


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature layout for the double time integral.

    mode         "midpoint_tensor" (tensor midpoints with rotated refinement
                 near the diagonal) or "offset_diagonal" (crude comparison
                 scheme with offset nodes on diagonal cells).
    refinement   subdivision factor for near-diagonal cells (transverse and
                 sub-u node counts).
    base_sub     sub-midpoints per axis on far cells (refinement-convergence
                 testing knob).
    geo_levels   geometric layers toward the diagonal singularity; the
                 remaining mass below the innermost layer is completed
                 analytically.

    No evaluation node lies on the diagonal s = r and no node forces a
    pointwise Lambda evaluation at the exact origin.
    """

    mode: str = "midpoint_tensor"
    refinement: int = 3
    base_sub: int = 1
    geo_levels: int = 14

    def __post_init__(self):
        if self.mode not in ("midpoint_tensor", "offset_diagonal"):
            raise ValueError(f"unknown quadrature mode {self.mode!r}")
        if self.refinement < 2 or self.base_sub < 1 or self.geo_levels < 4:
            raise ValueError("refinement >= 2, base_sub >= 1, geo_levels >= 4 required")


@dataclass(frozen=True)
class PathBundle:
    """k independent d-dimensional Brownian paths on a uniform grid.

    values[i, 0] = start for every path; increments are i.i.d. centered
    Gaussians with variance (t / steps) per coordinate.
    """

    k: int
    d: int
    t: float
    steps: int
    values: np.ndarray  # (k, steps + 1, d)
    seed: int
    start: np.ndarray  # (d,)

    @property
    def h(self) -> float:
        return self.t / self.steps

    def path(self, i: int) -> np.ndarray:
        return self.values[i]


def stream_for(seed: int, *key: int) -> np.random.Generator:
    """Deterministic RNG stream derived from (seed, key).

    The split function is numpy's SeedSequence with spawn_key = key, so
    streams for distinct keys are independent and results do not depend on
    how work is sharded across workers.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))


def sample_paths(
    k: int,
    d: int,
    t: float,
    steps: int,
    seed: int,
    start=None,
    stream_key: tuple[int, ...] = (),
) -> PathBundle:
    """Sample k independent standard Brownian paths started at ``start``."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    if t <= 0:
        raise ValueError("t must be positive")
    start = np.zeros(d) if start is None else np.asarray(start, dtype=float)
    if start.shape != (d,):
        raise ValueError(f"start must have dimension {d}")
    rng = stream_for(seed, *stream_key)
    increments = rng.standard_normal((k, steps, d)) * np.sqrt(t / steps)
    values = np.empty((k, steps + 1, d))
    values[:, 0, :] = start
    np.cumsum(increments, axis=1, out=values[:, 1:, :])
    values[:, 1:, :] += start
    return PathBundle(k=k, d=d, t=float(t), steps=steps, values=values,
                      seed=seed, start=start)


def _check_self_admissible(gamma: TimeKernelSpec, lam: SpaceKernelSpec):
    a = lam.self_singularity_order
    beta = gamma.beta_eff if gamma.family != "none" else 0.0
    if a >= 2.0 - 2.0 * beta:
        raise InadmissibleSelfEnergy(
            f"self-energy inadmissible: a = {a:.3g} >= 2 - 2 beta = "
            f"{2.0 - 2.0 * beta:.3g}"
        )


def batch_pair_energy(
    paths_a: np.ndarray,
    paths_b: np.ndarray,
    t: float,
    gamma: TimeKernelSpec,
    lam: SpaceKernelSpec,
    rule: QuadratureRule = QuadratureRule(),
    self_pair: bool = False,
) -> np.ndarray:
    """Vectorised energies over a batch of path pairs (batch, S+1, d)."""
    S = paths_a.shape[1] - 1
    h = t / S
    code, amp, beta = pack_time_kernel(gamma)
    if self_pair:
        _check_self_admissible(gamma, lam)
    return energy_backend.pair_energy_batch(
        np.ascontiguousarray(paths_a, dtype=float),
        paths_a if paths_b is paths_a else np.ascontiguousarray(paths_b, dtype=float),
        h, code, amp, beta, lam, self_pair,
        mode=rule.mode, refinement=rule.refinement,
        base_sub=rule.base_sub, geo_levels=rule.geo_levels,
    )


def interaction_energy(
    bundle: PathBundle,
    i: int,
    j: int,
    gamma: TimeKernelSpec,
    lam: SpaceKernelSpec,
    rule: QuadratureRule = QuadratureRule(),
) -> float:
    """Quadrature of the pairwise double integral along bundle paths i, j."""
    if lam.d != bundle.d:
        raise KernelError("kernel dimension does not match the bundle")
    pa = bundle.values[i][None, :, :]
    pb = pa if i == j else bundle.values[j][None, :, :]
    out = batch_pair_energy(pa, pb, bundle.t, gamma, lam, rule, self_pair=(i == j))
    return float(out[0])


def pairwise_energy_matrix(
    bundle: PathBundle,
    gamma: TimeKernelSpec,
    lam: SpaceKernelSpec,
    rule: QuadratureRule = QuadratureRule(),
    include_diagonal: bool = False,
) -> np.ndarray:
    """Symmetric k x k energy matrix; diagonal filled only when requested."""
    k = bundle.k
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = interaction_energy(bundle, i, j, gamma, lam, rule)
        if include_diagonal:
            out[i, i] = interaction_energy(bundle, i, i, gamma, lam, rule)
    return out


def bundle_energy_sums(
    bundle_values: np.ndarray,
    t: float,
    gamma: TimeKernelSpec,
    lam: SpaceKernelSpec,
    rule: QuadratureRule,
    include_diagonal: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """(off_diagonal_sum, diagonal_sum) for a batch of bundles.

    bundle_values: (batch, k, S+1, d); off_diagonal_sum is over unordered
    pairs i < j.  This is the sampler core used by the moment estimators.
    """
    batch, k, n_nodes, d = bundle_values.shape
    off = np.zeros(batch)
    diag = np.zeros(batch)
    for i in range(k):
        for j in range(i + 1, k):
            off += batch_pair_energy(
                bundle_values[:, i], bundle_values[:, j], t, gamma, lam, rule, False
            )
    if include_diagonal:
        for i in range(k):
            pa = bundle_values[:, i]
            diag += batch_pair_energy(pa, pa, t, gamma, lam, rule, True)
    return off, diag


def dump_paths_csv(bundle: PathBundle, path: str):
    """Debug dump: one row per grid step, one column per (path, coordinate)."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["step"] + [
            f"b{i}_x{c}" for i in range(bundle.k) for c in range(bundle.d)
        ]
        writer.writerow(header)
        for n in range(bundle.steps + 1):
            row = [n] + [
                repr(float(bundle.values[i, n, c]))
                for i in range(bundle.k)
                for c in range(bundle.d)
            ]
            writer.writerow(row)
