"""Spectral synthesis of the noise, regularized solutions, and
Littlewood-Paley / Besov analysis.

The mollified noise density W'(t, x) (time mollifier: boxcar of width delta;
space mollifier: heat kernel at scale epsilon) is synthesized on a periodic
box by independent spectral coefficients whose variance is the product of
the temporal spectral cell mass, the squared boxcar transform, the spatial
spectral cell mass and the squared heat-kernel transform, divided by
(2 pi)^{d+1} per the Fourier convention.  The field

    X(t, x) = Re sum_k sqrt(var_k) (g_k + i g'_k) exp(i omega_k (t, x))

is exactly stationary Gaussian with covariance sum_k var_k cos(omega_k h),
the discrete target that the ensemble tests compare against.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels as _k
from .kernels import KernelError, SpaceKernelSpec, TimeKernelSpec
from .paths import stream_for


class AliasingViolation(KernelError):
    """Mollifier scales under-resolve the grid mesh."""


class InsufficientLevels(RuntimeError):
    pass


def _is_pow2(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


# ---------------------------------------------------------------------------
# noise synthesis
# ---------------------------------------------------------------------------


@dataclass
class NoiseField:
    """Grid realization of the mollified noise density.

    values has shape (nt, nx, ..: d axes) for time-dependent noise or
    (nx, ..) for time-independent noise.  ``spectrum`` stores the per-mode
    coefficient variances (same shape), the exact discrete covariance
    target.
    """

    values: np.ndarray
    gamma: TimeKernelSpec
    lam: SpaceKernelSpec
    L: float
    T_box: float | None
    epsilon: float
    delta: float | None
    seed: int
    spectrum: np.ndarray | None = None

    @property
    def time_dependent(self) -> bool:
        return self.T_box is not None

    @property
    def d(self) -> int:
        return self.lam.d

    @property
    def nx(self) -> int:
        return self.values.shape[-1]

    @property
    def nt(self) -> int:
        if not self.time_dependent:
            raise KernelError("time-independent field has no time axis")
        return self.values.shape[0]

    @property
    def dx(self) -> float:
        return self.L / self.nx

    @property
    def dt(self) -> float:
        return self.T_box / self.nt

    def target_covariance(self, lag_t: int = 0, lag_x: tuple[int, ...] | int = 0) -> float:
        """Exact covariance of the synthesized field at a grid lag."""
        if self.spectrum is None:
            raise KernelError("field was synthesized without stored spectrum")
        shape = self.spectrum.shape
        if self.time_dependent:
            lags = (lag_t,) + (
                tuple(np.atleast_1d(lag_x)) if not np.isscalar(lag_x) else (lag_x,) * self.d
            )
        else:
            lags = tuple(np.atleast_1d(lag_x)) if not np.isscalar(lag_x) else (lag_x,) * self.d
        grids = np.meshgrid(
            *[np.fft.fftfreq(n, d=1.0 / n) for n in shape], indexing="ij"
        )
        phase = sum(
            2.0 * math.pi * g * lag / n for g, lag, n in zip(grids, lags, shape)
        )
        return float(np.sum(self.spectrum * np.cos(phase)))


def _space_cell_masses(lam: SpaceKernelSpec, L: float, nx: int) -> np.ndarray:
    """Spectral mass of mu per grid frequency cell (d-dim array).

    d = 1 uses exact radial cell integrals; d >= 2 uses the pointwise
    density times the cell volume, with the zero cell taken as the inscribed
    ball mass (small documented bias at one mode out of nx^d).
    """
    d = lam.d
    dxi = 2.0 * math.pi / L
    freqs = np.fft.fftfreq(nx, d=1.0 / nx) * dxi
    if d == 1:
        masses = np.empty(nx)
        for i, xi in enumerate(freqs):
            a = abs(xi) - dxi / 2.0
            b = abs(xi) + dxi / 2.0
            if a < 0:
                masses[i] = _k.mu_ball_mass(lam, b)
            else:
                masses[i] = 0.5 * (
                    _k.mu_ball_mass(lam, b) - _k.mu_ball_mass(lam, a)
                )
        return masses
    grids = np.meshgrid(*([freqs] * d), indexing="ij")
    out = np.zeros(grids[0].shape)
    it = np.nditer(grids[0], flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xi = np.array([g[idx] for g in grids])
        if np.all(xi == 0.0):
            out[idx] = _k.mu_ball_mass(lam, dxi / 2.0)
        else:
            try:
                out[idx] = _k.mu_density(lam, xi) * dxi**d
            except _k.SingularAtZero:
                # on-axis point of a fractional density: cell average along
                # the singular axes
                val = lam.normalization
                for x, hcomp in zip(
                    xi, lam.Hvec if lam.family == "fractional" else [None] * d
                ):
                    if lam.family != "fractional":
                        raise
                    cst = _k._axis_fractional_constant(hcomp)
                    p = 1.0 - 2.0 * hcomp
                    if x == 0.0:
                        val *= cst * 2.0 * (dxi / 2.0) ** (p + 1.0) / (p + 1.0)
                    else:
                        val *= cst * abs(x) ** p * dxi
                out[idx] = val
        # correct fractional off-axis cells: plain density * volume is fine
    return out


def _time_cell_masses(gamma: TimeKernelSpec, T_box: float, nt: int) -> np.ndarray:
    dtau = 2.0 * math.pi / T_box
    freqs = np.fft.fftfreq(nt, d=1.0 / nt) * dtau
    masses = np.empty(nt)
    for i, tau in enumerate(freqs):
        a = abs(tau) - dtau / 2.0
        b = abs(tau) + dtau / 2.0
        if a < 0:
            masses[i] = 2.0 * _k.gamma_spectral_cell_mass(gamma, 0.0, b)
        else:
            masses[i] = _k.gamma_spectral_cell_mass(gamma, a, b)
    return masses


def _boxcar_sq(tau: np.ndarray, delta: float) -> np.ndarray:
    z = tau * delta / 2.0
    out = np.ones_like(tau)
    nz = z != 0.0
    out[nz] = (np.sin(z[nz]) / z[nz]) ** 2
    return out


def synthesize_noise(
    gamma: TimeKernelSpec,
    lam: SpaceKernelSpec,
    L: float,
    nx: int,
    epsilon: float,
    T_box: float | None = None,
    nt: int | None = None,
    delta: float | None = None,
    seed: int = 0,
    store_spectrum: bool = True,
) -> NoiseField:
    """Stationary Gaussian field on the periodic box with covariance
    (phi_delta * phi_delta * gamma) (x) (p_eps * p_eps * Lambda)."""
    if not _is_pow2(nx):
        raise KernelError("nx must be a power of two")
    d = lam.d
    dx = L / nx
    if epsilon < dx * (1.0 - 1e-12):
        raise AliasingViolation(
            f"epsilon = {epsilon:.4g} under-resolves the space mesh {dx:.4g}"
        )
    time_dep = gamma.family != "none"
    if time_dep:
        if T_box is None or nt is None or delta is None:
            raise KernelError("time-dependent synthesis needs T_box, nt, delta")
        if not _is_pow2(nt):
            raise KernelError("nt must be a power of two")
        dt = T_box / nt
        if delta < dt * (1.0 - 1e-12):
            raise AliasingViolation(
                f"delta = {delta:.4g} under-resolves the time mesh {dt:.4g}"
            )

    space_mass = _space_cell_masses(lam, L, nx)
    dxi = 2.0 * math.pi / L
    freqs = np.fft.fftfreq(nx, d=1.0 / nx) * dxi
    if d == 1:
        xi_sq = freqs**2
    else:
        grids = np.meshgrid(*([freqs] * d), indexing="ij")
        xi_sq = sum(g**2 for g in grids)
    space_var = space_mass * np.exp(-epsilon * xi_sq) / (2.0 * math.pi) ** d

    if time_dep:
        time_mass = _time_cell_masses(gamma, T_box, nt)
        dtau = 2.0 * math.pi / T_box
        taus = np.fft.fftfreq(nt, d=1.0 / nt) * dtau
        time_var = time_mass * _boxcar_sq(taus, delta) / (2.0 * math.pi)
        var = time_var.reshape((nt,) + (1,) * d) * space_var[None, ...]
    else:
        var = space_var

    rng = stream_for(seed, 7001)
    g1 = rng.standard_normal(var.shape)
    g2 = rng.standard_normal(var.shape)
    coeff = np.sqrt(var) * (g1 + 1j * g2)
    values = np.real(np.fft.ifftn(coeff)) * coeff.size

    return NoiseField(
        values=values,
        gamma=gamma,
        lam=lam,
        L=L,
        T_box=T_box if time_dep else None,
        epsilon=epsilon,
        delta=delta if time_dep else None,
        seed=seed,
        spectrum=var if store_spectrum else None,
    )


# ---------------------------------------------------------------------------
# regularized Feynman-Kac solution
# ---------------------------------------------------------------------------


def _bilinear_gather(field: NoiseField, t_pts: np.ndarray, x_pts: np.ndarray,
                     warn: list | None = None) -> np.ndarray:
    """Field values at (t, x) points by (bi)linear interpolation with
    periodic wrap in space (d = 1); t_pts/x_pts broadcast together."""
    if field.d != 1:
        raise KernelError("path evaluation supports d = 1 fields")
    L = field.L
    nx = field.nx
    dx = field.dx
    half = L / 2.0
    if warn is not None and (np.any(x_pts < -half) or np.any(x_pts >= half)):
        warn.append("path_exits_box")
    xg = (x_pts + half) / dx
    i0 = np.floor(xg).astype(int)
    fx = xg - i0
    i0m = np.mod(i0, nx)
    i1m = np.mod(i0 + 1, nx)
    if field.time_dependent:
        dt = field.dt
        tg = t_pts / dt
        j0 = np.floor(tg).astype(int)
        ft = tg - j0
        j0m = np.mod(j0, field.nt)
        j1m = np.mod(j0 + 1, field.nt)
        v = (
            field.values[j0m, i0m] * (1 - ft) * (1 - fx)
            + field.values[j0m, i1m] * (1 - ft) * fx
            + field.values[j1m, i0m] * ft * (1 - fx)
            + field.values[j1m, i1m] * ft * fx
        )
        return v
    return field.values[i0m] * (1 - fx) + field.values[i1m] * fx


def regularized_V(
    field: NoiseField,
    path_values: np.ndarray,
    t: float,
    x: float = 0.0,
    warnings_out: list | None = None,
) -> float | np.ndarray:
    """V^{eps,delta}_{t,x} = int_0^t W'(t - s, B^x_s) ds by midpoint
    quadrature along the path grid with multilinear field interpolation.

    path_values: (S+1,) or (batch, S+1) positions of B (starting at 0).
    """
    pv = np.atleast_2d(np.asarray(path_values, dtype=float))
    batch, n_nodes = pv.shape
    S = n_nodes - 1
    if t == 0.0:
        out = np.zeros(batch)
        return out if path_values.ndim > 1 else float(out[0])
    if field.time_dependent and t > field.T_box:
        raise KernelError("path horizon exceeds the field's time box")
    ds = t / S
    s_mid = (np.arange(S) + 0.5) * ds
    b_mid = 0.5 * (pv[:, :-1] + pv[:, 1:]) + x
    if field.time_dependent:
        t_args = np.broadcast_to(t - s_mid, b_mid.shape)
        vals = _bilinear_gather(field, t_args, b_mid, warnings_out)
    else:
        vals = _bilinear_gather(field, np.zeros_like(b_mid), b_mid, warnings_out)
    out = vals.sum(axis=1) * ds
    return out if path_values.ndim > 1 else float(out[0])


def regularized_solution(
    field: NoiseField,
    t_list,
    x_list,
    inner_samples: int = 400,
    steps: int = 64,
    seed: int = 0,
    u0=None,
) -> dict:
    """u^{eps,delta}(t, x) = E_B[u0(B^x_t) exp(V^{eps,delta}_{t,x})] by inner
    Monte Carlo conditional on the fixed noise realization (log-domain
    average).  Returns {"u": grid, "log_u": grid, "ess": grid}."""
    from .fk_moments import log_weight_stats

    t_list = list(t_list)
    x_list = list(x_list)
    u = np.empty((len(t_list), len(x_list)))
    log_u = np.empty_like(u)
    ess = np.empty_like(u)
    for it, t in enumerate(t_list):
        if t == 0.0:
            for ix, x in enumerate(x_list):
                val = 1.0 if u0 is None else u0(np.array([x]))
                u[it, ix] = val
                log_u[it, ix] = math.log(val)
                ess[it, ix] = inner_samples
            continue
        rng = stream_for(seed, 7100, it)
        incr = rng.standard_normal((inner_samples, steps)) * math.sqrt(t / steps)
        paths = np.concatenate(
            [np.zeros((inner_samples, 1)), np.cumsum(incr, axis=1)], axis=1
        )
        for ix, x in enumerate(x_list):
            V = regularized_V(field, paths, t, x)
            if u0 is None:
                lw = V
            else:
                endpoints = paths[:, -1] + x
                lw = V + np.log([u0(np.array([e])) for e in endpoints])
            lm, se, e = log_weight_stats(lw)
            log_u[it, ix] = lm
            u[it, ix] = math.exp(lm)
            ess[it, ix] = e
    return {"u": u, "log_u": log_u, "ess": ess}


# ---------------------------------------------------------------------------
# Littlewood-Paley decomposition
# ---------------------------------------------------------------------------


def _smoothstep(y: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for y <= 0, 1 for y >= 1."""

    def f(z):
        out = np.zeros_like(z)
        pos = z > 0
        out[pos] = np.exp(-1.0 / z[pos])
        return out

    fy = f(np.asarray(y, dtype=float))
    f1y = f(1.0 - np.asarray(y, dtype=float))
    return fy / (fy + f1y)


def chi_profile(r) -> np.ndarray:
    """Radial low-pass profile: 1 on [0, 3/4], 0 beyond 4/3, smooth between."""
    r = np.asarray(r, dtype=float)
    return 1.0 - _smoothstep((r - 0.75) / (4.0 / 3.0 - 0.75))


def phi_profile(r) -> np.ndarray:
    """Annulus profile phi(r) = chi(r/2) - chi(r), supported in [3/4, 8/3]."""
    r = np.asarray(r, dtype=float)
    return chi_profile(r / 2.0) - chi_profile(r)


def littlewood_paley_blocks(field_slice: np.ndarray, L: float) -> dict:
    """Dyadic frequency blocks of a periodic field slice.

    Returns {"levels": [-1, 0, .., J], "blocks": [Delta_{-1}, ...]} with
    sum(blocks) == field_slice to machine precision: the telescoping
    chi(xi) + sum_{j<=J} phi(2^{-j} xi) = chi(2^{-(J+1)} xi) equals one on
    every grid frequency once 2^{-(J+1)} |xi|_max <= 3/4.
    """
    f = np.asarray(field_slice, dtype=float)
    d = f.ndim
    n = f.shape[0]
    if any(s != n for s in f.shape):
        raise KernelError("field slice must be a (hyper)cube")
    if not _is_pow2(n):
        raise KernelError("slice length must be a power of two")
    freqs = np.fft.fftfreq(n, d=L / (2.0 * math.pi * n))
    if d == 1:
        r = np.abs(freqs)
    else:
        grids = np.meshgrid(*([freqs] * d), indexing="ij")
        r = np.sqrt(sum(g**2 for g in grids))
    r_max = float(r.max())
    J = 0
    while 2.0 ** (-(J + 1)) * r_max > 0.75:
        J += 1
    fhat = np.fft.fftn(f)
    blocks = [np.real(np.fft.ifftn(chi_profile(r) * fhat))]
    levels = [-1]
    for j in range(J + 1):
        blocks.append(np.real(np.fft.ifftn(phi_profile(r / 2.0**j) * fhat)))
        levels.append(j)
    return {"levels": levels, "blocks": blocks, "r_max": r_max}


def poly_weight(x: np.ndarray, kappa: float) -> np.ndarray:
    """rho_kappa(x) = (1 + |x|^2)^{-kappa/2} (smoothed-at-0 polynomial)."""
    return (1.0 + x * x) ** (-kappa / 2.0)


def exp_weight(x: np.ndarray, lam: float) -> np.ndarray:
    """e_lambda(x) = exp(-lambda sqrt(1 + |x|^2)) (smoothed-at-0 exponential)."""
    return np.exp(-lam * np.sqrt(1.0 + x * x))


def besov_norm(blocks: dict, kappa: float, weight: np.ndarray | float = 1.0) -> float:
    """sup_j 2^{j kappa} || w Delta_j f ||_inf."""
    best = 0.0
    for j, blk in zip(blocks["levels"], blocks["blocks"]):
        best = max(best, 2.0 ** (j * kappa) * float(np.max(np.abs(weight * blk))))
    return best


@dataclass(frozen=True)
class BesovSpectrum:
    levels: list[int]
    norms: list[float]          # || w Delta_j f ||_inf per level
    resolved: list[bool]        # level annulus below the mollifier cutoff
    kappa_hat: float | None


def block_spectrum(blocks: dict, weight, mollifier_cutoff: float | None) -> BesovSpectrum:
    levels = blocks["levels"]
    norms = [float(np.max(np.abs(weight * blk))) for blk in blocks["blocks"]]
    resolved = []
    for j in levels:
        top = (8.0 / 3.0) * 2.0**max(j, 0)
        resolved.append(mollifier_cutoff is None or top <= mollifier_cutoff)
    return BesovSpectrum(levels=levels, norms=norms, resolved=resolved, kappa_hat=None)


def fit_block_slope(spectra: list[BesovSpectrum], min_level: int = 0) -> float:
    """Fitted slope of mean log2 block norms against level j over resolved
    levels (the Besov roughness index kappa of B^{-kappa})."""
    levels = spectra[0].levels
    acc = np.zeros(len(levels))
    for sp in spectra:
        acc += np.log2(np.maximum(sp.norms, 1e-300))
    acc /= len(spectra)
    xs, ys = [], []
    for i, j in enumerate(levels):
        if j >= min_level and all(sp.resolved[i] for sp in spectra):
            xs.append(j)
            ys.append(acc[i])
    if len(xs) < 4:
        raise InsufficientLevels(f"only {len(xs)} resolved dyadic levels")
    slope = np.polyfit(xs, ys, 1)[0]
    return float(slope)


def estimate_regularity(
    gamma: TimeKernelSpec,
    lam: SpaceKernelSpec,
    L: float = 16.0,
    nx: int = 512,
    T_box: float = 1.0,
    nt: int = 64,
    epsilon: float | None = None,
    delta: float | None = None,
    ensemble: int = 24,
    seed: int = 0,
    weight_kappa: float = 2.0,
) -> dict:
    """Empirical (theta_hat, kappa_hat) for the synthesized noise.

    kappa_hat: slope of log2 ||w Delta_j dW_{st}||_inf against j over
    resolved levels (so dW_st lives in B^{-kappa_hat}).
    theta_hat: slope of log ||dW_{st}||_{-kappa,w} against log (t - s) over
    dyadic time increments.
    """
    dx = L / nx
    dt = T_box / nt
    epsilon = 2.0 * dx if epsilon is None else epsilon
    delta = dt if delta is None else delta
    x_grid = (np.arange(nx) - nx // 2) * dx
    w = poly_weight(x_grid, weight_kappa)
    cutoff = 1.0 / epsilon

    spectra = []
    incr_norms = {p: [] for p in range(1, 5)}
    for e in range(ensemble):
        field = synthesize_noise(
            gamma, lam, L, nx, epsilon, T_box, nt, delta,
            seed=seed + 1000 * e, store_spectrum=False,
        )
        base = nt // 2
        dW = field.values[base + 1] - field.values[base]
        blocks = littlewood_paley_blocks(dW, L)
        spectra.append(block_spectrum(blocks, w, cutoff))
        for p in incr_norms:
            lag = 2**p
            dWp = field.values[base + lag] - field.values[base]
            bl = littlewood_paley_blocks(dWp, L)
            sp = block_spectrum(bl, w, cutoff)
            incr_norms[p].append(sp)
    kappa_hat = fit_block_slope(spectra)

    # Besov -kappa norm of increments over dyadic time lags
    xs, ys = [], []
    for p, sps in incr_norms.items():
        vals = []
        for sp in sps:
            norm = max(
                2.0 ** (-j * kappa_hat) * n
                for j, n, res in zip(sp.levels, sp.norms, sp.resolved)
                if res
            )
            vals.append(norm)
        xs.append(math.log(2.0**p * dt))
        ys.append(math.log(np.mean(vals)))
    theta_hat = float(np.polyfit(xs, ys, 1)[0])
    return {
        "kappa_hat": float(kappa_hat),
        "theta_hat": theta_hat,
        "levels": spectra[0].levels,
        "resolved": spectra[0].resolved,
    }


# ---------------------------------------------------------------------------
# binary field IO
# ---------------------------------------------------------------------------

_MAGIC = b"SHLB"


def write_field_bin(path: str, field: NoiseField):
    """Header: magic, version, ndim, shape, dx, dt, seed; then row-major
    float64 values."""
    vals = np.ascontiguousarray(field.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", 1, vals.ndim))
        fh.write(struct.pack(f"<{vals.ndim}q", *vals.shape))
        dt = field.dt if field.time_dependent else 0.0
        fh.write(struct.pack("<ddQ", field.dx, dt, field.seed))
        fh.write(vals.tobytes())


def read_field_bin(path: str) -> dict:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise KernelError("not a shelab field file")
        version, ndim = struct.unpack("<II", fh.read(8))
        shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
        dx, dt, seed = struct.unpack("<ddQ", fh.read(24))
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(shape)
    return {"version": version, "shape": shape, "dx": dx, "dt": dt,
            "seed": seed, "values": data}


def write_besov_csv(path: str, spectrum: BesovSpectrum):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["j", "norm", "resolved"])
        for j, n, r in zip(spectrum.levels, spectrum.norms, spectrum.resolved):
            writer.writerow([j, repr(n), int(r)])
