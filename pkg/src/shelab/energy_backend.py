"""Backend selection for the interaction-energy quadrature.

The compiled Cython kernel is used when available; otherwise the NumPy
fallback (identical semantics, same node layout from shelab._energy_plan).
Space kernel families without a packed form (bessel) and the
"offset_diagonal" comparison mode always route through the fallback.  Set
SHELAB_FORCE_FALLBACK=1 to pin the NumPy path, e.g. for benchmarking.
"""

from __future__ import annotations

import os

import numpy as np

from . import _energy_fallback, _energy_plan
from . import kernels as _k
from ._energy_fallback import PackedKernel

_compiled = None
if not os.environ.get("SHELAB_FORCE_FALLBACK"):
    try:
        from . import _energy as _compiled  # type: ignore
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"


def have_compiled() -> bool:
    return _compiled is not None


def pair_energy_batch(paths_a, paths_b, h, gamma_code, gamma_amp, gamma_beta,
                      lam, self_pair, mode="midpoint_tensor", refinement=3,
                      base_sub=1, geo_levels=12):
    """Dispatch a batch energy computation to the active backend.

    ``lam`` may be a SpaceKernelSpec or an already-wrapped PackedKernel.
    """
    if not isinstance(lam, PackedKernel):
        lam = PackedKernel(lam)
    # cross pairs have no kernel singularity at u = 0 (the gamma singularity
    # is integrated exactly by the plan masses), so shallow layers suffice
    if not self_pair:
        geo_levels = min(geo_levels, 4)
    if (
        _compiled is None
        or lam.spec.family not in _k.LAMBDA_CODE
        or mode != "midpoint_tensor"
    ):
        return _energy_fallback.pair_energy_batch(
            paths_a, paths_b, h, gamma_code, gamma_amp, gamma_beta, lam,
            self_pair, mode=mode, refinement=refinement, base_sub=base_sub,
            geo_levels=geo_levels,
        )
    S = paths_a.shape[1] - 1
    plan = _energy_plan.build_plan(S, float(h), int(gamma_code),
                                   float(gamma_amp), float(gamma_beta),
                                   int(refinement), int(geo_levels))
    code, params, tx, ty = _k.pack_space_kernel(lam.spec)
    if self_pair:
        corner_tail = plan.corner_tail_self(lam.eta_eff, lam.tail_coef)
        diag_tail = plan.diag_tail_self(lam.eta_eff, lam.tail_coef)
    else:
        corner_tail = 0.0
        diag_tail = 0.0
    pa = np.ascontiguousarray(paths_a, dtype=np.float64)
    pb = pa if paths_b is paths_a else np.ascontiguousarray(paths_b, dtype=np.float64)
    return _compiled.pair_energy_batch(
        pa, pb, float(h), int(code),
        np.ascontiguousarray(params, dtype=np.float64),
        np.ascontiguousarray(tx, dtype=np.float64),
        np.ascontiguousarray(ty, dtype=np.float64),
        np.ascontiguousarray(plan.far_shift, dtype=np.float64),
        np.ascontiguousarray(plan.far_w, dtype=np.float64),
        np.ascontiguousarray(plan.adj_u, dtype=np.float64),
        np.ascontiguousarray(plan.adj_w, dtype=np.float64),
        np.ascontiguousarray(plan.diag_u, dtype=np.float64),
        np.ascontiguousarray(plan.diag_w, dtype=np.float64),
        int(plan.n_tr), int(base_sub), bool(self_pair),
        float(corner_tail), float(plan.adj_tail_mass_u),
        float(plan.adj_u_min / 3.0), float(diag_tail),
        float(plan.diag_gamma_mass_corner), float(plan.diag_u_min),
    )
