"""Grid-to-point updates closing one implicit step.

Only a grid-to-point pass exists: the displacement increment is the solver's
unknown, so nothing needs to be gathered onto the grid beforehand, and the
pressure is rewritten at the particles because it carries no stored energy.
Kinematic quantities use the start-of-step samples (the increment is exact for
them), while the pressure is re-sampled at the updated particle positions.
"""

from __future__ import annotations

import numpy as np

from .basis import BasisKind, BatchedSamples, sample_points
from .errors import PorosityViolation
from .material import (
    ElasticNoYield,
    MaterialPoints,
    MaterialParams,
    eig2_sym,
    _volumetric_stress_terms,
)
from .mesh import CartesianGrid

I2 = np.eye(2)


def g2p_update(cloud: MaterialPoints, fine_grid: CartesianGrid,
               coarse_grid: CartesianGrid, kind: BasisKind,
               delta_u_nodal: np.ndarray, p_nodal: np.ndarray,
               params: MaterialParams, model=None,
               fine_samples: BatchedSamples | None = None,
               coarse_samples: BatchedSamples | None = None) -> MaterialPoints:
    """Advance the cloud with converged nodal fields (full-grid arrays).

    ``delta_u_nodal`` is (fine node count, 2); ``p_nodal`` is (coarse node
    count,).  Inactive nodes must carry zeros.  Pre-evaluated samples may be
    supplied to freeze the evaluation points (used by idempotence checks);
    otherwise kinematics sample at the start positions and pressure at the
    end positions.
    """
    model = model if model is not None else ElasticNoYield()
    lps = cloud.lp if kind == BasisKind.GIMPM else None
    smp = fine_samples if fine_samples is not None else sample_points(
        fine_grid, kind, cloud.position, lps)

    du_loc = delta_u_nodal[smp.node_linear]             # (N, K, 2)
    disp_inc = np.einsum("nk,nki->ni", smp.values, du_loc)
    grad_incr = np.einsum("nki,nkj->nij", du_loc, smp.gradients)
    dF = I2 + grad_incr

    cloud.displacement += disp_inc
    cloud.position = cloud.position + disp_inc
    cloud.F = dF @ cloud.F
    J = cloud.F[:, 0, 0] * cloud.F[:, 1, 1] - cloud.F[:, 0, 1] * cloud.F[:, 1, 0]
    if np.any(J <= 1.0 - params.n0):
        raise PorosityViolation("converged update closed the pore space")
    cloud.J = J
    cloud.volume = J * cloud.volume0

    # elastic trial then constitutive correction; the default keeps the trial
    b_trial = np.einsum("nij,njk,nlk->nil", dF, cloud.b_e, dF)
    lam1, lam2, E1, E2 = eig2_sym(b_trial)
    eps_trial = (0.5 * np.log(lam1))[:, None, None] * E1 \
        + (0.5 * np.log(lam2))[:, None, None] * E2
    eps_e, internal = model.correct(eps_trial, cloud.internal_vars)
    cloud.internal_vars = internal
    w, v = np.linalg.eigh(eps_e)
    cloud.b_e = np.einsum("nik,nk,njk->nij", v, np.exp(2.0 * w), v)

    eps_v = np.trace(eps_e, axis1=-2, axis2=-1)
    _, tau_v, _ = _volumetric_stress_terms(eps_v, params)
    dev = eps_e - (eps_v / 3.0)[:, None, None] * I2
    tau = tau_v[:, None, None] * I2 + 2.0 * params.G * dev
    cloud.effective_stress = tau / J[:, None, None]

    smp_p = coarse_samples if coarse_samples is not None else sample_points(
        coarse_grid, kind, cloud.position, lps)
    cloud.pressure = np.einsum("nk,nk->n", smp_p.values, p_nodal[smp_p.node_linear])
    return cloud


def update_domain_lengths(cloud: MaterialPoints,
                          lp_max: float | None = None) -> MaterialPoints:
    """Per-axis stretch of the particle boxes from the right stretch tensor.

    ``lp_i = lp0_i * U_ii`` with ``U = sqrt(F^T F)``: axis-aligned boxes follow
    the material stretch and ignore rigid rotation.  ``lp_max`` caps the
    half-lengths at the basis-validity bound (half the evaluation grid's
    spacing); the particle volume is tracked by J independently, so the cap
    only limits the support size under extreme stretch.
    """
    C = np.einsum("nki,nkj->nij", cloud.F, cloud.F)
    lam1, lam2, E1, E2 = eig2_sym(C)
    U = np.sqrt(lam1)[:, None, None] * E1 + np.sqrt(lam2)[:, None, None] * E2
    stretch = np.stack([U[:, 0, 0], U[:, 1, 1]], axis=1)
    cloud.lp = cloud.lp0 * stretch
    if lp_max is not None:
        np.minimum(cloud.lp, lp_max, out=cloud.lp)
    return cloud
