"""Analysis harnesses: consolidation oracle, conditioning, stability probes.

Everything here sits beside the solver: closed-form consolidation series and
time scales, condition-number estimation of the diagonal Jacobian blocks, the
translating-domain conditioning sweep, the numerical inf-sup (eigenvalue)
test of the displacement/pressure pairing, and pressure-oscillation metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import assemble_jacobian, build_step_context
from .basis import BasisKind, sample_smpm
from .errors import SingularMatrix
from .ghost import GhostParams, assemble_ghost_matrix
from .material import MaterialParams, MaterialPoints
from .mesh import CartesianGrid


# --- consolidation closed forms -------------------------------------------

def terzaghi_pressure(Z: float, T: float, tol: float = 1e-12) -> float:
    """Normalized excess pressure of 1D consolidation at depth Z, time T.

    ``Z`` runs from 0 at the drained face to 1 at the impermeable base.  The
    series is truncated when the next term magnitude bound drops below
    ``tol``; at T = 0 (no decay) a fixed cap of 1e5 terms applies.
    """
    if T < 0.0:
        raise ValueError("nondimensional time must be >= 0")
    total = 0.0
    cap = 100_000 if T == 0.0 else 10_000_000
    m = 0
    while m < cap:
        M = 0.5 * np.pi * (2 * m + 1)
        bound = (2.0 / M) * np.exp(-(M ** 2) * T)
        if bound < tol and m > 0:
            break
        total += (2.0 / M) * np.sin(M * Z) * np.exp(-(M ** 2) * T)
        m += 1
    return total


def consolidation_coefficient(params: MaterialParams) -> float:
    """Diffusivity ``(K/n0 + 4G/3) kappa0 / (rho_f g)`` of the 1D problem."""
    stiffness = params.K / params.n0 + 4.0 * params.G / 3.0
    return stiffness * params.kappa0 / (params.rho_f0 * params.g)


def vermeer_critical_time(dh: float, c_v: float) -> float:
    """Smallest stable first step ``dh^2 / (6 c_v)`` for the implicit pair."""
    if dh <= 0.0 or c_v <= 0.0:
        raise ValueError("dh and c_v must be positive")
    return dh * dh / (6.0 * c_v)


# --- condition numbers ------------------------------------------------------

def condition_number(M) -> float:
    """2-norm condition estimate of a symmetric matrix.

    Largest and smallest-magnitude eigenvalues come from iterative
    (shift-invert for the smallest) eigensolves on the given matrix.
    """
    M = sp.csr_matrix(M)
    n = M.shape[0]
    if n == 0:
        raise ValueError("empty matrix")
    if n <= 4:
        w = np.abs(sla.eigvalsh(M.toarray()))
        if w.min() < 1e-300:
            raise SingularMatrix("smallest eigenvalue below floor")
        return float(w.max() / w.min())

    v0 = np.full(n, 1.0 / np.sqrt(n))
    try:
        lam_max = spla.eigsh(M, k=1, which="LM", v0=v0,
                             return_eigenvectors=False, maxiter=5000)
        lam_min = spla.eigsh(M, k=1, sigma=0.0, which="LM", v0=v0,
                             return_eigenvectors=False, maxiter=5000)
    except spla.ArpackNoConvergence as exc:
        # rare non-convergence on small clustered spectra: fall back to dense
        w = np.abs(sla.eigvalsh(M.toarray()))
        if w.min() < 1e-300:
            raise SingularMatrix("smallest eigenvalue below floor") from exc
        return float(w.max() / w.min())
    except RuntimeError as exc:
        if "singular" in str(exc).lower():
            raise SingularMatrix(str(exc)) from exc
        w = np.abs(sla.eigvalsh(M.toarray()))
        if w.min() < 1e-300:
            raise SingularMatrix("smallest eigenvalue below floor") from exc
        return float(w.max() / w.min())
    lo = abs(float(lam_min[0]))
    hi = abs(float(lam_max[0]))
    if lo < 1e-300:
        raise SingularMatrix("smallest eigenvalue below floor")
    return hi / lo


@dataclass
class SweepRecord:
    kind: str
    gamma_label: str
    gamma_a: float
    gamma_c: float
    offset: float
    cond_a: float
    cond_c: float


def stiffness_scale(params: MaterialParams) -> float:
    """Young-modulus-like scale from the initial tangent bulk stiffness."""
    k_star = params.K / params.n0
    return 9.0 * k_star * params.G / (3.0 * k_star + params.G)


def _mps_touch_fine_facets(cloud: MaterialPoints, fine: CartesianGrid) -> bool:
    for axis in range(2):
        rel = (cloud.position[:, axis] - fine.origin[axis]) / fine.spacing[axis]
        if np.any(np.abs(rel - np.round(rel)) < 1e-9):
            return True
    return False


def ellipse_sweep(cfg, kinds=(BasisKind.SMPM, BasisKind.GIMPM),
                  samples: int | None = None) -> list[SweepRecord]:
    """Conditioning of the A and C blocks over a translating particle domain.

    For each horizontal offset the half-ellipse cloud is reseeded, the blocks
    assembled at the reference state with and without the facet penalty, and
    their condition numbers (active free dofs only) recorded.  Offsets placing
    particles exactly on fine-grid facets are skipped for the hat basis.
    """
    from .config import build_scenario  # deferred: config imports solver

    n_samples = samples or int(cfg.conditioning.get("samples", 64))
    ga_factors = cfg.conditioning.get("gamma_a_factors", [0.0, 1e-4, 1e-2, 1.0])
    gc_factors = cfg.conditioning.get("gamma_c_factors", [0.0, 1e-4, 1e-2, 1.0])
    e_scale = stiffness_scale(cfg.material)
    kg_scale = cfg.material.kappa0 / cfg.material.g
    fine = cfg.grid.subdivide()
    period = fine.spacing[0]

    records: list[SweepRecord] = []
    for k in range(n_samples):
        offset = period * k / n_samples
        scen = build_scenario(cfg, ellipse_offset=offset)
        for kind in kinds:
            if kind == BasisKind.SMPM and _mps_touch_fine_facets(scen.cloud, fine):
                continue
            base = build_step_context(
                scen.coarse_grid, scen.cloud, scen.material, kind,
                GhostParams(), scen.dirichlet, [], dt=1.0, mass_row_scale=1.0)
            unit = build_step_context(
                scen.coarse_grid, scen.cloud, scen.material, kind,
                GhostParams(gamma_a=1.0, gamma_c=1.0), scen.dirichlet, [],
                dt=1.0, mass_row_scale=1.0)
            du = np.zeros(base.layout.n_u)
            p = np.zeros(base.layout.n_p)
            jac = assemble_jacobian(base, du, p)
            free_u = ~base.layout.u_fixed
            free_p = ~base.layout.p_fixed
            for fa, fc in zip(ga_factors, gc_factors):
                A = jac.A + (e_scale * fa) * unit.ghost_u
                C = jac.C + (kg_scale * fc) * unit.ghost_p
                records.append(SweepRecord(
                    kind=kind.value,
                    gamma_label=f"{fa:g}",
                    gamma_a=e_scale * fa,
                    gamma_c=kg_scale * fc,
                    offset=offset,
                    cond_a=condition_number(A[free_u][:, free_u]),
                    cond_c=condition_number(C[free_p][:, free_p]),
                ))
    return records


# --- numerical inf-sup test -------------------------------------------------

def _gauss_cloud(fine: CartesianGrid) -> MaterialPoints:
    """2x2 Gauss-point particles per fine element: exact bilinear quadrature."""
    hx, hy = fine.spacing
    off = 0.5 / np.sqrt(3.0)
    offs = np.array([0.5 - off, 0.5 + off])
    xs = []
    for j in range(fine.counts[1]):
        for i in range(fine.counts[0]):
            for oy in offs:
                for ox in offs:
                    xs.append((fine.origin[0] + (i + ox) * hx,
                               fine.origin[1] + (j + oy) * hy))
    return MaterialPoints.from_positions(
        np.array(xs), hx * hy / 4.0, (hx / 4.0, hy / 4.0))


def _divergence_pairing(u_grid: CartesianGrid, p_grid: CartesianGrid):
    """B, S, Mp matrices of the pairing test at the exactly-integrated limit.

    B couples pressure with the divergence of displacement, S is the vector
    gradient (H1 seminorm) matrix with zero-boundary displacement, Mp the
    pressure L2 mass matrix.
    """
    cloud = _gauss_cloud(u_grid)
    w = cloud.volume0
    smp_u = sample_smpm(u_grid, cloud.position)
    smp_p = sample_smpm(p_grid, cloud.position)

    n_un = u_grid.node_count
    n_pn = p_grid.node_count

    # S: block-diagonal over components, grad-grad
    gg = np.einsum("n,naj,nbj->nab", w, smp_u.gradients, smp_u.gradients)
    ra = np.broadcast_to(smp_u.node_linear[:, :, None], gg.shape)
    ca = np.broadcast_to(smp_u.node_linear[:, None, :], gg.shape)
    S_scalar = sp.coo_matrix(
        (gg.ravel(), (ra.ravel(), ca.ravel())), shape=(n_un, n_un)).tocsr()

    # B[alpha, (a, i)] = sum w M_alpha dN_a/dx_i
    bv = np.einsum("n,na,nbj->nabj", w, smp_p.values, smp_u.gradients)
    rb = np.broadcast_to(smp_p.node_linear[:, :, None, None], bv.shape)
    cb = np.broadcast_to(
        (smp_u.node_linear[:, None, :, None] * 2 + np.arange(2)[None, None, None, :]),
        bv.shape)
    B = sp.coo_matrix(
        (bv.ravel(), (rb.ravel(), cb.ravel())), shape=(n_pn, 2 * n_un)).tocsr()

    mm = np.einsum("n,na,nb->nab", w, smp_p.values, smp_p.values)
    rm = np.broadcast_to(smp_p.node_linear[:, :, None], mm.shape)
    cm = np.broadcast_to(smp_p.node_linear[:, None, :], mm.shape)
    Mp = sp.coo_matrix(
        (mm.ravel(), (rm.ravel(), cm.ravel())), shape=(n_pn, n_pn)).tocsr()

    S = sp.kron(S_scalar, sp.eye(2)).tocsr()

    # zero-displacement boundary
    pos = u_grid.node_positions()
    lo = np.asarray(u_grid.origin)
    hi = np.asarray(u_grid.upper)
    tol = 1e-9 * max(u_grid.spacing)
    on_boundary = np.any((np.abs(pos - lo) < tol) | (np.abs(pos - hi) < tol), axis=1)
    free = np.repeat(~on_boundary, 2)
    return B[:, free], S[free][:, free], Mp


def infsup_eigenvalue(u_grid: CartesianGrid, p_grid: CartesianGrid) -> float:
    """Smallest nonzero eigenvalue of the pairing eigenproblem."""
    B, S, Mp = _divergence_pairing(u_grid, p_grid)
    lu = spla.splu(S.tocsc())
    X = lu.solve(B.toarray().T)            # S^-1 B^T
    G = B @ X                              # pressure-space Schur complement
    w = sla.eigh(G, Mp.toarray(), eigvals_only=True)
    w = np.sort(np.abs(w))
    cutoff = max(w[-1], 1.0) * 1e-10
    nonzero = w[w > cutoff]
    if len(nonzero) == 0:
        raise SingularMatrix("pairing operator has no nonzero eigenvalues")
    return float(nonzero[0])


def infsup_test(refinements, mode: str = "overlapping") -> list[float]:
    """Minimum pairing eigenvalues over uniformly refined unit squares.

    ``overlapping`` puts displacement on the half-spacing subdivision of the
    pressure grid; ``equal`` uses one grid for both fields (the classical
    unstable control).
    """
    out = []
    for n in refinements:
        p_grid = CartesianGrid(origin=(0.0, 0.0), spacing=(1.0 / n, 1.0 / n),
                               counts=(n, n))
        u_grid = p_grid.subdivide() if mode == "overlapping" else p_grid
        out.append(infsup_eigenvalue(u_grid, p_grid))
    return out


# --- pressure oscillation metrics -------------------------------------------

def pressure_jump_seminorm(p_nodal: np.ndarray, grid: CartesianGrid,
                           active=None) -> float:
    """Facet-jump energy of the nodal pressure, normalized by its L2 norm.

    Sums ``h * integral([[dp/dn]]^2)`` over every facet shared by two active
    elements; smooth (facet-wise C1) fields score ~0, checkerboard modes
    score large.
    """
    if active is None:
        active = set(grid.all_elements())
    facets = []
    for elem in active:
        i, j = elem
        if (i + 1, j) in active:
            facets.append((i, j, 0))
        if (i, j + 1) in active:
            facets.append((i, j, 1))
    jump_mat = assemble_ghost_matrix(grid, facets)
    energy = float(p_nodal @ (jump_mat @ p_nodal))

    cloud = _gauss_cloud_on_elements(grid, active)
    smp = sample_smpm(grid, cloud.position)
    vals = np.einsum("nk,nk->n", smp.values, p_nodal[smp.node_linear])
    l2 = float(np.sum(cloud.volume0 * vals ** 2))
    if l2 <= 0.0:
        return 0.0
    return energy / l2


def _gauss_cloud_on_elements(grid: CartesianGrid, active) -> MaterialPoints:
    hx, hy = grid.spacing
    off = 0.5 / np.sqrt(3.0)
    offs = np.array([0.5 - off, 0.5 + off])
    xs = []
    for (i, j) in active:
        for oy in offs:
            for ox in offs:
                xs.append((grid.origin[0] + (i + ox) * hx,
                           grid.origin[1] + (j + oy) * hy))
    return MaterialPoints.from_positions(
        np.array(xs), hx * hy / 4.0, (hx / 4.0, hy / 4.0))


def has_checkerboard(p_nodal: np.ndarray, grid: CartesianGrid,
                     node_mask: np.ndarray | None = None,
                     amplitude_floor: float = 0.01,
                     fraction: float = 0.05) -> bool:
    """Detect a nodal sign-alternation pattern in the pressure field.

    A node counts as oscillatory when its value is sizable and every available
    axis neighbor has the opposite sign; the detector fires when more than
    ``fraction`` of the considered nodes oscillate.
    """
    nx, ny = grid.node_counts
    field = p_nodal.reshape(ny, nx)
    if node_mask is None:
        mask = np.ones_like(field, dtype=bool)
    else:
        mask = node_mask.reshape(ny, nx)
    scale = np.max(np.abs(field[mask])) if np.any(mask) else 0.0
    if scale == 0.0:
        return False
    flagged = 0
    considered = 0
    for j in range(ny):
        for i in range(nx):
            if not mask[j, i] or abs(field[j, i]) < amplitude_floor * scale:
                continue
            neighbors = []
            for dj, di in ((0, 1), (0, -1), (1, 0), (-1, 0)):
                jj, ii = j + dj, i + di
                if 0 <= jj < ny and 0 <= ii < nx and mask[jj, ii]:
                    neighbors.append(field[jj, ii])
            if len(neighbors) < 2:
                continue
            considered += 1
            if all(v * field[j, i] < 0.0 for v in neighbors):
                flagged += 1
    if considered == 0:
        return False
    return flagged / considered > fraction


# --- isochrone extraction ---------------------------------------------------

@dataclass
class IsochroneRecord:
    T: float
    Z: float
    p_numeric: float
    p_analytic: float


def column_isochrones(result, params: MaterialParams, height: float,
                      overburden: float, times_nondim, probe_x: float = 0.0,
                      series_tol: float = 1e-12) -> list[IsochroneRecord]:
    """Nodal pressure profiles at the steps closest to the requested times.

    ``Z`` is measured from the drained top face downward; the analytic value
    is the consolidation series scaled by the overburden.
    """
    c_v = consolidation_coefficient(params)
    t_nd = c_v * result.times() / height ** 2
    grid = result.coarse_grid
    records: list[IsochroneRecord] = []
    for target in times_nondim:
        k = int(np.argmin(np.abs(t_nd - target)))
        rec = result.records[k]
        pos = grid.node_positions()[rec.pressure_nodes]
        on_probe = np.abs(pos[:, 0] - probe_x) < 1e-9 * max(grid.spacing)
        ys = pos[on_probe][:, 1]
        ps = rec.pressure[on_probe]
        order = np.argsort(ys)
        for y, p in zip(ys[order], ps[order]):
            Z = (height - y) / height
            records.append(IsochroneRecord(
                T=float(t_nd[k]),
                Z=float(Z),
                p_numeric=float(p),
                p_analytic=overburden * terzaghi_pressure(Z, float(t_nd[k]),
                                                          tol=series_tol),
            ))
    return records


def peak_relative_overshoot(records: list[IsochroneRecord]) -> float:
    """Spurious-peak height of the numeric profile above the analytic plateau.

    At early times the exact isochrone rises from zero to the undrained
    plateau inside the first cell, which no nodal profile can follow; the
    instability signature is the numeric peak exceeding the plateau itself.
    """
    plateau = max(r.p_analytic for r in records)
    peak = max(r.p_numeric for r in records)
    return (peak - plateau) / abs(plateau)
