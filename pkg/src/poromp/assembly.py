"""Residual and block-Jacobian assembly for the coupled step problem.

Unknowns of one implicit step are the displacement increment on the fine grid
and the pressure on the coarse grid.  Particles act as the quadrature points of
all volume integrals; their basis values and gradients are frozen at the
start-of-step positions and the current-configuration gradients are obtained by
pulling back through the incremental deformation gradient.  This makes the
internal force ``sum vol0 * grad_x(N) . tau`` exact in the updated volume and
produces the geometric stiffness on linearization.

Sign and scaling conventions:
  * ``assemble_residual`` returns the equilibrium rows in force units and the
    mass-conservation rows in mass-rate units, exactly as the weak statement
    reads.
  * ``assemble_jacobian`` scales the mass rows by ``mass_row_scale`` (the
    solver uses ``-dt/rho_f0``) so that the coupling blocks satisfy
    ``B1^T = B2`` in the small-strain limit and the saddle structure is the
    canonical symmetric one.  Row scaling does not move the root of the
    nonlinear system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .basis import BasisKind, BatchedSamples, sample_points, sample_smpm
from .errors import ConfigError, PorosityViolation
from .ghost import (
    GhostParams,
    assemble_ghost_matrix,
    select_boundary_elements,
    select_ghost_facets,
)
from .material import (
    ElasticNoYield,
    MaterialParams,
    MaterialPoints,
    eig2_sym,
    kozeny_carman,
    kozeny_carman_derivative,
    mixture_density,
    _volumetric_stress_terms,
)
from .mesh import CartesianGrid, active_nodes, compute_active_sets

I2 = np.eye(2)


@dataclass(frozen=True)
class DirichletLine:
    """Conforming constraint on a grid line ``coord[axis] == where``."""

    field: str           # 'u' or 'p'
    axis: int            # 0 fixes an x = const line, 1 a y = const line
    where: float
    component: str = "both"  # 'x', 'y' or 'both'; ignored for pressure
    value: float = 0.0


@dataclass(frozen=True)
class SurfaceSpec:
    """Load/drainage surface carried by particle domain edges.

    ``side`` names the box edge of the carrier particles that lies on the
    surface.  ``span`` optionally clips the surface along its tangent to a
    fixed spatial window (e.g. a footing footprint).
    """

    side: str                      # 'top', 'bottom', 'left', 'right'
    kind: str                      # 'traction', 'pressure', 'flux'
    vector: tuple[float, float] | None = None  # traction, Pa
    pbar: float = 0.0              # prescribed pressure, Pa
    qbar: float = 0.0              # prescribed normal mass flux
    gamma_pen: float = 0.0         # pressure penalty scale
    span: tuple[float, float] | None = None
    ramp_until: float | None = None
    carriers: np.ndarray | None = None  # bool mask over the cloud


@dataclass
class DofLayout:
    """Dense, contiguous numbering of the active displacement/pressure dofs."""

    fine_nodes: np.ndarray       # linear fine-grid node ids, sorted
    coarse_nodes: np.ndarray
    u_map: np.ndarray            # fine node id -> local node index or -1
    p_map: np.ndarray
    u_fixed: np.ndarray          # (2 * n_fine_nodes,) bool
    u_values: np.ndarray
    p_fixed: np.ndarray
    p_values: np.ndarray

    @property
    def n_u(self) -> int:
        return 2 * len(self.fine_nodes)

    @property
    def n_p(self) -> int:
        return len(self.coarse_nodes)

    @property
    def n_dof(self) -> int:
        return self.n_u + self.n_p


def build_dof_layout(fine_grid: CartesianGrid, coarse_grid: CartesianGrid,
                     fine_active_nodes: np.ndarray,
                     coarse_active_nodes: np.ndarray,
                     dirichlet: list[DirichletLine]) -> DofLayout:
    u_map = np.full(fine_grid.node_count, -1, dtype=np.int64)
    u_map[fine_active_nodes] = np.arange(len(fine_active_nodes))
    p_map = np.full(coarse_grid.node_count, -1, dtype=np.int64)
    p_map[coarse_active_nodes] = np.arange(len(coarse_active_nodes))

    u_fixed = np.zeros(2 * len(fine_active_nodes), dtype=bool)
    u_values = np.zeros(2 * len(fine_active_nodes))
    p_fixed = np.zeros(len(coarse_active_nodes), dtype=bool)
    p_values = np.zeros(len(coarse_active_nodes))

    fine_pos = fine_grid.node_positions()[fine_active_nodes]
    coarse_pos = coarse_grid.node_positions()[coarse_active_nodes]
    for bc in dirichlet:
        if bc.field == "u":
            tol = 1e-9 * max(fine_grid.spacing)
            on_line = np.abs(fine_pos[:, bc.axis] - bc.where) < tol
            comps = {"x": [0], "y": [1], "both": [0, 1]}[bc.component]
            for c in comps:
                dofs = 2 * np.flatnonzero(on_line) + c
                u_fixed[dofs] = True
                u_values[dofs] = bc.value
        else:
            tol = 1e-9 * max(coarse_grid.spacing)
            on_line = np.abs(coarse_pos[:, bc.axis] - bc.where) < tol
            idx = np.flatnonzero(on_line)
            p_fixed[idx] = True
            p_values[idx] = bc.value
    return DofLayout(
        fine_nodes=fine_active_nodes,
        coarse_nodes=coarse_active_nodes,
        u_map=u_map,
        p_map=p_map,
        u_fixed=u_fixed,
        u_values=u_values,
        p_fixed=p_fixed,
        p_values=p_values,
    )


@dataclass
class JacobianBlocks:
    """2x2 block tangent; C is symmetric, A/B blocks include ghost terms."""

    A: sp.csr_matrix
    B1: sp.csr_matrix
    B2: sp.csr_matrix
    C: sp.csr_matrix

    def full(self) -> sp.csr_matrix:
        return sp.bmat([[self.A, self.B1], [self.B2, self.C]], format="csr")


@dataclass
class ResidualVector:
    """Equilibrium rows (force units) and mass rows (mass-rate units)."""

    r_u: np.ndarray
    r_p: np.ndarray

    def concatenated(self) -> np.ndarray:
        return np.concatenate([self.r_u, self.r_p])


def _localize(samples: BatchedSamples, node_map: np.ndarray, what: str):
    loc = node_map[samples.node_linear]
    bad = loc < 0
    if np.any(bad):
        if np.any(np.abs(samples.values[bad]) > 1e-12):
            raise AssertionError(
                f"{what}: nonzero basis value at a node outside the active set"
            )
        loc = loc.copy()
        loc[bad] = 0
    return loc


def _localize_surface(samples: BatchedSamples, node_map: np.ndarray, what: str):
    """Localize surface quadrature, tolerating points that poke out.

    A particle box edge can reach into a grid cell the material has vacated
    (e.g. a settling top surface); the weight attached to those inactive
    nodes is redistributed to the active ones by partition-of-unity
    renormalization, which preserves the integral totals exactly.
    """
    loc = node_map[samples.node_linear]
    bad = loc < 0
    values = samples.values
    if np.any(bad):
        values = np.where(bad, 0.0, values)
        kept = values.sum(axis=1)
        if np.any(kept < 0.2):
            raise ConfigError(
                f"{what}: quadrature point lies too far outside the active grid"
            )
        values = values / kept[:, None]
        loc = np.where(bad, 0, loc)
    return loc, values


@dataclass
class _Segments:
    """Per-step boundary quadrature, frozen on the start-of-step geometry."""

    f_ext: np.ndarray           # (n_u,) external nodal force
    flux_ext: np.ndarray        # (n_p,) prescribed-flux integral
    C_pen: sp.csr_matrix        # (n_p, n_p) pressure penalty matrix
    pen_rhs: np.ndarray         # (n_p,) penalty target term


_SIDE = {
    "top": (0, 1, +1.0),
    "bottom": (0, 1, -1.0),
    "right": (1, 0, +1.0),
    "left": (1, 0, -1.0),
}


def _surface_points(cloud: MaterialPoints, spec: SurfaceSpec, spacing):
    """Gauss points and weights on the carrier particles' box edges."""
    tang, norm, sign = _SIDE[spec.side]
    mask = spec.carriers
    if mask is None or not np.any(mask):
        raise ConfigError(f"surface '{spec.side}/{spec.kind}' has no carrier particles")
    centers = cloud.position[mask]
    lps = cloud.lp[mask]
    lo = centers[:, tang] - lps[:, tang]
    hi = centers[:, tang] + lps[:, tang]
    if spec.span is not None:
        lo = np.maximum(lo, spec.span[0])
        hi = np.minimum(hi, spec.span[1])
    keep = hi > lo + 1e-15
    if not np.any(keep):
        raise ConfigError(
            f"surface '{spec.side}/{spec.kind}' intersects no boundary segments"
        )
    lo, hi = lo[keep], hi[keep]
    edge = centers[keep, norm] + sign * lps[keep, norm]
    # nudge inward so sampling never lands in the empty half-space
    edge = edge - sign * 1e-9 * spacing[norm]

    gp = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    t = (mid[:, None] + half[:, None] * gp[None, :]).ravel()
    w = np.repeat(half, 2)  # each of the two Gauss weights is half the length
    pts = np.empty((t.size, 2))
    pts[:, tang] = t
    pts[:, norm] = np.repeat(edge, 2)
    return pts, w


def _build_segments(cloud: MaterialPoints, surfaces: list[SurfaceSpec],
                    fine_grid: CartesianGrid, coarse_grid: CartesianGrid,
                    layout: DofLayout, t_end: float) -> _Segments:
    f_ext = np.zeros(layout.n_u)
    flux_ext = np.zeros(layout.n_p)
    pen_rhs = np.zeros(layout.n_p)
    pen_rows, pen_cols, pen_vals = [], [], []

    for spec in surfaces:
        pts, w = _surface_points(cloud, spec, fine_grid.spacing)
        ramp = 1.0
        if spec.ramp_until is not None and spec.ramp_until > 0.0:
            ramp = min(t_end / spec.ramp_until, 1.0)
        if spec.kind == "traction":
            smp = sample_smpm(fine_grid, pts)
            loc, vals = _localize_surface(smp, layout.u_map, "traction surface")
            t_vec = ramp * np.asarray(spec.vector, dtype=float)
            contrib = (w[:, None] * vals)[:, :, None] * t_vec[None, None, :]
            dofs = loc[:, :, None] * 2 + np.arange(2)[None, None, :]
            np.add.at(f_ext, dofs.ravel(), contrib.ravel())
        elif spec.kind == "flux":
            smp = sample_smpm(coarse_grid, pts)
            loc, vals = _localize_surface(smp, layout.p_map, "flux surface")
            contrib = w[:, None] * vals * (ramp * spec.qbar)
            np.add.at(flux_ext, loc.ravel(), contrib.ravel())
        elif spec.kind == "pressure":
            smp = sample_smpm(coarse_grid, pts)
            loc, vals = _localize_surface(smp, layout.p_map, "pressure surface")
            gamma = spec.gamma_pen
            mm = gamma * w[:, None, None] * vals[:, :, None] * vals[:, None, :]
            pen_rows.append(np.broadcast_to(loc[:, :, None], mm.shape).ravel())
            pen_cols.append(np.broadcast_to(loc[:, None, :], mm.shape).ravel())
            pen_vals.append(mm.ravel())
            np.add.at(pen_rhs, loc.ravel(),
                      (gamma * spec.pbar * w[:, None] * vals).ravel())
        else:
            raise ConfigError(f"unknown surface kind '{spec.kind}'")

    if pen_rows:
        C_pen = sp.coo_matrix(
            (np.concatenate(pen_vals),
             (np.concatenate(pen_rows), np.concatenate(pen_cols))),
            shape=(layout.n_p, layout.n_p),
        ).tocsr()
    else:
        C_pen = sp.csr_matrix((layout.n_p, layout.n_p))
    return _Segments(f_ext=f_ext, flux_ext=flux_ext, C_pen=C_pen, pen_rhs=pen_rhs)


@dataclass
class StepContext:
    """Everything frozen for one implicit step."""

    fine_grid: CartesianGrid
    coarse_grid: CartesianGrid
    layout: DofLayout
    params: MaterialParams
    kind: BasisKind
    dt: float
    # particle samples, localized to layout indices
    u_loc: np.ndarray            # (N, Ku)
    N_u: np.ndarray              # (N, Ku)
    q0: np.ndarray               # (N, Ku, 2)
    p_loc: np.ndarray            # (N, Kp)
    N_p: np.ndarray              # (N, Kp)
    Q0: np.ndarray               # (N, Kp, 2)
    vol0: np.ndarray             # (N,)
    J_n: np.ndarray
    lnJ_n: np.ndarray
    b_en: np.ndarray             # (N, 2, 2)
    # ghost matrices scaled and expanded to dofs
    ghost_u: sp.csr_matrix       # (n_u, n_u)
    ghost_p: sp.csr_matrix       # (n_p, n_p)
    segments: _Segments
    # bookkeeping
    active_fine: object = None
    active_coarse: object = None
    mass_row_scale: float = 1.0
    include_kc_derivative: bool = True
    model: object = field(default_factory=ElasticNoYield)
    force_scale: float = 1.0
    mass_scale: float = 1.0

    @property
    def n_mp(self) -> int:
        return self.vol0.shape[0]


def build_step_context(coarse_grid: CartesianGrid, cloud: MaterialPoints,
                       params: MaterialParams, kind: BasisKind,
                       ghost: GhostParams, dirichlet: list[DirichletLine],
                       surfaces: list[SurfaceSpec], dt: float,
                       t_end: float | None = None,
                       mass_row_scale: float | None = None,
                       include_kc_derivative: bool = True,
                       model=None) -> StepContext:
    fine_grid = coarse_grid.subdivide()
    t_end = dt if t_end is None else t_end

    sets_fine = compute_active_sets(fine_grid, cloud, kind)
    sets_coarse = compute_active_sets(coarse_grid, cloud, kind)
    sets_fine.boundary = select_boundary_elements(
        sets_fine.active, sets_fine.inactive, fine_grid)
    sets_fine.ghost_facets = select_ghost_facets(
        sets_fine.boundary, sets_fine.active, fine_grid)
    sets_coarse.boundary = select_boundary_elements(
        sets_coarse.active, sets_coarse.inactive, coarse_grid)
    sets_coarse.ghost_facets = select_ghost_facets(
        sets_coarse.boundary, sets_coarse.active, coarse_grid)

    layout = build_dof_layout(
        fine_grid, coarse_grid,
        active_nodes(fine_grid, sets_fine.active),
        active_nodes(coarse_grid, sets_coarse.active),
        dirichlet,
    )

    lps = cloud.lp if kind == BasisKind.GIMPM else None
    smp_u = sample_points(fine_grid, kind, cloud.position, lps)
    smp_p = sample_points(coarse_grid, kind, cloud.position, lps)
    u_loc = _localize(smp_u, layout.u_map, "displacement samples")
    p_loc = _localize(smp_p, layout.p_map, "pressure samples")

    gu = assemble_ghost_matrix(
        fine_grid, sets_fine.ghost_facets,
        quadrature_order=ghost.quadrature_order)
    gp = assemble_ghost_matrix(
        coarse_grid, sets_coarse.ghost_facets,
        quadrature_order=ghost.quadrature_order)
    gu_sub = gu[layout.fine_nodes][:, layout.fine_nodes]
    gp_sub = gp[layout.coarse_nodes][:, layout.coarse_nodes]
    ghost_u = (ghost.gamma_a * sp.kron(gu_sub, sp.eye(2))).tocsr()
    ghost_p = (ghost.gamma_c * gp_sub).tocsr()

    segments = _build_segments(cloud, surfaces, fine_grid, coarse_grid,
                               layout, t_end)

    traction_mag = max(
        (np.linalg.norm(s.vector) for s in surfaces
         if s.kind == "traction" and s.vector is not None),
        default=0.0,
    )
    h_f = min(fine_grid.spacing)
    h_c = min(coarse_grid.spacing)
    force_scale = (traction_mag if traction_mag > 0.0 else params.K) * h_f
    mass_scale = max(params.rho_f0 * params.kappa0 * h_c, 1e-300)

    return StepContext(
        fine_grid=fine_grid,
        coarse_grid=coarse_grid,
        layout=layout,
        params=params,
        kind=kind,
        dt=dt,
        u_loc=u_loc,
        N_u=smp_u.values,
        q0=smp_u.gradients,
        p_loc=p_loc,
        N_p=smp_p.values,
        Q0=smp_p.gradients,
        vol0=cloud.volume0.copy(),
        J_n=cloud.J.copy(),
        lnJ_n=np.log(cloud.J),
        b_en=cloud.b_e.copy(),
        ghost_u=ghost_u,
        ghost_p=ghost_p,
        segments=segments,
        active_fine=sets_fine,
        active_coarse=sets_coarse,
        mass_row_scale=(-dt / params.rho_f0 if mass_row_scale is None
                        else mass_row_scale),
        include_kc_derivative=include_kc_derivative,
        model=model if model is not None else ElasticNoYield(),
        force_scale=force_scale,
        mass_scale=mass_scale,
    )


@dataclass
class MpState:
    """Per-particle kinematic/constitutive state at the current iterate."""

    dF: np.ndarray
    det_dF: np.ndarray
    q: np.ndarray            # (N, Ku, 2) current-config displacement gradients
    Qc: np.ndarray           # (N, Kp, 2) current-config pressure gradients
    J: np.ndarray
    b: np.ndarray
    eps: np.ndarray
    eps_v: np.ndarray
    lam: tuple               # (lam1, lam2, E1, E2) of b
    tau: np.ndarray          # effective Kirchhoff stress (N, 2, 2)
    d_tau_v: np.ndarray
    n_por: np.ndarray
    kappa: np.ndarray
    omega: np.ndarray        # current particle volume
    p_mp: np.ndarray
    grad_p: np.ndarray


def compute_mp_state(ctx: StepContext, du_full: np.ndarray,
                     p_full: np.ndarray) -> MpState:
    prm = ctx.params
    du_nodal = du_full.reshape(-1, 2)
    du_loc = du_nodal[ctx.u_loc]                       # (N, Ku, 2)
    grad_incr = np.einsum("nki,nkj->nij", du_loc, ctx.q0)
    dF = I2 + grad_incr
    det_dF = dF[:, 0, 0] * dF[:, 1, 1] - dF[:, 0, 1] * dF[:, 1, 0]
    if np.any(det_dF <= 0.0):
        raise PorosityViolation("incremental volume map is not positive")

    dFinv = np.empty_like(dF)
    dFinv[:, 0, 0] = dF[:, 1, 1]
    dFinv[:, 1, 1] = dF[:, 0, 0]
    dFinv[:, 0, 1] = -dF[:, 0, 1]
    dFinv[:, 1, 0] = -dF[:, 1, 0]
    dFinv /= det_dF[:, None, None]

    q = np.einsum("nkj,nji->nki", ctx.q0, dFinv)
    Qc = np.einsum("nkj,nji->nki", ctx.Q0, dFinv)

    J = det_dF * ctx.J_n
    if np.any(J <= 1.0 - prm.n0):
        raise PorosityViolation(
            f"J reached {float(np.min(J)):.6g} <= 1 - n0 = {1.0 - prm.n0:.6g}"
        )

    b = np.einsum("nij,njk,nlk->nil", dF, ctx.b_en, dF)
    lam1, lam2, E1, E2 = eig2_sym(b)
    f1 = 0.5 * np.log(lam1)
    f2 = 0.5 * np.log(lam2)
    eps_trial = f1[:, None, None] * E1 + f2[:, None, None] * E2
    eps, _ = ctx.model.correct(eps_trial, None)
    eps_v = np.trace(eps, axis1=-2, axis2=-1)

    n_por, tau_v, d_tau_v = _volumetric_stress_terms(eps_v, prm)
    dev = eps - (eps_v / 3.0)[:, None, None] * I2
    tau = tau_v[:, None, None] * I2 + 2.0 * prm.G * dev

    omega = J * ctx.vol0
    kappa = kozeny_carman(n_por, prm.c1)
    p_vals = p_full[ctx.p_loc]
    p_mp = np.einsum("nk,nk->n", ctx.N_p, p_vals)
    grad_p = np.einsum("nkj,nk->nj", Qc, p_vals)

    return MpState(
        dF=dF, det_dF=det_dF, q=q, Qc=Qc, J=J, b=b, eps=eps, eps_v=eps_v,
        lam=(lam1, lam2, E1, E2), tau=tau, d_tau_v=d_tau_v, n_por=n_por,
        kappa=kappa, omega=omega, p_mp=p_mp, grad_p=grad_p,
    )


def assemble_residual(ctx: StepContext, du_full: np.ndarray,
                      p_full: np.ndarray,
                      state: MpState | None = None) -> ResidualVector:
    prm = ctx.params
    st = state if state is not None else compute_mp_state(ctx, du_full, p_full)
    bf = np.asarray(prm.body_force, dtype=float)

    # equilibrium rows: internal - pressure coupling - body force
    tau_q = np.einsum("nik,nak->nai", st.tau, st.q)
    r_u_loc = ctx.vol0[:, None, None] * tau_q
    r_u_loc -= (ctx.vol0 * st.J * st.p_mp)[:, None, None] * st.q
    if np.any(bf != 0.0):
        rho = mixture_density(st.n_por, prm)
        r_u_loc -= (st.omega * rho)[:, None, None] * \
            ctx.N_u[:, :, None] * bf[None, None, :]

    r_u = np.zeros(ctx.layout.n_u)
    u_dofs = ctx.u_loc[:, :, None] * 2 + np.arange(2)[None, None, :]
    np.add.at(r_u, u_dofs.ravel(), r_u_loc.ravel())
    r_u += ctx.ghost_u @ du_full
    r_u -= ctx.segments.f_ext

    # mass rows: storage + seepage (paper units: mass rate)
    dln = np.log(st.J) - ctx.lnJ_n
    drive = st.grad_p - prm.rho_f0 * bf[None, :]
    r_p_loc = (ctx.vol0 * st.J * prm.rho_f0 * dln / ctx.dt)[:, None] * ctx.N_p
    r_p_loc += (st.omega * st.kappa / prm.g)[:, None] * \
        np.einsum("nak,nk->na", st.Qc, drive)

    r_p = np.zeros(ctx.layout.n_p)
    np.add.at(r_p, ctx.p_loc.ravel(), r_p_loc.ravel())
    r_p += ctx.segments.C_pen @ p_full - ctx.segments.pen_rhs
    r_p -= ctx.segments.flux_ext
    r_p += ctx.ghost_p @ p_full
    return ResidualVector(r_u=r_u, r_p=r_p)


def _log_derivative_tensor(st: MpState) -> np.ndarray:
    """d(eps)/d(b) for symmetric arguments, minor-symmetrized in both pairs."""
    lam1, lam2, E1, E2 = st.lam
    fp1 = 0.5 / lam1
    fp2 = 0.5 / lam2
    gap = lam1 - lam2
    theta = np.where(
        np.abs(gap) > 1e-12 * np.maximum(np.abs(lam1), 1.0),
        (0.5 * np.log(lam1) - 0.5 * np.log(lam2)) / np.where(gap == 0.0, 1.0, gap),
        1.0 / (lam1 + lam2),
    )

    def outer(a, bq):
        return np.einsum("npk,nlq->npqkl", a, bq)

    L = (
        fp1[:, None, None, None, None] * outer(E1, E1)
        + fp2[:, None, None, None, None] * outer(E2, E2)
        + theta[:, None, None, None, None] * (outer(E1, E2) + outer(E2, E1))
    )
    L = 0.5 * (L + np.einsum("npqkl->npqlk", L))
    L = 0.5 * (L + np.einsum("npqkl->nqpkl", L))
    return L


def assemble_jacobian(ctx: StepContext, du_full: np.ndarray,
                      p_full: np.ndarray,
                      state: MpState | None = None) -> JacobianBlocks:
    prm = ctx.params
    st = state if state is not None else compute_mp_state(ctx, du_full, p_full)
    bf = np.asarray(prm.body_force, dtype=float)
    s = ctx.mass_row_scale
    vol0 = ctx.vol0

    # constitutive tangent in Kirchhoff/log-strain space
    dd = np.einsum("ij,kl->ijkl", I2, I2)
    sym = 0.5 * (np.einsum("ik,jl->ijkl", I2, I2) + np.einsum("il,jk->ijkl", I2, I2))
    D = st.d_tau_v[:, None, None, None, None] * dd[None] \
        + 2.0 * prm.G * (sym - dd / 3.0)[None]
    L = _log_derivative_tensor(st)
    H = np.einsum("nijkl,nklpq->nijpq", D, L)

    q = st.q
    Qc = st.Qc
    bq = np.einsum("nqk,nbk->nbq", st.b, q)
    tau_q = np.einsum("nik,nbk->nbi", st.tau, q)

    a_loc = 2.0 * vol0[:, None, None, None, None] * \
        np.einsum("nimjq,nam,nbq->naibj", H, q, bq)
    a_loc -= vol0[:, None, None, None, None] * \
        np.einsum("naj,nbi->naibj", q, tau_q)
    coef_p = vol0 * st.J * st.p_mp
    if np.any(coef_p != 0.0):
        a_loc += coef_p[:, None, None, None, None] * (
            np.einsum("naj,nbi->naibj", q, q)
            - np.einsum("nai,nbj->naibj", q, q)
        )
    if np.any(bf != 0.0):
        coef_b = vol0 * prm.rho_f0 * st.J
        a_loc -= np.einsum("n,na,i,nbj->naibj", coef_b, ctx.N_u, bf, q)

    b1_loc = -(vol0 * st.J)[:, None, None, None] * \
        np.einsum("nai,nb->naib", q, ctx.N_p)

    coef_c = st.omega * st.kappa / prm.g
    c_loc = coef_c[:, None, None] * np.einsum("naj,nbj->nab", Qc, Qc)

    dln = np.log(st.J) - ctx.lnJ_n
    drive = st.grad_p - prm.rho_f0 * bf[None, :]
    kappa_eff = st.kappa.copy()
    if ctx.include_kc_derivative:
        kappa_eff += kozeny_carman_derivative(st.n_por, prm.c1) * (1.0 - st.n_por)
    Qd = np.einsum("nak,nk->na", Qc, drive)
    qd = np.einsum("nbk,nk->nb", q, drive)
    QQb = np.einsum("nak,nbk->nab", Qc, q)

    b2_loc = (vol0 * st.J * prm.rho_f0 * (1.0 + dln) / ctx.dt)[:, None, None, None] * \
        np.einsum("na,nbj->nabj", ctx.N_p, q)
    b2_loc += (st.omega * kappa_eff / prm.g)[:, None, None, None] * \
        np.einsum("na,nbj->nabj", Qd, q)
    b2_loc -= coef_c[:, None, None, None] * np.einsum("naj,nb->nabj", Qc, qd)
    b2_loc -= coef_c[:, None, None, None] * np.einsum("nab,nj->nabj", QQb, st.grad_p)

    layout = ctx.layout
    u_dofs = ctx.u_loc[:, :, None] * 2 + np.arange(2)[None, None, :]  # (N,Ku,2)

    a_rows = np.broadcast_to(u_dofs[:, :, :, None, None], a_loc.shape)
    a_cols = np.broadcast_to(u_dofs[:, None, None, :, :], a_loc.shape)
    A = sp.coo_matrix(
        (a_loc.ravel(), (a_rows.ravel(), a_cols.ravel())),
        shape=(layout.n_u, layout.n_u),
    ).tocsr()
    A = A + ctx.ghost_u

    b1_rows = np.broadcast_to(u_dofs[:, :, :, None], b1_loc.shape)
    b1_cols = np.broadcast_to(ctx.p_loc[:, None, None, :], b1_loc.shape)
    B1 = sp.coo_matrix(
        (b1_loc.ravel(), (b1_rows.ravel(), b1_cols.ravel())),
        shape=(layout.n_u, layout.n_p),
    ).tocsr()

    b2_rows = np.broadcast_to(ctx.p_loc[:, :, None, None], b2_loc.shape)
    b2_cols = np.broadcast_to(u_dofs[:, None, :, :], b2_loc.shape)
    B2 = sp.coo_matrix(
        (s * b2_loc.ravel(), (b2_rows.ravel(), b2_cols.ravel())),
        shape=(layout.n_p, layout.n_u),
    ).tocsr()

    c_rows = np.broadcast_to(ctx.p_loc[:, :, None], c_loc.shape)
    c_cols = np.broadcast_to(ctx.p_loc[:, None, :], c_loc.shape)
    C = sp.coo_matrix(
        (c_loc.ravel(), (c_rows.ravel(), c_cols.ravel())),
        shape=(layout.n_p, layout.n_p),
    ).tocsr()
    C = s * (C + ctx.segments.C_pen + ctx.ghost_p)

    return JacobianBlocks(A=A, B1=B1, B2=B2, C=C)


def apply_boundary_terms(cloud: MaterialPoints, surfaces: list[SurfaceSpec],
                         fine_grid: CartesianGrid, coarse_grid: CartesianGrid,
                         layout: DofLayout, t_end: float) -> _Segments:
    """Traction/flux integrals and the pressure-penalty operator.

    Returns the frozen contributions added into the residual and the C block;
    exposed separately so the surface machinery can be exercised directly.
    """
    return _build_segments(cloud, surfaces, fine_grid, coarse_grid, layout, t_end)
