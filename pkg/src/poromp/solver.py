"""Implicit time stepping: Newton loop, step orchestration, schedules.

Each step rebuilds the grid-side scratch (active sets, ghost facets, dof
numbering, frozen samples) from the particle cloud alone, solves the coupled
nonlinear system for the displacement increment and pressure, maps the
converged fields back to the particles and discards the grid state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    DirichletLine,
    StepContext,
    SurfaceSpec,
    assemble_jacobian,
    assemble_residual,
    build_step_context,
    compute_mp_state,
)
from .basis import BasisKind
from .errors import (
    LinearSolveFailure,
    NonConvergence,
    PorosityViolation,
)
from .ghost import GhostParams
from .material import MaterialParams, MaterialPoints
from .mesh import CartesianGrid
from .transfer import g2p_update, update_domain_lengths


@dataclass(frozen=True)
class TimeSchedule:
    """Fixed-step or geometric step sequence.

    Geometric: step k has size t0 * ratio**k, so small early steps resolve
    the fast transient and the tail still finishes in a fixed step count.
    """

    kind: str = "fixed"   # 'fixed' or 'geometric'
    dt: float = 1.0
    steps: int = 1
    t0: float = 0.1
    ratio: float = 1.0

    def __post_init__(self):
        if self.kind == "geometric" and self.ratio < 1.0:
            raise ValueError("geometric schedule needs ratio >= 1")
        if self.kind == "fixed" and self.dt <= 0.0:
            raise ValueError("fixed schedule needs dt > 0")

    def increments(self) -> np.ndarray:
        if self.kind == "fixed":
            return np.full(self.steps, self.dt)
        return self.t0 * self.ratio ** np.arange(self.steps)

    def total(self) -> float:
        return float(np.sum(self.increments()))


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-9       # relative drop of the weighted residual
    abs_tol: float = 1e-12         # absolute floor on the weighted residual
    max_iters: int = 25
    max_halvings: int = 10
    predictor: str = "zero"        # 'zero' or 'p2g' (pressure gather)
    include_kc_derivative: bool = True

    def __post_init__(self):
        if self.newton_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class NewtonInfo:
    iterations: int
    residual_history: list[float] = field(default_factory=list)
    converged: bool = False


def backward_euler_lnJ(J_prev: float, J_curr: float, dt: float,
                       n0: float | None = None) -> float:
    """Backward-Euler rate of ln J, the discrete divergence of the velocity."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    floor = (1.0 - n0) if n0 is not None else 0.0
    if J_prev <= floor or J_curr <= floor:
        raise PorosityViolation("volume ratio at or below the admissible floor")
    return (np.log(J_curr) - np.log(J_prev)) / dt


def _solve_equilibrated(K_ff: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    """Direct solve with symmetric diagonal scaling and one refinement pass.

    The assembled system mixes stiffness, seepage and penalty scales spanning
    many orders of magnitude; equilibrating rows/columns keeps the
    factorization accurate without changing the solution.
    """
    absK = abs(K_ff.tocsr())
    row_max = absK.max(axis=1).toarray().ravel()
    if np.any(row_max <= 0.0):
        raise LinearSolveFailure("structurally zero row in the reduced system")
    d = 1.0 / np.sqrt(row_max)
    D = sp.diags(d)
    Ks = (D @ K_ff @ D).tocsc()
    b = d * rhs
    try:
        lu = spla.splu(Ks)
    except RuntimeError as exc:
        raise LinearSolveFailure(str(exc)) from exc
    y = lu.solve(b)
    y += lu.solve(b - Ks @ y)
    return d * y


def _weighted_norm(ctx: StepContext, res) -> float:
    free_u = ~ctx.layout.u_fixed
    free_p = ~ctx.layout.p_fixed
    ru = res.r_u[free_u] / ctx.force_scale
    rp = res.r_p[free_p] / ctx.mass_scale
    return float(np.sqrt(np.dot(ru, ru) + np.dot(rp, rp)))


def _predict_pressure(ctx: StepContext, cloud_pressure: np.ndarray) -> np.ndarray:
    """Mass-lumped gather of particle pressures onto the active coarse nodes.

    Nodes held by the drainage penalty are preset to the penalty target so the
    predictor does not start in conflict with the boundary operator.
    """
    num = np.zeros(ctx.layout.n_p)
    den = np.zeros(ctx.layout.n_p)
    w = ctx.vol0 * ctx.J_n
    np.add.at(num, ctx.p_loc.ravel(), (w[:, None] * ctx.N_p * cloud_pressure[:, None]).ravel())
    np.add.at(den, ctx.p_loc.ravel(), (w[:, None] * ctx.N_p).ravel())
    out = np.zeros(ctx.layout.n_p)
    nz = den > 0.0
    out[nz] = num[nz] / den[nz]
    pen_diag = ctx.segments.C_pen.diagonal()
    held = pen_diag > 0.0
    out[held] = ctx.segments.pen_rhs[held] / pen_diag[held]
    return out


def newton_solve(ctx: StepContext, config: SolverConfig,
                 cloud_pressure: np.ndarray | None = None):
    """Solve one step; returns (du_full, p_full, NewtonInfo).

    Convergence is measured on the field-weighted residual relative to the
    largest of the first two evaluations (mass rows are typically zero at the
    predictor).  A trial update that closes the pore space is halved before
    failing.  When the residual stagnates many orders below the reference,
    the iterate has reached the floating-point floor of this saddle system
    and the best iterate is accepted.
    """
    layout = ctx.layout
    du = np.zeros(layout.n_u)
    du[layout.u_fixed] = layout.u_values[layout.u_fixed]
    p = np.zeros(layout.n_p)
    p[layout.p_fixed] = layout.p_values[layout.p_fixed]
    if config.predictor == "p2g" and cloud_pressure is not None:
        free = ~layout.p_fixed
        p[free] = _predict_pressure(ctx, cloud_pressure)[free]

    free_u = ~layout.u_fixed
    free_p = ~layout.p_fixed
    s = ctx.mass_row_scale
    free = np.concatenate([free_u, free_p])
    n_free_u = int(np.sum(free_u))

    info = NewtonInfo(iterations=0)
    state = compute_mp_state(ctx, du, p)
    res = assemble_residual(ctx, du, p, state=state)
    norm = _weighted_norm(ctx, res)
    info.residual_history.append(norm)
    if norm <= config.abs_tol:
        info.converged = True
        return du, p, info

    # the weighted residual may legitimately rise before it falls (the mass
    # rows are silent at the predictor), so convergence is measured against
    # the peak seen during the solve
    best = None
    stagnant = 0
    for it in range(1, config.max_iters + 1):
        jac = assemble_jacobian(ctx, du, p, state=state)
        K_ff = jac.full()[free][:, free]
        rhs = np.concatenate([res.r_u, s * res.r_p])
        delta = _solve_equilibrated(K_ff, -rhs[free])
        if not np.all(np.isfinite(delta)):
            raise LinearSolveFailure("linear solve produced non-finite values")

        step_u = np.zeros(layout.n_u)
        step_p = np.zeros(layout.n_p)
        step_u[free_u] = delta[:n_free_u]
        step_p[free_p] = delta[n_free_u:]

        scale = 1.0
        for _ in range(config.max_halvings + 1):
            try:
                state = compute_mp_state(ctx, du + scale * step_u, p + scale * step_p)
                break
            except PorosityViolation:
                scale *= 0.5
        else:
            raise PorosityViolation(
                "trial update keeps violating the porosity constraint"
            )
        du = du + scale * step_u
        p = p + scale * step_p

        res = assemble_residual(ctx, du, p, state=state)
        norm = _weighted_norm(ctx, res)
        info.iterations = it
        info.residual_history.append(norm)

        # the mass rows may be silent at the predictor and only reach their
        # working magnitude after the first correction
        ref = max(info.residual_history[0], info.residual_history[1])
        if norm <= max(config.newton_tol * ref, config.abs_tol):
            info.converged = True
            return du, p, info

        if best is None or norm <= 0.75 * best[0]:
            stagnant = 0
        else:
            stagnant += 1
        if best is None or norm < best[0]:
            best = (norm, du.copy(), p.copy())
        # far below the reference and no longer improving: floating-point
        # floor of this (possibly severely ill-conditioned) saddle system
        if stagnant >= 3 and best[0] <= 1e-5 * ref:
            info.converged = True
            return best[1], best[2], info

    raise NonConvergence(config.max_iters, info.residual_history[-1])


@dataclass
class Scenario:
    """A complete problem: grids, cloud, material, conditions, schedule."""

    coarse_grid: CartesianGrid
    material: MaterialParams
    kind: BasisKind
    cloud: MaterialPoints
    dirichlet: list[DirichletLine]
    surfaces: list[SurfaceSpec]
    ghost: GhostParams
    solver: SolverConfig
    schedule: TimeSchedule
    meta: dict = field(default_factory=dict)


@dataclass
class StepRecord:
    index: int
    time: float
    dt: float
    iterations: int
    pressure_nodes: np.ndarray   # linear coarse node ids
    pressure: np.ndarray
    du_nodes: np.ndarray
    du: np.ndarray               # (n, 2) converged increment


@dataclass
class SimulationResult:
    records: list[StepRecord]
    cloud: MaterialPoints
    coarse_grid: CartesianGrid
    fine_grid: CartesianGrid

    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.records])


def run_step(scenario: Scenario, cloud: MaterialPoints, dt: float,
             t_end: float):
    """One full MPM step: scratch grids, solve, map back, discard."""
    ctx = build_step_context(
        scenario.coarse_grid, cloud, scenario.material, scenario.kind,
        scenario.ghost, scenario.dirichlet, scenario.surfaces, dt,
        t_end=t_end,
        include_kc_derivative=scenario.solver.include_kc_derivative,
    )
    du, p, info = newton_solve(ctx, scenario.solver,
                               cloud_pressure=cloud.pressure)

    fine_grid = ctx.fine_grid
    du_grid = np.zeros((fine_grid.node_count, 2))
    du_grid[ctx.layout.fine_nodes] = du.reshape(-1, 2)
    p_grid = np.zeros(scenario.coarse_grid.node_count)
    p_grid[ctx.layout.coarse_nodes] = p

    g2p_update(cloud, fine_grid, scenario.coarse_grid, scenario.kind,
               du_grid, p_grid, scenario.material)
    if scenario.kind == BasisKind.GIMPM:
        lp_max = 0.5 * min(fine_grid.spacing) * (1.0 - 1e-12)
        update_domain_lengths(cloud, lp_max=lp_max)
    return ctx, du, p, info


def run_simulation(scenario: Scenario,
                   step_callback=None) -> SimulationResult:
    """March the schedule; emits one record per converged step."""
    cloud = scenario.cloud
    records: list[StepRecord] = []
    t = 0.0
    fine_grid = scenario.coarse_grid.subdivide()
    for k, dt in enumerate(scenario.schedule.increments()):
        t_end = t + float(dt)
        ctx, du, p, info = run_step(scenario, cloud, float(dt), t_end)
        rec = StepRecord(
            index=k,
            time=t_end,
            dt=float(dt),
            iterations=info.iterations,
            pressure_nodes=ctx.layout.coarse_nodes.copy(),
            pressure=p.copy(),
            du_nodes=ctx.layout.fine_nodes.copy(),
            du=du.reshape(-1, 2).copy(),
        )
        records.append(rec)
        if step_callback is not None:
            step_callback(rec, cloud)
        t = t_end
    return SimulationResult(
        records=records,
        cloud=cloud,
        coarse_grid=scenario.coarse_grid,
        fine_grid=fine_grid,
    )
