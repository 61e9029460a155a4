import numpy as np
import pytest

from conftest import default_params, fill_cloud, make_grid

from poromp.assembly import DirichletLine, SurfaceSpec, build_step_context
from poromp.basis import BasisKind
from poromp.errors import PorosityViolation
from poromp.ghost import GhostParams
from poromp.material import MaterialParams
from poromp.solver import (
    Scenario,
    SolverConfig,
    TimeSchedule,
    backward_euler_lnJ,
    newton_solve,
    run_simulation,
    run_step,
)


def column_scenario(n_coarse=8, w=1e5, t0=0.1, steps=1, ratio=1.0,
                    predictor="zero", newton_tol=1e-9, kappa0=1e-7):
    """Narrow saturated column, loaded on top, drained through the top."""
    h = 1.0 / n_coarse
    grid = make_grid(1, n_coarse, h)
    cloud = fill_cloud(grid)
    params = MaterialParams.from_tangent_modulus(
        K_over_n0=1e6, G=6e5, n0=0.5, kappa0=kappa0, rho_f0=1000.0)
    top_mask = np.abs(cloud.position[:, 1] + cloud.lp[:, 1] - 1.0) < 1e-9
    surfaces = [
        SurfaceSpec(side="top", kind="traction", vector=(0.0, -w),
                    carriers=top_mask),
        SurfaceSpec(side="top", kind="pressure", pbar=0.0,
                    gamma_pen=5e6 / params.kappa0, carriers=top_mask),
    ]
    dirichlet = [
        DirichletLine(field="u", axis=0, where=0.0, component="x"),
        DirichletLine(field="u", axis=0, where=h, component="x"),
        DirichletLine(field="u", axis=1, where=0.0, component="y"),
    ]
    return Scenario(
        coarse_grid=grid,
        material=params,
        kind=BasisKind.SMPM,
        cloud=cloud,
        dirichlet=dirichlet,
        surfaces=surfaces,
        ghost=GhostParams(),
        solver=SolverConfig(newton_tol=newton_tol, predictor=predictor),
        schedule=TimeSchedule(kind="geometric", t0=t0, ratio=ratio, steps=steps),
    )


class TestBackwardEuler:
    def test_no_change(self):
        assert backward_euler_lnJ(1.3, 1.3, 0.7) == 0.0

    def test_log_identity(self):
        dt = 0.25
        assert backward_euler_lnJ(1.0, np.exp(dt), dt) == pytest.approx(1.0)

    def test_direct_value(self):
        assert backward_euler_lnJ(1.0, 1.1, 0.5) == pytest.approx(
            np.log(1.1) / 0.5)
        assert backward_euler_lnJ(1.0, 1.1, 0.5) == pytest.approx(0.19062, abs=1e-5)

    def test_porosity_floor(self):
        with pytest.raises(PorosityViolation):
            backward_euler_lnJ(1.0, 0.4, 0.1, n0=0.5)


class TestNewton:
    def test_zero_load_converges_immediately(self):
        scen = column_scenario(n_coarse=4, w=0.0)
        ctx = build_step_context(
            scen.coarse_grid, scen.cloud, scen.material, scen.kind,
            scen.ghost, scen.dirichlet, scen.surfaces, dt=0.1)
        du, p, info = newton_solve(ctx, scen.solver)
        assert info.converged
        assert info.iterations <= 1
        assert np.max(np.abs(du)) == 0.0

    def test_small_load_linear_regime_one_iteration(self):
        # a load far below the stiffness keeps the problem effectively linear,
        # so the first correction already reaches the relative tolerance
        scen = column_scenario(n_coarse=4, w=1.0, newton_tol=1e-5)
        ctx = build_step_context(
            scen.coarse_grid, scen.cloud, scen.material, scen.kind,
            scen.ghost, scen.dirichlet, scen.surfaces, dt=0.1)
        du, p, info = newton_solve(ctx, scen.solver)
        assert info.converged
        assert info.iterations == 1

    def test_quadratic_convergence_history(self):
        # strong load: the residual drop must be at least quadratic once the
        # iterates enter the attraction basin
        scen = column_scenario(n_coarse=4, w=5e5, newton_tol=1e-6)
        ctx = build_step_context(
            scen.coarse_grid, scen.cloud, scen.material, scen.kind,
            scen.ghost, scen.dirichlet, scen.surfaces, dt=0.1)
        du, p, info = newton_solve(ctx, scen.solver)
        hist = np.array(info.residual_history)
        ref = max(hist[0], hist[1])
        assert info.converged
        assert info.iterations >= 3
        ratios = []
        for k in range(1, len(hist) - 1):
            # skip entries at/below the attainable floor
            if hist[k] > 1e-5 * ref and hist[k + 1] > 1e-8 * ref:
                ratios.append(hist[k + 1] * ref / hist[k] ** 2)
        assert ratios, "history too short to observe quadratic decay"
        assert max(ratios) < 1e3

    def test_predictor_choice_does_not_change_converged_fields(self):
        # permeable variant: well-conditioned, converges far below 1e-9
        results = {}
        for predictor in ("zero", "p2g"):
            scen = column_scenario(n_coarse=4, w=1e5, predictor=predictor,
                                   newton_tol=1e-11, kappa0=2e-3)
            scen.cloud.pressure[:] = 5e4  # nonzero gather for the predictor
            ctx = build_step_context(
                scen.coarse_grid, scen.cloud, scen.material, scen.kind,
                scen.ghost, scen.dirichlet, scen.surfaces, dt=0.1)
            du, p, info = newton_solve(ctx, scen.solver,
                                       cloud_pressure=scen.cloud.pressure)
            results[predictor] = (du, p)
        du0, p0 = results["zero"]
        du1, p1 = results["p2g"]
        scale_u = max(np.max(np.abs(du0)), 1e-30)
        scale_p = max(np.max(np.abs(p0)), 1e-30)
        assert np.max(np.abs(du0 - du1)) / scale_u < 1e-9
        assert np.max(np.abs(p0 - p1)) / scale_p < 1e-9


class TestStepping:
    def test_zero_steps_echoes_initial_state(self):
        scen = column_scenario(steps=0)
        before = scen.cloud.copy()
        result = run_simulation(scen)
        assert result.records == []
        assert np.array_equal(result.cloud.position, before.position)

    def test_undrained_first_response(self):
        # one small implicit step: the interior pressure carries the load
        scen = column_scenario(n_coarse=8, w=1e5, t0=1e-4)
        result = run_simulation(scen)
        rec = result.records[-1]
        grid = scen.coarse_grid
        ys = grid.node_positions()[rec.pressure_nodes][:, 1]
        bottom = rec.pressure[ys < 0.3]
        assert np.all(bottom > 0.97e5)
        assert np.all(bottom < 1.1e5)

    def test_grid_state_fully_discarded_between_steps(self):
        # replaying a step from a serialized cloud must reproduce the next
        # state bit for bit: nothing may survive on the grid
        scen = column_scenario(n_coarse=4, w=1e5, t0=0.1, steps=1)
        cloud_a = scen.cloud.copy()
        cloud_b = scen.cloud.copy()
        _, du_a, p_a, _ = run_step(scen, cloud_a, 0.1, 0.1)
        _, du_b, p_b, _ = run_step(scen, cloud_b, 0.1, 0.1)
        assert np.array_equal(du_a, du_b)
        assert np.array_equal(p_a, p_b)
        assert np.array_equal(cloud_a.position, cloud_b.position)
        assert np.array_equal(cloud_a.pressure, cloud_b.pressure)

    def test_geometric_schedule_matches_closed_form(self):
        sched = TimeSchedule(kind="geometric", t0=0.1, ratio=1.01673, steps=550)
        inc = sched.increments()
        assert len(inc) == 550
        closed = 0.1 * (1.01673 ** 550 - 1.0) / 0.01673
        assert sched.total() == pytest.approx(closed, rel=1e-12)

    def test_geometric_schedule_covers_consolidation_time(self):
        # the 550-step schedule with ratio 1.01673 sums to the full
        # consolidation time H^2 / c_v of the benchmark column within ~1%
        params = MaterialParams.from_tangent_modulus(1e6, 6e5, 0.5, 1e-7)
        cv = (params.K / params.n0 + 4.0 / 3.0 * params.G) * params.kappa0 / (
            params.rho_f0 * params.g)
        sched = TimeSchedule(kind="geometric", t0=0.1, ratio=1.01673, steps=550)
        assert sched.total() == pytest.approx(1.0 / cv, rel=0.02)
