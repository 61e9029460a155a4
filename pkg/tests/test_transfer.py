import numpy as np
import pytest

from conftest import default_params, fill_cloud, make_grid

from poromp.basis import BasisKind, sample_points
from poromp.material import MaterialPoints
from poromp.transfer import g2p_update, update_domain_lengths


def setup_column():
    grid = make_grid(2, 2, 1.0)
    fine = grid.subdivide()
    cloud = fill_cloud(grid)
    return grid, fine, cloud


class TestG2P:
    def test_rigid_shift(self):
        grid, fine, cloud = setup_column()
        d = np.array([0.01, -0.02])
        du = np.tile(d, (fine.node_count, 1))
        p = np.zeros(grid.node_count)
        x_before = cloud.position.copy()
        g2p_update(cloud, fine, grid, BasisKind.SMPM, du, p, default_params())
        assert np.allclose(cloud.position, x_before + d, atol=1e-14)
        assert np.allclose(cloud.displacement, d, atol=1e-14)
        assert np.allclose(cloud.F, np.eye(2), atol=1e-14)
        assert np.allclose(cloud.J, 1.0)

    def test_affine_field_updates_deformation_exactly(self):
        grid, fine, cloud = setup_column()
        Gm = np.array([[0.02, 0.01], [0.0, -0.015]])
        pos = fine.node_positions()
        du = pos @ Gm.T
        p = np.zeros(grid.node_count)
        g2p_update(cloud, fine, grid, BasisKind.SMPM, du, p, default_params())
        expected_dF = np.eye(2) + Gm
        assert np.allclose(cloud.F, expected_dF, atol=1e-13)
        assert np.allclose(cloud.J, np.linalg.det(expected_dF))
        assert np.allclose(cloud.volume, cloud.volume0 * np.linalg.det(expected_dF))

    def test_constant_pressure_overwrites(self):
        grid, fine, cloud = setup_column()
        cloud.pressure[:] = -999.0
        du = np.zeros((fine.node_count, 2))
        p = np.full(grid.node_count, 777.0)
        g2p_update(cloud, fine, grid, BasisKind.SMPM, du, p, default_params())
        assert np.allclose(cloud.pressure, 777.0)

    def test_idempotent_with_frozen_samples(self):
        grid, fine, cloud = setup_column()
        params = default_params()
        du = np.zeros((fine.node_count, 2))
        rng = np.random.default_rng(2)
        p = rng.uniform(0, 1e4, grid.node_count)
        smp_u = sample_points(fine, BasisKind.SMPM, cloud.position)
        smp_p = sample_points(grid, BasisKind.SMPM, cloud.position)
        g2p_update(cloud, fine, grid, BasisKind.SMPM, du, p, params,
                   fine_samples=smp_u, coarse_samples=smp_p)
        snap = cloud.copy()
        g2p_update(cloud, fine, grid, BasisKind.SMPM, du, p, params,
                   fine_samples=smp_u, coarse_samples=smp_p)
        assert np.array_equal(cloud.pressure, snap.pressure)
        assert np.array_equal(cloud.position, snap.position)
        assert np.array_equal(cloud.F, snap.F)

    def test_volume_tracks_jacobian(self):
        grid, fine, cloud = setup_column()
        pos = fine.node_positions()
        du = np.column_stack([0.03 * pos[:, 0], np.zeros(len(pos))])
        g2p_update(cloud, fine, grid, BasisKind.SMPM, du,
                   np.zeros(grid.node_count), default_params())
        assert np.allclose(cloud.volume / cloud.volume0, cloud.J)


class TestDomainUpdate:
    def test_identity_keeps_lengths(self):
        cloud = MaterialPoints.from_positions([(0.5, 0.5)], 0.01, (0.05, 0.08))
        update_domain_lengths(cloud)
        assert np.allclose(cloud.lp, cloud.lp0)

    def test_axis_stretch(self):
        cloud = MaterialPoints.from_positions([(0.5, 0.5)], 0.01, (0.05, 0.08))
        cloud.F[0] = np.diag([2.0, 1.0])
        update_domain_lengths(cloud)
        assert np.allclose(cloud.lp[0], (0.10, 0.08))

    def test_rotation_neutral(self):
        cloud = MaterialPoints.from_positions([(0.5, 0.5)], 0.01, (0.05, 0.08))
        th = 0.4
        cloud.F[0] = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        update_domain_lengths(cloud)
        assert np.allclose(cloud.lp[0], cloud.lp0[0], atol=1e-14)

    def test_stretch_applies_to_initial_lengths(self):
        cloud = MaterialPoints.from_positions([(0.5, 0.5)], 0.01, (0.05, 0.05))
        cloud.F[0] = np.diag([1.5, 0.8])
        update_domain_lengths(cloud)
        update_domain_lengths(cloud)  # repeated call must not compound
        assert np.allclose(cloud.lp[0], (0.075, 0.04))
