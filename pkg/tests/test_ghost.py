import numpy as np
import pytest
import scipy.sparse as sp

from poromp.ghost import (
    GhostParams,
    assemble_ghost_matrix,
    select_boundary_elements,
    select_ghost_facets,
)
from poromp.mesh import CartesianGrid


def grid(n=6, h=1.0):
    return CartesianGrid(origin=(0.0, 0.0), spacing=(h, h), counts=(n, n))


def sets_from_active(g, active):
    active = set(active)
    inactive = {e for e in g.all_elements()} - active
    return active, inactive


class TestBoundarySelection:
    def test_single_active_element(self):
        g = grid()
        active, inactive = sets_from_active(g, {(2, 2)})
        assert select_boundary_elements(active, inactive, g) == [(2, 2)]

    def test_three_by_three_block_boundary_is_the_ring(self):
        g = grid(7)
        block = {(i, j) for i in range(2, 5) for j in range(2, 5)}
        active, inactive = sets_from_active(g, block)
        boundary = select_boundary_elements(active, inactive, g)
        assert set(boundary) == block - {(3, 3)}
        assert len(boundary) == 8

    def test_fully_active_grid_has_no_boundary(self):
        g = grid(4)
        active, inactive = sets_from_active(g, set(g.all_elements()))
        assert select_boundary_elements(active, inactive, g) == []

    def test_deterministic_order(self):
        g = grid()
        block = {(3, 2), (2, 2), (2, 3), (3, 3)}
        active, inactive = sets_from_active(g, block)
        boundary = select_boundary_elements(active, inactive, g)
        assert boundary == sorted(boundary, key=lambda e: (e[1], e[0]))


class TestFacetSelection:
    def test_single_active_element_yields_nothing(self):
        g = grid()
        active, inactive = sets_from_active(g, {(2, 2)})
        boundary = select_boundary_elements(active, inactive, g)
        assert select_ghost_facets(boundary, active, g) == []

    def test_two_element_strip_shares_one_facet(self):
        g = grid()
        active, inactive = sets_from_active(g, {(2, 2), (3, 2)})
        boundary = select_boundary_elements(active, inactive, g)
        facets = select_ghost_facets(boundary, active, g)
        assert facets == [(2, 2, 0)]

    def test_three_by_three_block_has_twelve_facets(self):
        # 8 facets between adjacent ring elements + 4 between ring and center
        g = grid(7)
        block = {(i, j) for i in range(2, 5) for j in range(2, 5)}
        active, inactive = sets_from_active(g, block)
        boundary = select_boundary_elements(active, inactive, g)
        facets = select_ghost_facets(boundary, active, g)
        assert len(facets) == len(set(facets)) == 12
        center_facets = [f for f in facets if (3, 3) in g.facet_elements(f)]
        assert len(center_facets) == 4

    def test_two_layer_strip_remains_connected(self):
        # a 2 x 4 strip: every element is boundary; the selected facets must
        # connect each of them inside the active component
        g = grid(8)
        strip = {(i, j) for i in range(2, 6) for j in range(3, 5)}
        active, inactive = sets_from_active(g, strip)
        boundary = select_boundary_elements(active, inactive, g)
        assert set(boundary) == strip
        facets = select_ghost_facets(boundary, active, g)
        reach = {boundary[0]}
        frontier = [boundary[0]]
        adj = {e: [] for e in strip}
        for f in facets:
            pair = g.facet_elements(f)
            if len(pair) == 2 and all(e in strip for e in pair):
                adj[pair[0]].append(pair[1])
                adj[pair[1]].append(pair[0])
        while frontier:
            e = frontier.pop()
            for other in adj[e]:
                if other not in reach:
                    reach.add(other)
                    frontier.append(other)
        assert reach == strip


class TestGhostMatrix:
    def two_element_matrix(self, h=1.0, scale=1.0):
        g = CartesianGrid(origin=(0.0, 0.0), spacing=(h, h), counts=(2, 1))
        mat = assemble_ghost_matrix(g, [(0, 0, 0)], scale=scale)
        return g, mat

    def test_constant_field_in_kernel(self):
        g, mat = self.two_element_matrix()
        v = np.ones(g.node_count)
        assert abs(v @ (mat @ v)) < 1e-14

    def test_affine_field_in_kernel(self):
        g, mat = self.two_element_matrix()
        coords = g.node_positions()
        v = 0.7 * coords[:, 0] - 1.3 * coords[:, 1] + 0.2
        assert abs(v @ (mat @ v)) < 1e-13

    def test_hat_ridge_energy(self):
        # field equal to 1 on the two shared-facet nodes and 0 elsewhere is a
        # 1D hat across the facet: jump = 2/h, energy = scale*h * h * (2/h)^2
        g, mat = self.two_element_matrix(h=1.0)
        v = np.zeros(g.node_count)
        v[g.node_index((1, 0))] = 1.0
        v[g.node_index((1, 1))] = 1.0
        assert v @ (mat @ v) == pytest.approx(4.0)

    def test_scaling_with_spacing(self):
        h = 0.5
        g, mat = self.two_element_matrix(h=h)
        v = np.zeros(g.node_count)
        v[g.node_index((1, 0))] = 1.0
        v[g.node_index((1, 1))] = 1.0
        # energy = h (normal spacing) * h (facet length) * (2/h)^2 = 4
        assert v @ (mat @ v) == pytest.approx(4.0)

    def test_symmetric_positive_semidefinite(self):
        g = grid(4)
        facets = [(1, 1, 0), (1, 1, 1), (2, 2, 0)]
        mat = assemble_ghost_matrix(g, facets).toarray()
        assert np.allclose(mat, mat.T)
        w = np.linalg.eigvalsh(mat)
        assert w.min() > -1e-12 * max(w.max(), 1.0)

    def test_empty_facet_list(self):
        g = grid(3)
        mat = assemble_ghost_matrix(g, [])
        assert mat.nnz == 0

    def test_negative_scale_rejected(self):
        with pytest.raises(ValueError):
            GhostParams(gamma_a=-1.0)
