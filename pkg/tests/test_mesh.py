import numpy as np
import pytest

from poromp.basis import BasisKind
from poromp.errors import OutOfGrid
from poromp.material import MaterialPoints
from poromp.mesh import (
    CartesianGrid,
    coarse_active_from_fine,
    coarse_of,
    compute_active_sets,
    locate_element,
)


def unit_grid(nx=4, ny=4, h=1.0):
    return CartesianGrid(origin=(0.0, 0.0), spacing=(h, h), counts=(nx, ny))


def cloud_at(points, lp=0.1, volume=0.01):
    return MaterialPoints.from_positions(points, volume, (lp, lp))


class TestLocate:
    def test_interior_point(self):
        assert locate_element(unit_grid(), (0.5, 0.5)) == (0, 0)

    def test_point_on_internal_facet_goes_to_higher_element(self):
        assert locate_element(unit_grid(), (1.0, 0.5)) == (1, 0)

    def test_outside_raises(self):
        with pytest.raises(OutOfGrid):
            locate_element(unit_grid(), (-0.1, 0.5))

    def test_closing_border_stays_inside(self):
        grid = unit_grid(nx=3, ny=3)
        assert locate_element(grid, (3.0, 3.0)) == (2, 2)


class TestCoarseOf:
    @pytest.mark.parametrize(
        "fine,coarse",
        [((0, 0), (0, 0)), ((3, 2), (1, 1)), ((5, 5), (2, 2))],
    )
    def test_floor_division(self, fine, coarse):
        assert coarse_of(fine) == coarse

    def test_fine_subdivision_geometry(self):
        coarse = unit_grid(3, 2, h=0.5)
        fine = coarse.subdivide()
        assert fine.counts == (6, 4)
        assert fine.spacing == (0.25, 0.25)
        assert fine.upper == coarse.upper


class TestActiveSets:
    def test_single_point_support(self):
        grid = unit_grid(5, 5)
        sets = compute_active_sets(grid, cloud_at([(2.5, 2.5)]), BasisKind.SMPM)
        assert sets.active == {(2, 2)}
        assert (2, 2) not in sets.inactive
        assert len(sets.active) + len(sets.inactive) == grid.element_count

    def test_box_inside_one_cell(self):
        grid = unit_grid(5, 5)
        sets = compute_active_sets(grid, cloud_at([(2.5, 2.5)], lp=0.4), BasisKind.GIMPM)
        assert sets.active == {(2, 2)}

    def test_box_straddling_a_corner(self):
        grid = unit_grid(5, 5)
        sets = compute_active_sets(grid, cloud_at([(2.1, 2.1)], lp=0.3), BasisKind.GIMPM)
        assert sets.active == {(1, 1), (2, 1), (1, 2), (2, 2)}

    def test_permutation_invariance(self):
        grid = unit_grid(6, 6)
        rng = np.random.default_rng(7)
        pts = rng.uniform(0.5, 5.5, size=(20, 2))
        a = compute_active_sets(grid, cloud_at(pts), BasisKind.SMPM)
        b = compute_active_sets(grid, cloud_at(pts[::-1]), BasisKind.SMPM)
        assert a.active == b.active

    def test_out_of_grid_propagates(self):
        grid = unit_grid(2, 2)
        with pytest.raises(OutOfGrid):
            compute_active_sets(grid, cloud_at([(5.0, 0.5)]), BasisKind.SMPM)


class TestGridConsistency:
    def test_fine_location_consistent_with_coarse(self):
        coarse = unit_grid(4, 4, h=0.5)
        fine = coarse.subdivide()
        rng = np.random.default_rng(3)
        for x in rng.uniform(0.0, 2.0, size=(50, 2)):
            assert coarse_of(locate_element(fine, x)) == locate_element(coarse, x)

    def test_coarse_active_contains_image_of_fine_active(self):
        coarse = unit_grid(6, 6, h=0.5)
        fine = coarse.subdivide()
        rng = np.random.default_rng(11)
        pts = rng.uniform(0.4, 2.6, size=(30, 2))
        cloud = cloud_at(pts, lp=0.05)
        fine_sets = compute_active_sets(fine, cloud, BasisKind.GIMPM)
        coarse_sets = compute_active_sets(coarse, cloud, BasisKind.GIMPM)
        assert coarse_active_from_fine(fine_sets.active) <= coarse_sets.active


class TestTopology:
    def test_closure_has_four_nodes_and_facets(self):
        grid = unit_grid(3, 3)
        nodes, facets = grid.closure((1, 1))
        assert len(nodes) == 4 and len(set(nodes)) == 4
        assert len(facets) == 4 and len(set(facets)) == 4

    def test_interior_facet_has_two_elements(self):
        grid = unit_grid(3, 3)
        assert grid.facet_elements((0, 1, 0)) == [(0, 1), (1, 1)]
        assert grid.facet_elements((-1, 1, 0)) == [(0, 1)]
