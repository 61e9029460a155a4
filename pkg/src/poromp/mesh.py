"""Background Cartesian grids, topology queries and active-element tracking.

Two axis-aligned uniform grids overlap: a coarse one carrying the pressure
field and a fine one at exactly half the spacing carrying the displacement
field.  Elements and nodes are addressed by lattice pairs ``(i, j)``; facets by
``(i, j, axis)`` where ``(i, j)`` is the element on the lower side of the facet
along ``axis``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfGrid

ElementId = tuple[int, int]
NodeId = tuple[int, int]
# Facet between elements (i, j) and (i+1, j) for axis 0, or (i, j) and
# (i, j+1) for axis 1.  Border facets use i = -1 (or j = -1) on the low side.
FacetId = tuple[int, int, int]


@dataclass(frozen=True)
class CartesianGrid:
    """Uniform quadrilateral grid with ``counts`` elements per axis."""

    origin: tuple[float, float]
    spacing: tuple[float, float]
    counts: tuple[int, int]

    def __post_init__(self):
        if not all(s > 0.0 for s in self.spacing):
            raise ValueError("grid spacing must be strictly positive")
        if not all(int(c) > 0 for c in self.counts):
            raise ValueError("grid element counts must be positive")

    @property
    def node_counts(self) -> tuple[int, int]:
        return (self.counts[0] + 1, self.counts[1] + 1)

    @property
    def element_count(self) -> int:
        return self.counts[0] * self.counts[1]

    @property
    def node_count(self) -> int:
        nx, ny = self.node_counts
        return nx * ny

    @property
    def upper(self) -> tuple[float, float]:
        return (
            self.origin[0] + self.spacing[0] * self.counts[0],
            self.origin[1] + self.spacing[1] * self.counts[1],
        )

    def subdivide(self) -> "CartesianGrid":
        """The fine grid: same extent, half the spacing, 4 children per cell."""
        return CartesianGrid(
            origin=self.origin,
            spacing=(self.spacing[0] / 2.0, self.spacing[1] / 2.0),
            counts=(self.counts[0] * 2, self.counts[1] * 2),
        )

    # --- index conversions -------------------------------------------------

    def node_index(self, node: NodeId) -> int:
        nx, _ = self.node_counts
        return node[0] + node[1] * nx

    def node_position(self, node: NodeId) -> np.ndarray:
        return np.array(
            [
                self.origin[0] + node[0] * self.spacing[0],
                self.origin[1] + node[1] * self.spacing[1],
            ]
        )

    def node_positions(self) -> np.ndarray:
        """(node_count, 2) array of coordinates, linear node-index order."""
        nx, ny = self.node_counts
        xs = self.origin[0] + self.spacing[0] * np.arange(nx)
        ys = self.origin[1] + self.spacing[1] * np.arange(ny)
        gx, gy = np.meshgrid(xs, ys, indexing="xy")
        return np.column_stack([gx.ravel(), gy.ravel()])

    def element_index(self, elem: ElementId) -> int:
        return elem[0] + elem[1] * self.counts[0]

    def all_elements(self):
        for j in range(self.counts[1]):
            for i in range(self.counts[0]):
                yield (i, j)

    def valid_element(self, elem: ElementId) -> bool:
        return 0 <= elem[0] < self.counts[0] and 0 <= elem[1] < self.counts[1]

    # --- topology ----------------------------------------------------------

    def element_nodes(self, elem: ElementId) -> list[NodeId]:
        i, j = elem
        return [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)]

    def element_facets(self, elem: ElementId) -> list[FacetId]:
        i, j = elem
        return [(i - 1, j, 0), (i, j, 0), (i, j - 1, 1), (i, j, 1)]

    def closure(self, elem: ElementId) -> tuple[list[NodeId], list[FacetId]]:
        return self.element_nodes(elem), self.element_facets(elem)

    def facet_elements(self, facet: FacetId) -> list[ElementId]:
        i, j, axis = facet
        lower = (i, j)
        upper = (i + 1, j) if axis == 0 else (i, j + 1)
        return [e for e in (lower, upper) if self.valid_element(e)]

    def facet_nodes(self, facet: FacetId) -> list[NodeId]:
        i, j, axis = facet
        if axis == 0:
            return [(i + 1, j), (i + 1, j + 1)]
        return [(i, j + 1), (i + 1, j + 1)]

    def neighbor(self, elem: ElementId, facet: FacetId) -> ElementId | None:
        """The element on the other side of ``facet``, or None on the border."""
        for other in self.facet_elements(facet):
            if other != elem:
                return other
        return None

    # --- point location ----------------------------------------------------

    def locate_many(self, xs: np.ndarray) -> np.ndarray:
        """Vectorized :func:`locate_element`; returns (N, 2) int lattice pairs."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        lo = np.asarray(self.origin)
        hi = np.asarray(self.upper)
        tol = 1e-12 * np.maximum(np.abs(hi - lo), 1.0)
        inside = np.all(xs >= lo - tol, axis=1) & np.all(xs <= hi + tol, axis=1)
        if not np.all(inside):
            bad = np.argmax(~inside)
            raise OutOfGrid(f"point {xs[bad]} outside grid box {lo}..{hi}")
        # Half-open cells [lo, hi): a point exactly on an internal facet gets
        # the higher-index element; the closing border clamps back inside.
        idx = np.floor((xs - lo) / np.asarray(self.spacing)).astype(np.int64)
        idx = np.minimum(np.maximum(idx, 0), np.asarray(self.counts) - 1)
        return idx


def locate_element(grid: CartesianGrid, x) -> ElementId:
    """Element whose half-open cell contains ``x`` (ties go to higher index)."""
    idx = grid.locate_many(np.asarray(x, dtype=float).reshape(1, 2))[0]
    return (int(idx[0]), int(idx[1]))


def coarse_of(fine_element: ElementId) -> ElementId:
    """Coarse element containing a fine element (integer-halved lattice)."""
    return (fine_element[0] // 2, fine_element[1] // 2)


@dataclass
class ActiveSets:
    """Partition of the grid into active/inactive elements.

    ``boundary`` and ``ghost_facets`` start empty and are filled by the ghost
    penalty selection (Algorithms operating on facets shared with inactive
    elements).
    """

    active: set[ElementId]
    inactive: set[ElementId]
    boundary: list[ElementId] = field(default_factory=list)
    ghost_facets: list[FacetId] = field(default_factory=list)


def _gimp_element_range(coord: np.ndarray, lp: np.ndarray, origin: float,
                        h: float, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive element index range overlapped by [coord-lp, coord+lp].

    Overlaps below ~1e-9 of the spacing are treated as touching, not
    overlapping: grazing supports must never activate an element whose basis
    rows they cannot populate beyond roundoff.
    """
    eps = 1e-9
    lo = np.floor((coord - lp - origin) / h + eps).astype(np.int64)
    hi = np.ceil((coord + lp - origin) / h - eps).astype(np.int64) - 1
    lo = np.clip(lo, 0, count - 1)
    hi = np.clip(hi, 0, count - 1)
    return lo, hi


def compute_active_sets(grid: CartesianGrid, mps, basis_kind) -> ActiveSets:
    """Mark elements whose overlap with some particle support is non-empty.

    For the hat basis an element is active iff it contains a particle; for the
    generalized-interpolation basis iff the particle box ``x +- lp`` intersects
    it with positive measure (per axis).
    """
    from .basis import BasisKind  # local import, avoids cycle

    positions = np.atleast_2d(np.asarray(mps.position, dtype=float))
    active: set[ElementId] = set()
    if basis_kind == BasisKind.SMPM:
        idx = grid.locate_many(positions)
        for i, j in np.unique(idx, axis=0):
            active.add((int(i), int(j)))
    else:
        lps = np.atleast_2d(np.asarray(mps.lp, dtype=float))
        lo = np.asarray(grid.origin)
        hi = np.asarray(grid.upper)
        tol = 1e-12 * np.maximum(np.abs(hi - lo), 1.0)
        if np.any(positions < lo - tol) or np.any(positions > hi + tol):
            raise OutOfGrid("particle position outside grid box")
        ilo, ihi = _gimp_element_range(
            positions[:, 0], lps[:, 0], grid.origin[0], grid.spacing[0], grid.counts[0]
        )
        jlo, jhi = _gimp_element_range(
            positions[:, 1], lps[:, 1], grid.origin[1], grid.spacing[1], grid.counts[1]
        )
        for a, b, c, d in zip(ilo, ihi, jlo, jhi):
            for j in range(c, d + 1):
                for i in range(a, b + 1):
                    active.add((int(i), int(j)))
    inactive = {e for e in grid.all_elements()} - active
    return ActiveSets(active=active, inactive=inactive)


def coarse_active_from_fine(fine_active: set[ElementId]) -> set[ElementId]:
    """Coarse activity induced from a fine active set (comparison helper)."""
    return {coarse_of(e) for e in fine_active}


def active_nodes(grid: CartesianGrid, active: set[ElementId]) -> np.ndarray:
    """Sorted linear indices of all nodes in the closure of active elements."""
    ids = set()
    for elem in active:
        for node in grid.element_nodes(elem):
            ids.add(grid.node_index(node))
    return np.array(sorted(ids), dtype=np.int64)
