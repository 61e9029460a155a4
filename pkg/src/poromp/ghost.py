"""Face ghost penalty: boundary-element/facet selection and the jump matrix.

Selection walks active elements (lattice order) and keeps facets connecting
boundary elements to each other or to the active interior; grid-border facets
never qualify because they have no inactive neighbor.  The penalty integrates
jumps of the normal gradient of the grid's nodal hat functions across each
selected facet with Gauss-Legendre points seeded on the facet.  The hat basis
is used for the jumps with both particle-basis families: the convolved basis
is C1 in the bulk, so penalizing its own gradients would vanish identically,
while the hat jumps control the same nodal coefficients on either family.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import CartesianGrid, ElementId, FacetId


@dataclass(frozen=True)
class GhostParams:
    """Scales of the penalty added to the two primary equations.

    ``gamma_a`` multiplies the displacement-grid term (stress units);
    ``gamma_c`` the pressure-grid term (units of conductivity over gravity).
    Zero disables the corresponding term.
    """

    gamma_a: float = 0.0
    gamma_c: float = 0.0
    quadrature_order: int = 2

    def __post_init__(self):
        if self.gamma_a < 0 or self.gamma_c < 0:
            raise ValueError("ghost penalty scales must be non-negative")


def select_boundary_elements(active: set[ElementId], inactive: set[ElementId],
                             grid: CartesianGrid) -> list[ElementId]:
    """Active elements sharing at least one facet with an inactive element."""
    boundary = []
    for elem in sorted(active, key=lambda e: (e[1], e[0])):
        for facet in grid.element_facets(elem):
            neighbor = grid.neighbor(elem, facet)
            if neighbor is not None and neighbor in inactive:
                boundary.append(elem)
                break
    return boundary


def select_ghost_facets(boundary: list[ElementId], active: set[ElementId],
                        grid: CartesianGrid) -> list[FacetId]:
    """Facets between two boundary elements, or boundary and active interior."""
    boundary_set = set(boundary)
    facets: list[FacetId] = []
    seen: set[FacetId] = set()
    for elem in boundary:
        for facet in grid.element_facets(elem):
            if facet in seen:
                continue
            neighbor = grid.neighbor(elem, facet)
            if neighbor is None:
                continue
            if neighbor in boundary_set or (neighbor in active):
                seen.add(facet)
                facets.append(facet)
    return facets


def _gauss_points(order: int):
    # nodes/weights on [-1, 1]
    return np.polynomial.legendre.leggauss(order)


def assemble_ghost_matrix(grid: CartesianGrid, facets: list[FacetId],
                          scale: float = 1.0,
                          length_scale: float | None = None,
                          quadrature_order: int = 2) -> sp.csr_matrix:
    """Symmetric PSD matrix of facet-jump products over all grid nodes.

    Entry (a, b) accumulates ``scale * l * integral([[dN_a/dn]] [[dN_b/dn]])``
    per facet, where ``l`` is ``length_scale`` or, when None, the grid spacing
    along the facet normal.  Nodal fields with facet-continuous normal
    gradients (all globally affine fields) lie in the kernel.
    """
    n_nodes = grid.node_count
    if not facets:
        return sp.csr_matrix((n_nodes, n_nodes))

    gp, gw = _gauss_points(quadrature_order)
    rows, cols, vals = [], [], []
    for facet in facets:
        i, j, axis = facet
        if len(grid.facet_elements(facet)) != 2:
            continue  # border facets carry no jump by construction
        tang = 1 - axis
        h_n = grid.spacing[axis]
        h_t = grid.spacing[tang]
        ell = h_n if length_scale is None else length_scale

        # six nodes: slot k in {0,1,2} across the facet, slot r in {0,1} along
        slots = [(k, r) for r in range(2) for k in range(3)]
        if axis == 0:
            node_ids = [grid.node_index((i + k, j + r)) for k, r in slots]
        else:
            node_ids = [grid.node_index((i + r, j + k)) for k, r in slots]
        node_ids = np.array(node_ids, dtype=np.int64)

        # hats give a normal-gradient jump pattern [-1, 2, -1]/h_n across
        across = np.array([-1.0, 2.0, -1.0]) / h_n

        m_local = np.zeros((6, 6))
        for p, w in zip(gp, gw):
            s = 0.5 * (p + 1.0)  # local tangent coordinate in [0, 1]
            tang_vals = (1.0 - s, s)
            jump = np.array([tang_vals[r] * across[k] for k, r in slots])
            m_local += (0.5 * h_t * w) * np.outer(jump, jump)

        m_local *= scale * ell
        for a in range(6):
            rows.append(np.full(6, node_ids[a]))
            cols.append(node_ids)
            vals.append(m_local[a])

    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_nodes, n_nodes),
    )
    return mat.tocsr()
