"""Shape functions on the background grids.

Both families are tensor products of one-dimensional functions: the standard
hat (two branches) and its convolution with a particle box of half-length
``lp`` (five branches, piecewise quadratic, C1).  The batched samplers return
fixed-size stencils so that assembly can vectorize over the particle cloud;
padded slots carry exactly zero values.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import OutOfGrid
from .mesh import CartesianGrid, NodeId


class BasisKind(str, Enum):
    SMPM = "smpm"
    GIMPM = "gimpm"


@dataclass
class ShapeSample:
    """Basis values and spatial gradients of one grid at one point."""

    node_ids: list[NodeId]
    values: np.ndarray
    gradients: np.ndarray  # (n, 2), units 1/m


@dataclass
class BatchedSamples:
    """Fixed-width stencil samples for a cloud of points on one grid.

    ``node_linear`` holds linear node indices; padded (zero-value) entries
    point at node 0 and are harmless because their values and gradients are 0.
    """

    node_linear: np.ndarray  # (N, K) int
    values: np.ndarray       # (N, K)
    gradients: np.ndarray    # (N, K, 2)


def smpm_1d(xi, h: float):
    """Hat value/derivative at offset ``xi`` from a node, spacing ``h``."""
    xi = np.asarray(xi, dtype=float)
    value = np.where(
        (xi > -h) & (xi <= 0.0),
        1.0 + xi / h,
        np.where((xi > 0.0) & (xi <= h), 1.0 - xi / h, 0.0),
    )
    deriv = np.where(
        (xi > -h) & (xi <= 0.0),
        1.0 / h,
        np.where((xi > 0.0) & (xi <= h), -1.0 / h, 0.0),
    )
    return value, deriv


def gimp_1d(xi, h: float, lp: float):
    """Box-convolved hat value/derivative; requires ``0 < lp <= h/2``."""
    if not (0.0 < lp <= h / 2.0):
        raise ValueError(f"particle half-length {lp} outside (0, {h / 2}]")
    xi = np.asarray(xi, dtype=float)
    value = np.zeros_like(xi)
    deriv = np.zeros_like(xi)

    b1 = (xi > -h - lp) & (xi <= -h + lp)
    b2 = (xi > -h + lp) & (xi <= -lp)
    b3 = (xi > -lp) & (xi <= lp)
    b4 = (xi > lp) & (xi <= h - lp)
    b5 = (xi > h - lp) & (xi <= h + lp)

    value = np.where(b1, (h + lp + xi) ** 2 / (4.0 * h * lp), value)
    deriv = np.where(b1, (h + lp + xi) / (2.0 * h * lp), deriv)
    value = np.where(b2, 1.0 + xi / h, value)
    deriv = np.where(b2, 1.0 / h, deriv)
    value = np.where(b3, 1.0 - (xi ** 2 + lp ** 2) / (2.0 * h * lp), value)
    deriv = np.where(b3, -xi / (h * lp), deriv)
    value = np.where(b4, 1.0 - xi / h, value)
    deriv = np.where(b4, -1.0 / h, deriv)
    value = np.where(b5, (h + lp - xi) ** 2 / (4.0 * h * lp), value)
    deriv = np.where(b5, -(h + lp - xi) / (2.0 * h * lp), deriv)
    return value, deriv


def _check_inside(grid: CartesianGrid, xs: np.ndarray) -> None:
    lo = np.asarray(grid.origin)
    hi = np.asarray(grid.upper)
    tol = 1e-12 * np.maximum(np.abs(hi - lo), 1.0)
    if np.any(xs < lo - tol) or np.any(xs > hi + tol):
        bad = np.argmax(np.any((xs < lo - tol) | (xs > hi + tol), axis=1))
        raise OutOfGrid(f"point {xs[bad]} outside grid box {lo}..{hi}")


def sample_smpm(grid: CartesianGrid, xs: np.ndarray) -> BatchedSamples:
    """Hat-basis samples: 2x2 stencil of the containing element."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    elems = grid.locate_many(xs)  # also checks bounds
    hx, hy = grid.spacing
    nxn, _ = grid.node_counts

    vals_1d = []
    ders_1d = []
    for axis, h in ((0, hx), (1, hy)):
        node_coord = np.asarray(grid.origin)[axis] + elems[:, axis] * h
        xi0 = xs[:, axis] - node_coord
        v0, d0 = smpm_1d(xi0, h)
        v1, d1 = smpm_1d(xi0 - h, h)
        vals_1d.append(np.stack([v0, v1], axis=1))  # (N, 2)
        ders_1d.append(np.stack([d0, d1], axis=1))

    # tensor product over the 4 corner nodes, order (di, dj) in C layout
    di = np.array([0, 1, 0, 1])
    dj = np.array([0, 0, 1, 1])
    vx = vals_1d[0][:, di]
    vy = vals_1d[1][:, dj]
    dx = ders_1d[0][:, di]
    dy = ders_1d[1][:, dj]
    values = vx * vy
    gradients = np.stack([dx * vy, vx * dy], axis=2)
    node_linear = (elems[:, 0:1] + di) + (elems[:, 1:2] + dj) * nxn
    return BatchedSamples(node_linear.astype(np.int64), values, gradients)


def sample_gimp(grid: CartesianGrid, xs: np.ndarray, lps: np.ndarray) -> BatchedSamples:
    """Convolved-basis samples: 3x3 stencil (support spans at most 3 nodes/axis).

    The particle box must stay inside the grid; a support that would need a
    node beyond the border raises :class:`OutOfGrid`.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    lps = np.atleast_2d(np.asarray(lps, dtype=float))
    _check_inside(grid, xs)
    nxn, _ = grid.node_counts

    axis_vals = []
    axis_ders = []
    axis_nodes = []
    for axis, (h, ncount) in enumerate(
        zip(grid.spacing, grid.node_counts)
    ):
        x = xs[:, axis]
        lp = lps[:, axis]
        if np.any(lp <= 0.0) or np.any(lp > h / 2.0 + 1e-15):
            raise ValueError("particle half-length outside (0, h/2]")
        base = np.floor((x - lp - np.asarray(grid.origin)[axis]) / h).astype(np.int64)
        ks = base[:, None] + np.arange(3)[None, :]  # (N, 3)
        node_coord = np.asarray(grid.origin)[axis] + ks * h
        xi = x[:, None] - node_coord
        v = np.zeros_like(xi)
        d = np.zeros_like(xi)
        # branch formulas inlined so lp can vary per particle
        lpc = lp[:, None]
        b1 = (xi > -h - lpc) & (xi <= -h + lpc)
        b2 = (xi > -h + lpc) & (xi <= -lpc)
        b3 = (xi > -lpc) & (xi <= lpc)
        b4 = (xi > lpc) & (xi <= h - lpc)
        b5 = (xi > h - lpc) & (xi <= h + lpc)
        v = np.where(b1, (h + lpc + xi) ** 2 / (4.0 * h * lpc), v)
        d = np.where(b1, (h + lpc + xi) / (2.0 * h * lpc), d)
        v = np.where(b2, 1.0 + xi / h, v)
        d = np.where(b2, 1.0 / h, d)
        v = np.where(b3, 1.0 - (xi ** 2 + lpc ** 2) / (2.0 * h * lpc), v)
        d = np.where(b3, -xi / (h * lpc), d)
        v = np.where(b4, 1.0 - xi / h, v)
        d = np.where(b4, -1.0 / h, d)
        v = np.where(b5, (h + lpc - xi) ** 2 / (4.0 * h * lpc), v)
        d = np.where(b5, -(h + lpc - xi) / (2.0 * h * lpc), d)

        valid = (ks >= 0) & (ks < ncount)
        if np.any(np.abs(v[~valid]) > 1e-12):
            raise OutOfGrid("particle support box crosses the grid border")
        v = np.where(valid, v, 0.0)
        d = np.where(valid, d, 0.0)
        axis_vals.append(v)
        axis_ders.append(d)
        axis_nodes.append(np.clip(ks, 0, ncount - 1))

    di = np.tile(np.arange(3), 3)       # (9,) x-slot per stencil entry
    dj = np.repeat(np.arange(3), 3)     # (9,) y-slot
    vx = axis_vals[0][:, di]
    vy = axis_vals[1][:, dj]
    dx = axis_ders[0][:, di]
    dy = axis_ders[1][:, dj]
    values = vx * vy
    gradients = np.stack([dx * vy, vx * dy], axis=2)
    node_linear = axis_nodes[0][:, di] + axis_nodes[1][:, dj] * nxn
    return BatchedSamples(node_linear.astype(np.int64), values, gradients)


def sample_points(grid: CartesianGrid, kind: BasisKind, xs: np.ndarray,
                  lps: np.ndarray | None = None) -> BatchedSamples:
    if kind == BasisKind.SMPM:
        return sample_smpm(grid, xs)
    if lps is None:
        raise ValueError("generalized-interpolation sampling needs lp")
    return sample_gimp(grid, xs, lps)


def eval_basis(grid: CartesianGrid, kind: BasisKind, x,
               lp=None) -> ShapeSample:
    """All nodes with nonzero value at ``x``, values and spatial gradients."""
    xs = np.asarray(x, dtype=float).reshape(1, 2)
    lps = None if lp is None else np.asarray(lp, dtype=float).reshape(1, 2)
    batch = sample_points(grid, kind, xs, lps)
    keep = np.abs(batch.values[0]) > 0.0
    nxn, _ = grid.node_counts
    ids = [
        (int(k % nxn), int(k // nxn))
        for k in batch.node_linear[0][keep]
    ]
    return ShapeSample(
        node_ids=ids,
        values=batch.values[0][keep].copy(),
        gradients=batch.gradients[0][keep].copy(),
    )
