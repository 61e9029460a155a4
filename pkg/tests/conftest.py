import numpy as np
import pytest

from poromp.basis import BasisKind
from poromp.ghost import GhostParams
from poromp.material import MaterialParams, MaterialPoints
from poromp.mesh import CartesianGrid


def make_grid(nx, ny, h, origin=(0.0, 0.0)) -> CartesianGrid:
    return CartesianGrid(origin=origin, spacing=(h, h), counts=(nx, ny))


def fill_cloud(coarse_grid: CartesianGrid, region=None, n_per=2) -> MaterialPoints:
    """Seed n_per x n_per particles in every fine element inside ``region``.

    ``region = (x0, x1, y0, y1)`` defaults to the full grid; it should align
    with fine-element boundaries for an exact fill.
    """
    fine = coarse_grid.subdivide()
    hx, hy = fine.spacing
    if region is None:
        region = (*[coarse_grid.origin[0], coarse_grid.upper[0]],
                  *[coarse_grid.origin[1], coarse_grid.upper[1]])
    x0, x1, y0, y1 = region
    offs = (2 * np.arange(n_per) + 1) / (2 * n_per)
    xs = []
    for j in range(fine.counts[1]):
        ey0 = fine.origin[1] + j * hy
        if ey0 < y0 - 1e-12 or ey0 + hy > y1 + 1e-12:
            continue
        for i in range(fine.counts[0]):
            ex0 = fine.origin[0] + i * hx
            if ex0 < x0 - 1e-12 or ex0 + hx > x1 + 1e-12:
                continue
            for oy in offs:
                for ox in offs:
                    xs.append((ex0 + ox * hx, ey0 + oy * hy))
    xs = np.array(xs)
    volume = (hx / n_per) * (hy / n_per)
    lp = (hx / (2 * n_per), hy / (2 * n_per))
    return MaterialPoints.from_positions(xs, volume, lp)


def default_params(**kw) -> MaterialParams:
    base = dict(K=5e5, G=6e5, n0=0.5, c1=2e-7)
    base.update(kw)
    return MaterialParams(**base)


@pytest.fixture
def small_patch():
    """3x3 coarse block grid fully filled with particles."""
    grid = make_grid(3, 3, 1.0)
    cloud = fill_cloud(grid)
    return grid, cloud, default_params()
