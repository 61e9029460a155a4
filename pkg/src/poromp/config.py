"""Configuration schema, YAML parsing and scenario construction.

A config file is a YAML document with the sections shown in the packaged
examples under ``configs/``:

  scenario: block | half_ellipse
  material: {K | K_over_n0, G, n0, kappa0 | c1, rho_s0, rho_f0, g, body_force,
             alpha, gamma, p_c}            # the last three are reserved
  grid: {origin, spacing, counts}          # the coarse (pressure) grid
  basis: smpm | gimpm
  particles: {per_element}                 # per direction per fine element
  geometry: {block: [x0, x1, y0, y1]} or {center, radii, offset}
  bcs: {dirichlet: [...], tractions: [...], drains: [...], fluxes: [...]}
  ghost: {gamma_a, gamma_c}
  time: {kind, t0, ratio, steps} or {kind, dt, steps}
  solver: {newton_tol, abs_tol, max_iters, predictor, include_kc_derivative}
  output: {isochrone_times, probe_x, column_height, csv, vtk_every, vtk_prefix}
  conditioning: {samples, gamma_a_factors, gamma_c_factors}

Validation reports every problem found, not only the first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .assembly import DirichletLine, SurfaceSpec
from .basis import BasisKind
from .errors import ParseError, ValidationError
from .ghost import GhostParams
from .material import MaterialParams, MaterialPoints
from .mesh import CartesianGrid
from .solver import Scenario, SolverConfig, TimeSchedule

_AXES = {"x": 0, "y": 1}


@dataclass
class SimulationConfig:
    """Validated configuration; ``build_scenario`` turns it into a runnable."""

    scenario: str
    material: MaterialParams
    grid: CartesianGrid
    kind: BasisKind
    per_element: int
    geometry: dict
    dirichlet: list[DirichletLine]
    tractions: list[dict]
    drains: list[dict]
    fluxes: list[dict]
    ghost: GhostParams
    schedule: TimeSchedule
    solver: SolverConfig
    output: dict = field(default_factory=dict)
    conditioning: dict = field(default_factory=dict)
    reserved: dict = field(default_factory=dict)


def _get(raw, path, errors, default=None, required=False, cast=None):
    node = raw
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            if required:
                errors.append(f"missing required field '{path}'")
            return default
        node = node[part]
    if cast is not None and node is not None:
        try:
            return cast(node)
        except (TypeError, ValueError):
            errors.append(f"field '{path}' has invalid value {node!r}")
            return default
    return node


def parse_config(path) -> SimulationConfig:
    """Read and validate a config file; raises with every problem listed."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config file {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"config file {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"config file {path} must contain a mapping")
    return validate_config(raw)


def validate_config(raw: dict) -> SimulationConfig:
    errors: list[str] = []

    scenario = _get(raw, "scenario", errors, default="block", cast=str)
    if scenario not in ("block", "half_ellipse"):
        errors.append(f"scenario must be 'block' or 'half_ellipse', got {scenario!r}")

    # material
    G = _get(raw, "material.G", errors, required=True, cast=float)
    n0 = _get(raw, "material.n0", errors, required=True, cast=float)
    K = _get(raw, "material.K", errors, cast=float)
    K_over_n0 = _get(raw, "material.K_over_n0", errors, cast=float)
    if K is None and K_over_n0 is None:
        errors.append("material needs K or K_over_n0")
    kappa0 = _get(raw, "material.kappa0", errors, cast=float)
    c1 = _get(raw, "material.c1", errors, cast=float)
    if kappa0 is None and c1 is None:
        errors.append("material needs kappa0 or c1")
    rho_s0 = _get(raw, "material.rho_s0", errors, default=2000.0, cast=float)
    rho_f0 = _get(raw, "material.rho_f0", errors, default=1000.0, cast=float)
    grav = _get(raw, "material.g", errors, default=9.81, cast=float)
    body_force = _get(raw, "material.body_force", errors, default=[0.0, 0.0])

    material = None
    if not errors:
        try:
            if K is None:
                K = K_over_n0 * n0
            if c1 is None:
                c1 = kappa0 * (1.0 - n0) ** 2 / n0 ** 3
            material = MaterialParams(
                K=K, G=G, n0=n0, c1=c1, rho_s0=rho_s0, rho_f0=rho_f0,
                g=grav, body_force=tuple(np.asarray(body_force, dtype=float)),
            )
        except (ValueError, TypeError) as exc:
            errors.append(f"material: {exc}")

    # grid
    origin = _get(raw, "grid.origin", errors, default=[0.0, 0.0])
    spacing = _get(raw, "grid.spacing", errors, required=True)
    counts = _get(raw, "grid.counts", errors, required=True)
    grid = None
    if spacing is not None and counts is not None:
        try:
            grid = CartesianGrid(
                origin=tuple(float(v) for v in origin),
                spacing=tuple(float(v) for v in spacing),
                counts=tuple(int(v) for v in counts),
            )
        except (ValueError, TypeError) as exc:
            errors.append(f"grid: {exc}")

    basis_name = _get(raw, "basis", errors, default="smpm", cast=str)
    try:
        kind = BasisKind(basis_name)
    except ValueError:
        errors.append(f"basis must be 'smpm' or 'gimpm', got {basis_name!r}")
        kind = BasisKind.SMPM

    per_element = _get(raw, "particles.per_element", errors, default=2, cast=int)
    if per_element is not None and per_element < 1:
        errors.append("particles.per_element must be >= 1")

    geometry = _get(raw, "geometry", errors, default={}, required=True) or {}
    if scenario == "block" and "block" not in geometry:
        errors.append("geometry.block required for a block scenario")
    if scenario == "half_ellipse":
        for key in ("center", "radii"):
            if key not in geometry:
                errors.append(f"geometry.{key} required for a half_ellipse scenario")

    # boundary conditions
    dirichlet = []
    for i, item in enumerate(_get(raw, "bcs.dirichlet", errors, default=[]) or []):
        try:
            dirichlet.append(DirichletLine(
                field=item.get("field", "u"),
                axis=_AXES[item["axis"]],
                where=float(item["where"]),
                component=item.get("component", "both"),
                value=float(item.get("value", 0.0)),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"bcs.dirichlet[{i}]: {exc!r}")
    tractions = _get(raw, "bcs.tractions", errors, default=[]) or []
    drains = _get(raw, "bcs.drains", errors, default=[]) or []
    fluxes = _get(raw, "bcs.fluxes", errors, default=[]) or []
    for i, item in enumerate(tractions):
        if "vector" not in item:
            errors.append(f"bcs.tractions[{i}]: missing 'vector'")

    ghost = GhostParams(
        gamma_a=_get(raw, "ghost.gamma_a", errors, default=0.0, cast=float) or 0.0,
        gamma_c=_get(raw, "ghost.gamma_c", errors, default=0.0, cast=float) or 0.0,
    )

    # schedule
    t_kind = _get(raw, "time.kind", errors, default="fixed", cast=str)
    steps = _get(raw, "time.steps", errors, default=1, cast=int)
    try:
        if t_kind == "geometric":
            schedule = TimeSchedule(
                kind="geometric",
                t0=_get(raw, "time.t0", errors, required=True, cast=float) or 1.0,
                ratio=_get(raw, "time.ratio", errors, default=1.0, cast=float),
                steps=steps,
            )
        else:
            schedule = TimeSchedule(
                kind="fixed",
                dt=_get(raw, "time.dt", errors, required=True, cast=float) or 1.0,
                steps=steps,
            )
    except ValueError as exc:
        errors.append(f"time: {exc}")
        schedule = TimeSchedule()

    try:
        solver = SolverConfig(
            newton_tol=_get(raw, "solver.newton_tol", errors, default=1e-9, cast=float),
            abs_tol=_get(raw, "solver.abs_tol", errors, default=1e-12, cast=float),
            max_iters=_get(raw, "solver.max_iters", errors, default=25, cast=int),
            predictor=_get(raw, "solver.predictor", errors, default="zero", cast=str),
            include_kc_derivative=bool(
                _get(raw, "solver.include_kc_derivative", errors, default=True)),
        )
    except ValueError as exc:
        errors.append(f"solver: {exc}")
        solver = SolverConfig()

    output = _get(raw, "output", errors, default={}) or {}
    conditioning = _get(raw, "conditioning", errors, default={}) or {}
    reserved = {k: _get(raw, f"material.{k}", errors)
                for k in ("alpha", "gamma", "p_c")}

    if errors:
        raise ValidationError(errors)
    return SimulationConfig(
        scenario=scenario,
        material=material,
        grid=grid,
        kind=kind,
        per_element=per_element,
        geometry=geometry,
        dirichlet=dirichlet,
        tractions=tractions,
        drains=drains,
        fluxes=fluxes,
        ghost=ghost,
        schedule=schedule,
        solver=solver,
        output=output,
        conditioning=conditioning,
        reserved=reserved,
    )


def seed_block(coarse_grid: CartesianGrid, block, per_element: int) -> MaterialPoints:
    """Fill every fine element inside ``block = (x0, x1, y0, y1)``."""
    fine = coarse_grid.subdivide()
    hx, hy = fine.spacing
    x0, x1, y0, y1 = (float(v) for v in block)
    offs = (2 * np.arange(per_element) + 1) / (2 * per_element)
    eps = 1e-9 * min(hx, hy)
    xs = []
    for j in range(fine.counts[1]):
        ey = fine.origin[1] + j * hy
        if ey < y0 - eps or ey + hy > y1 + eps:
            continue
        for i in range(fine.counts[0]):
            ex = fine.origin[0] + i * hx
            if ex < x0 - eps or ex + hx > x1 + eps:
                continue
            for oy in offs:
                for ox in offs:
                    xs.append((ex + ox * hx, ey + oy * hy))
    positions = np.array(xs)
    volume = (hx / per_element) * (hy / per_element)
    lp = (hx / (2 * per_element), hy / (2 * per_element))
    return MaterialPoints.from_positions(positions, volume, lp)


def seed_half_ellipse(coarse_grid: CartesianGrid, center, radii,
                      per_element: int, offset: float = 0.0) -> MaterialPoints:
    """Particles of a lower half-ellipse whose whole cloud sits at ``offset``.

    The lattice is attached to the body, not the grid: shifting the offset
    translates every particle, so the overlap between particle boxes and grid
    facets genuinely varies (and certain offsets place hat-basis particles
    exactly on facets).
    """
    cloud = seed_block(
        coarse_grid,
        (coarse_grid.origin[0], coarse_grid.upper[0],
         coarse_grid.origin[1], coarse_grid.upper[1]),
        per_element,
    )
    cx = float(center[0]) + offset
    cy = float(center[1])
    rx, ry = (float(v) for v in radii)
    x = cloud.position + np.array([offset, 0.0])
    inside = ((x[:, 0] - cx) / rx) ** 2 + ((x[:, 1] - cy) / ry) ** 2 <= 1.0
    inside &= x[:, 1] <= cy + 1e-12
    return MaterialPoints.from_positions(
        x[inside], cloud.volume0[inside][0], cloud.lp0[inside][0])


def _edge_coordinate(block, side):
    x0, x1, y0, y1 = block
    return {"top": y1, "bottom": y0, "left": x0, "right": x1}[side]


def _tag_carriers(cloud: MaterialPoints, side: str, where: float) -> np.ndarray:
    axis = 1 if side in ("top", "bottom") else 0
    sign = 1.0 if side in ("top", "right") else -1.0
    edge = cloud.position[:, axis] + sign * cloud.lp[:, axis]
    return np.abs(edge - where) < 1e-9 * max(1.0, abs(where))


def build_scenario(cfg: SimulationConfig, ellipse_offset: float = 0.0) -> Scenario:
    """Instantiate grids, particles and boundary surfaces from a config."""
    if cfg.scenario == "half_ellipse":
        cloud = seed_half_ellipse(
            cfg.grid, cfg.geometry["center"], cfg.geometry["radii"],
            cfg.per_element, offset=ellipse_offset + float(cfg.geometry.get("offset", 0.0)),
        )
        block = None
    else:
        block = tuple(float(v) for v in cfg.geometry["block"])
        cloud = seed_block(cfg.grid, block, cfg.per_element)

    surfaces: list[SurfaceSpec] = []
    for item in cfg.tractions:
        side = item.get("side", "top")
        where = float(item.get("where", _edge_coordinate(block, side)))
        surfaces.append(SurfaceSpec(
            side=side,
            kind="traction",
            vector=tuple(float(v) for v in item["vector"]),
            span=tuple(float(v) for v in item["span"]) if item.get("span") else None,
            ramp_until=(float(item["ramp_until"])
                        if item.get("ramp_until") is not None else None),
            carriers=_tag_carriers(cloud, side, where),
        ))
    for item in cfg.drains:
        side = item.get("side", "top")
        where = float(item.get("where", _edge_coordinate(block, side)))
        gamma_pen = item.get("gamma_pen", "auto")
        if gamma_pen == "auto":
            gamma_pen = 5.0e6 / cfg.material.kappa0
        surfaces.append(SurfaceSpec(
            side=side,
            kind="pressure",
            pbar=float(item.get("pbar", 0.0)),
            gamma_pen=float(gamma_pen),
            span=tuple(float(v) for v in item["span"]) if item.get("span") else None,
            carriers=_tag_carriers(cloud, side, where),
        ))
    for item in cfg.fluxes:
        side = item.get("side", "top")
        where = float(item.get("where", _edge_coordinate(block, side)))
        surfaces.append(SurfaceSpec(
            side=side,
            kind="flux",
            qbar=float(item.get("qbar", 0.0)),
            span=tuple(float(v) for v in item["span"]) if item.get("span") else None,
            carriers=_tag_carriers(cloud, side, where),
        ))

    meta = dict(cfg.output)
    meta["scenario"] = cfg.scenario
    return Scenario(
        coarse_grid=cfg.grid,
        material=cfg.material,
        kind=cfg.kind,
        cloud=cloud,
        dirichlet=list(cfg.dirichlet),
        surfaces=surfaces,
        ghost=cfg.ghost,
        solver=cfg.solver,
        schedule=cfg.schedule,
        meta=meta,
    )
