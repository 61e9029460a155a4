"""CSV and legacy-VTK output writers."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .material import MaterialPoints


def _fmt(x: float) -> str:
    # 17 significant digits round-trip any double exactly
    return f"{float(x):.17g}"


def write_isochrones_csv(path, records) -> None:
    """Columns (T, Z, P_numeric, P_analytic), one row per sample point."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["T", "Z", "P_numeric", "P_analytic"])
        for r in records:
            writer.writerow([_fmt(r.T), _fmt(r.Z), _fmt(r.p_numeric),
                             _fmt(r.p_analytic)])


def read_isochrones_csv(path):
    """Round-trip reader for the isochrone table; returns a float array."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return header, np.array(rows) if rows else np.zeros((0, 4))


def write_conditioning_csv(path, records) -> None:
    """Sweep table: basis kind, penalty scales, offset, condition numbers."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "gamma_label", "gamma_a", "gamma_c",
                         "offset", "cond_A", "cond_C"])
        for r in records:
            writer.writerow([r.kind, r.gamma_label, _fmt(r.gamma_a),
                             _fmt(r.gamma_c), _fmt(r.offset),
                             _fmt(r.cond_a), _fmt(r.cond_c)])


def write_vtk(path, cloud: MaterialPoints, fields: dict | None = None) -> None:
    """Legacy ASCII point-cloud snapshot with standard scalar fields.

    Always writes pressure, the plastic volumetric strain and the
    displacement magnitude; ``fields`` may add further per-particle scalars.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = cloud.n
    scalars = {
        "pressure": cloud.pressure,
        "eps_v_plastic": cloud.eps_v_plastic,
        "displacement_magnitude": np.linalg.norm(cloud.displacement, axis=1),
    }
    if fields:
        scalars.update(fields)

    with path.open("w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("poromp particle cloud\n")
        fh.write("ASCII\n")
        fh.write("DATASET POLYDATA\n")
        fh.write(f"POINTS {n} double\n")
        for x, y in cloud.position:
            fh.write(f"{_fmt(x)} {_fmt(y)} 0\n")
        fh.write(f"VERTICES {n} {2 * n}\n")
        for i in range(n):
            fh.write(f"1 {i}\n")
        fh.write(f"POINT_DATA {n}\n")
        for name, values in scalars.items():
            fh.write(f"SCALARS {name} double 1\n")
            fh.write("LOOKUP_TABLE default\n")
            for v in values:
                fh.write(f"{_fmt(v)}\n")
