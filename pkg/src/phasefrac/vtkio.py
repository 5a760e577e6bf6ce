"""Legacy ASCII VTK and CSV artifact writers.

Formatting is bit-stable: every float is printed with nine significant
digits of scientific notation ("%.8e"), so repeated runs of a deterministic
simulation produce byte-identical files.
"""

from __future__ import annotations

import os
from typing import Mapping

import numpy as np

from .mesh import Mesh

__all__ = ["write_vtk", "write_csv"]

_CELL_TYPE = {2: 5, 3: 10}  # VTK triangle / tetrahedron


def _fmt(x: float) -> str:
    return f"{x:.8e}"


def write_vtk(
    mesh: Mesh,
    point_fields: Mapping[str, np.ndarray],
    cell_fields: Mapping[str, np.ndarray],
    path: str | os.PathLike,
) -> None:
    """Write an unstructured-grid legacy VTK file.

    Point fields of length ``n_nodes`` are written as scalars, fields of
    length ``dim * n_nodes`` as vectors (z padded with zeros in 2D).  Cell
    fields must have length ``n_cells``.
    """
    n, m, dim = mesh.n_nodes, mesh.n_cells, mesh.dim
    for name, arr in point_fields.items():
        if len(arr) not in (n, dim * n):
            raise ValueError(f"point field {name!r} has inconsistent length")
    for name, arr in cell_fields.items():
        if len(arr) != m:
            raise ValueError(f"cell field {name!r} has inconsistent length")

    lines: list[str] = [
        "# vtk DataFile Version 3.0",
        "phasefrac output",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    coords = np.zeros((n, 3))
    coords[:, :dim] = mesh.nodes
    for p in coords:
        lines.append(" ".join(_fmt(v) for v in p))

    k = dim + 1
    lines.append(f"CELLS {m} {m * (k + 1)}")
    for row in mesh.cells:
        lines.append(f"{k} " + " ".join(str(int(v)) for v in row))
    lines.append(f"CELL_TYPES {m}")
    lines.extend([str(_CELL_TYPE[dim])] * m)

    if point_fields:
        lines.append(f"POINT_DATA {n}")
        for name, arr in point_fields.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.size == n:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(_fmt(v) for v in arr)
            else:
                lines.append(f"VECTORS {name} double")
                vec = np.zeros((n, 3))
                vec[:, :dim] = arr.reshape(n, dim)
                lines.extend(" ".join(_fmt(v) for v in row) for row in vec)

    if cell_fields:
        lines.append(f"CELL_DATA {m}")
        for name, arr in cell_fields.items():
            arr = np.asarray(arr, dtype=np.float64)
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(_fmt(v) for v in arr)

    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_csv(record, path: str | os.PathLike) -> None:
    """Write the per-step load-displacement table.

    Columns: step, load_mm, reaction_kN, iterations, n_cells, eta_global.
    """
    steps = record.steps
    if not steps:
        raise ValueError("cannot write a CSV for an empty run record")
    lines = ["step,load_mm,reaction_kN,iterations,n_cells,eta_global"]
    for i, rep in enumerate(steps, start=1):
        lines.append(
            f"{i},{_fmt(rep.load_value)},{_fmt(rep.reaction)},"
            f"{rep.iterations},{rep.n_cells},{_fmt(rep.eta_global)}"
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
