"""CSV and VTK writers for run reports."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .mesh import TetMesh


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return "%.6e" % x


def pct(x) -> str:
    return "" if x is None else "%.2f" % (100.0 * float(x))


def write_csv(path, header_note: str, columns: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    """Comma-separated table preceded by one '#' line naming the normalisation."""
    with open(path, "w", newline="") as fh:
        fh.write("# " + header_note + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow(r)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_vtk(path, mesh: TetMesh, cell_data: dict, title: str = "indicator") -> None:
    """Legacy ASCII unstructured grid with per-tet scalar fields."""
    nt = mesh.n_tets
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {mesh.n_vertices} double"]
    out += ["%.17g %.17g %.17g" % tuple(p) for p in mesh.vertices]
    out.append(f"CELLS {nt} {5 * nt}")
    out += ["4 %d %d %d %d" % tuple(t) for t in mesh.tets]
    out.append(f"CELL_TYPES {nt}")
    out += ["10"] * nt
    out.append(f"CELL_DATA {nt}")
    for name, values in cell_data.items():
        values = np.asarray(values, dtype=float)
        if values.shape != (nt,):
            raise ValueError(f"cell field {name!r} must have one value per tet")
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += ["%.9e" % v for v in values]
    Path(path).write_text("\n".join(out) + "\n")


def read_vtk_cell_data(path) -> dict:
    """Parse back the CELL_DATA scalar fields written by write_vtk."""
    lines = Path(path).read_text().splitlines()
    start = next(i for i, ln in enumerate(lines) if ln.startswith("CELL_DATA"))
    n = int(lines[start].split()[1])
    out, i = {}, start + 1
    while i < len(lines):
        name = lines[i].split()[1]
        out[name] = np.array([float(v) for v in lines[i + 2:i + 2 + n]])
        i += 2 + n
    return out
