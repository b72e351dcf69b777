"""Legacy ASCII VTK unstructured grids (tetrahedra, cell type 10)."""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError
from .mesh import MeshGraph

VTK_TETRA = 10
FIELD_NAME = "concentration"


def _fmt(x: float) -> str:
    return repr(float(x))


def vtk_text(points: np.ndarray, cells: np.ndarray, values: np.ndarray | None = None,
             title: str = "leplume mesh") -> str:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 4)
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {len(points)} double"]
    lines += [" ".join(map(_fmt, p)) for p in points]
    lines.append(f"CELLS {len(cells)} {5 * len(cells)}")
    lines += ["4 " + " ".join(str(int(i)) for i in c) for c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += [str(VTK_TETRA)] * len(cells)
    if values is not None:
        values = np.asarray(values, dtype=float).ravel()
        if len(values) != len(points):
            raise ValueError(f"field has {len(values)} values for {len(points)} points")
        lines += [f"POINT_DATA {len(points)}", f"SCALARS {FIELD_NAME} double 1",
                  "LOOKUP_TABLE default"]
        lines += [_fmt(v) for v in values]
    return "\n".join(lines) + "\n"


def write_text_atomic(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def export_vtk(mesh: MeshGraph, field=None, path="mesh.vtk", title: str = "leplume mesh"):
    """Write ``mesh`` (and optional nodal ``field``) as a legacy VTK file."""
    values = None
    if field is not None:
        values = getattr(field, "values", field)
    write_text_atomic(path, vtk_text(mesh.points_array(), mesh.tet_array(), values, title))


def read_vtk(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Parse a legacy ASCII unstructured grid of tets: (points, cells, point scalars)."""
    try:
        tokens = Path(path).read_text().split("\n")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not an ASCII VTK file") from exc
    if len(tokens) < 4 or not tokens[0].startswith("# vtk DataFile"):
        raise FormatError(f"{path}: missing VTK header")
    if tokens[2].strip().upper() != "ASCII":
        raise FormatError(f"{path}: only ASCII files are supported")
    words = " ".join(tokens[3:]).split()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(words):
            raise FormatError(f"{path}: unexpected end of file")
        out = words[pos:pos + n]
        pos += n
        return out

    def number(tok, kind, what):
        try:
            return kind(tok)
        except ValueError:
            raise FormatError(f"{path}: bad {what} value {tok!r}") from None

    if take(2) != ["DATASET", "UNSTRUCTURED_GRID"]:
        raise FormatError(f"{path}: expected DATASET UNSTRUCTURED_GRID")
    points = cells = values = None
    types = None
    while pos < len(words):
        key = take(1)[0].upper()
        if key == "POINTS":
            n, _ = take(2)
            n = number(n, int, "point count")
            points = np.array([number(t, float, "coordinate") for t in take(3 * n)]).reshape(n, 3)
        elif key == "CELLS":
            n, size = (number(t, int, "cell count") for t in take(2))
            raw = [number(t, int, "connectivity") for t in take(size)]
            cl, i = [], 0
            for _ in range(n):
                k = raw[i]
                if k != 4:
                    raise FormatError(f"{path}: cell {len(cl)} has {k} nodes, expected 4")
                cl.append(raw[i + 1:i + 5])
                i += k + 1
            cells = np.array(cl, dtype=np.int64).reshape(-1, 4)
        elif key == "CELL_TYPES":
            n = number(take(1)[0], int, "cell count")
            types = [number(t, int, "cell type") for t in take(n)]
        elif key == "POINT_DATA":
            n = number(take(1)[0], int, "point data size")
            take(3)  # SCALARS name type [ncomp]
            if words[pos:pos + 1] and words[pos].isdigit():
                take(1)
            if words[pos:pos + 1] == ["LOOKUP_TABLE"]:
                take(2)
            values = np.array([number(t, float, "scalar") for t in take(n)])
        else:
            raise FormatError(f"{path}: unsupported section {key!r}")
    if points is None or cells is None:
        raise FormatError(f"{path}: POINTS or CELLS section missing")
    if types is not None and any(t != VTK_TETRA for t in types):
        raise FormatError(f"{path}: only tetrahedral cells (type 10) are supported")
    return points, cells, values
