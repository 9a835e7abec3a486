"""Minimal legacy-VTK (ASCII) unstructured-grid writer."""

from __future__ import annotations

import numpy as np

VTK_LINE = 3
VTK_QUAD = 9
VTK_TETRA = 10
VTK_HEXAHEDRON = 12

# our corner index c = b0 + 2 b1 + 4 b2  ->  VTK hexahedron ordering
HEX_CORNER_ORDER = [0, 1, 3, 2, 4, 5, 7, 6]


def write_unstructured_grid(
    path,
    points: np.ndarray,
    cells: np.ndarray,
    cell_type: int,
    point_data: dict | None = None,
    cell_data: dict | None = None,
    title: str = "dualcell",
) -> None:
    """Write points and same-type cells; data arrays may be scalars or 3-vectors."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    cells = np.asarray(cells, dtype=np.int64)
    n, k = cells.shape
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {len(points)} double")
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in points]
    lines.append(f"CELLS {n} {n * (k + 1)}")
    lines += [f"{k} " + " ".join(map(str, c)) for c in cells.tolist()]
    lines.append(f"CELL_TYPES {n}")
    lines += [str(cell_type)] * n
    for section, data, count in (("POINT_DATA", point_data, len(points)), ("CELL_DATA", cell_data, n)):
        if not data:
            continue
        lines.append(f"{section} {count}")
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 2 and arr.shape[1] == 3:
                lines.append(f"VECTORS {name} double")
                lines += [f"{a:.10g} {b:.10g} {c:.10g}" for a, b, c in arr]
            else:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines += [f"{a:.10g}" for a in arr.ravel()]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
