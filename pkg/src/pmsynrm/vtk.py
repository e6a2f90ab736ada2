"""Legacy ASCII VTK output for triangle meshes."""
from __future__ import annotations

import numpy as np

from .fem import MachineModel, StateSolution
from .geometry import rotate_points

_VTK_TRIANGLE = 5


def write_vtk(path, nodes: np.ndarray, triangles: np.ndarray, point_data: dict | None = None,
              cell_data: dict | None = None, title: str = "pmsynrm") -> None:
    """Write an UNSTRUCTURED_GRID with scalar point and cell fields."""
    nodes = np.asarray(nodes, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(nodes)} double"]
    lines += [f"{x:.10g} {y:.10g} 0" for x, y in nodes]
    lines.append(f"CELLS {len(triangles)} {4 * len(triangles)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in triangles]
    lines.append(f"CELL_TYPES {len(triangles)}")
    lines += [str(_VTK_TRIANGLE)] * len(triangles)
    for header, data, n in (("POINT_DATA", point_data, len(nodes)), ("CELL_DATA", cell_data, len(triangles))):
        if not data:
            continue
        lines.append(f"{header} {n}")
        for name, values in data.items():
            values = np.asarray(values, dtype=float).ravel()
            if len(values) != n:
                raise ValueError(f"field {name!r} has {len(values)} values, expected {n}")
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines += [f"{v:.10g}" for v in values]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_state_vtk(path, model: MachineModel, state: StateSolution, extra_cells: dict | None = None) -> None:
    """Both meshes in the stator frame: point field u, cell fields |B| and region tag."""
    st, ro = model.stator, model.rotor
    nodes = np.concatenate([st.nodes, rotate_points(ro.nodes, state.theta)])
    tris = np.concatenate([st.triangles, ro.triangles + st.n_nodes])
    u = np.concatenate([state.U[model.stator_dofs], state.U[model.rotor_dofs]])
    cells = {"B_abs": model.flux_density(state),
             "region": np.concatenate([st.tags, ro.tags]).astype(float)}
    for name, vals in (extra_cells or {}).items():
        cells[name] = vals
    write_vtk(path, nodes, tris, {"u": u}, cells)


def write_design_vtk(path, model: MachineModel, fields: dict) -> None:
    """Per-design-element fields on the rotor design region (reference frame)."""
    ro = model.rotor
    tris = ro.triangles[model.design_elements]
    used, inv = np.unique(tris, return_inverse=True)
    write_vtk(path, ro.nodes[used], inv.reshape(tris.shape), None, fields)
