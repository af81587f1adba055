"""Legacy ASCII VTK (version 3.0) export of meshes and solution fields."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

from .femcore import DofLayout, State
from .mesh import MultiregionMesh, Region

VTK_TRIANGLE = 5


def _fmt(values: np.ndarray) -> str:
    # adding 0.0 turns -0.0 into 0.0 so zero fields print uniformly
    flat = np.asarray(values, dtype=float).ravel() + 0.0
    return "\n".join(f"{v:.17g}" for v in flat)


def nodal(fd, values: np.ndarray, n_nodes: int) -> np.ndarray:
    """Scatter the values of a continuous field to all mesh nodes, zero outside its support."""
    out = np.zeros(n_nodes)
    out[fd.dof_node] = values
    return out


def potential_arrays(mesh: MultiregionMesh, layout: DofLayout, phi: np.ndarray,
                     E_cell: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """GDL-side and membrane-side nodal potentials with the cell-voltage lift.

    The lift adds ``E_cell`` on the cathode layer only.  Away from the
    catalyst interfaces both arrays agree; outside the porous layers they are 0.
    """
    fd = layout["phi"]
    on = fd.node_dof >= 0
    gdl = np.zeros(mesh.n_nodes)
    gdl[on] = phi[fd.node_dof[on]]
    cathode = np.zeros(mesh.n_nodes, dtype=bool)
    cathode[mesh.nodes_in([Region.CATHODE_GDL])] = True
    gdl[cathode] += E_cell
    mem = gdl.copy()
    dup = fd.membrane_dof >= 0
    mem[dup] = phi[fd.membrane_dof[dup]]
    return gdl, mem


def write_vtk(path: str | Path, mesh: MultiregionMesh, point_data: Mapping[str, np.ndarray] | None = None,
              cell_data: Mapping[str, np.ndarray] | None = None, title: str = "pemcell") -> None:
    """Write an UNSTRUCTURED_GRID file; vectors are (n, 3) arrays, scalars (n,)."""
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.n_nodes} double"]
    xyz = np.column_stack([mesh.nodes, np.zeros(mesh.n_nodes)]) + 0.0
    lines += [" ".join(f"{v:.17g}" for v in row) for row in xyz]
    T = mesh.n_triangles
    lines.append(f"CELLS {T} {4 * T}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {T}")
    lines += [str(VTK_TRIANGLE)] * T

    def section(kind, n, data):
        if not data:
            return
        lines.append(f"{kind} {n}")
        for name, arr in data.items():
            arr = np.asarray(arr)
            if arr.ndim == 2:
                lines.append(f"VECTORS {name} double")
                lines.extend(" ".join(f"{v:.17g}" for v in row) for row in arr + 0.0)
            elif np.issubdtype(arr.dtype, np.integer):
                lines.append(f"SCALARS {name} int 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(str(int(v)) for v in arr)
            else:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.append(_fmt(arr))

    cells = {"region": mesh.tri_region.astype(np.int64), **(cell_data or {})}
    section("CELL_DATA", T, cells)
    section("POINT_DATA", mesh.n_nodes, dict(point_data or {}))
    Path(path).write_text("\n".join(lines) + "\n")


def write_mesh(path: str | Path, mesh: MultiregionMesh) -> None:
    write_vtk(path, mesh, title="pemcell mesh")


def write_state(path: str | Path, mesh: MultiregionMesh, layout: DofLayout, state: State,
                E_cell: float = 0.0) -> None:
    """Fields of a solved state: velocity, pressure, densities, temperature, both potential copies, Joule field."""
    n = mesh.n_nodes
    u = np.zeros((n, 3))
    u[:, 0] = nodal(layout["ux"], state.ux, n)
    u[:, 1] = nodal(layout["uy"], state.uy, n)
    phi_gdl, phi_mem = potential_arrays(mesh, layout, state.phi, E_cell)
    points = {
        "u": u,
        "p": nodal(layout["p"], state.p, n),
        "rho1": nodal(layout["rho1"], state.rho[0], n),
        "rho2": nodal(layout["rho2"], state.rho[1], n),
        "theta": nodal(layout["theta"], state.theta, n),
        "phi_gdl": phi_gdl,
        "phi_mem": phi_mem,
    }
    write_vtk(path, mesh, points, {"Phi": np.asarray(state.Phi, dtype=float)}, title="pemcell fields")


def read_vtk(path: str | Path) -> dict:
    """Minimal reader for files written by this module (used for round-trip checks)."""
    tokens = Path(path).read_text().split("\n")
    out: dict = {"point_data": {}, "cell_data": {}}
    i, section = 0, None
    while i < len(tokens):
        parts = tokens[i].split()
        if not parts:
            i += 1
            continue
        key = parts[0]
        if key == "POINTS":
            n = int(parts[1])
            out["points"] = np.array([list(map(float, tokens[i + 1 + k].split())) for k in range(n)])
            i += n + 1
        elif key == "CELLS":
            n = int(parts[1])
            out["cells"] = np.array([list(map(int, tokens[i + 1 + k].split()))[1:] for k in range(n)])
            i += n + 1
        elif key == "CELL_TYPES":
            i += int(parts[1]) + 1
        elif key in ("CELL_DATA", "POINT_DATA"):
            section, count = key.lower(), int(parts[1])
            i += 1
        elif key == "SCALARS":
            dtype = int if parts[2] == "int" else float
            out[section][parts[1]] = np.array([dtype(tokens[i + 2 + k]) for k in range(count)])
            i += count + 2
        elif key == "VECTORS":
            out[section][parts[1]] = np.array([list(map(float, tokens[i + 1 + k].split()))
                                               for k in range(count)])
            i += count + 1
        else:
            i += 1
    return out
