"""File output: legacy VTK meshes, CSV tables, MatrixMarket and state snapshots."""

import csv
import os

import numpy as np
import scipy.io

VTK_TRIANGLE = 5
VTK_LINE = 3


def _ensure_dir(path):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)


def _fmt(x):
    return repr(float(x))


def write_vtk(path, points, cells, point_data=None, title="dlmfsi"):
    """Legacy ASCII VTK unstructured grid.

    ``cells`` holds triangles (k, 3) or segments (k, 2). ``point_data`` maps
    names to (n,) scalar or (n, 2) vector arrays.
    """
    _ensure_dir(path)
    points = np.asarray(points, float)
    cells = np.asarray(cells, int)
    ctype = VTK_TRIANGLE if cells.shape[1] == 3 else VTK_LINE
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(points)} double"]
    lines += [f"{_fmt(x)} {_fmt(y)} 0" for x, y in points]
    lines.append(f"CELLS {len(cells)} {cells.size + len(cells)}")
    lines += [" ".join([str(cells.shape[1])] + [str(i) for i in c]) for c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += [str(ctype)] * len(cells)
    if point_data:
        lines.append(f"POINT_DATA {len(points)}")
        for name, arr in point_data.items():
            arr = np.asarray(arr, float)
            if arr.ndim == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [_fmt(v) for v in arr]
            else:
                lines.append(f"VECTORS {name} double")
                lines += [f"{_fmt(a)} {_fmt(b)} 0" for a, b in arr]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _p2_subcells(space):
    c = space.cell_dofs  # vertices 0..2, then edges (0,1), (1,2), (2,0)
    v0, v1, v2, e01, e12, e20 = c.T
    return np.vstack([np.column_stack(t) for t in
                      ((v0, e01, e20), (e01, v1, e12), (e20, e12, v2), (e01, e12, e20))])


def write_fluid_vtk(path, u, p=None, refined=False):
    """Fluid fields on the fluid mesh.

    By default the P2 velocity is sampled at the mesh vertices; ``refined``
    writes every P2 node with four sub-triangles per cell.
    """
    V = u.space
    mesh = V.mesh
    vel = u.nodal_values()
    if refined and V.family == "P2":
        pts, cells = V.node_coords, _p2_subcells(V)
        data = {"velocity": vel}
        if p is not None:
            # P1 pressure is linear on each edge: midpoint value = mean of ends
            pv = p.coefficients
            e = mesh.edges
            data["pressure"] = np.concatenate([pv, 0.5 * (pv[e[:, 0]] + pv[e[:, 1]])])
    else:
        pts, cells = mesh.vertices, mesh.cells
        data = {"velocity": vel[: mesh.n_vertices]}
        if p is not None:
            data["pressure"] = p.coefficients[: mesh.n_vertices]
    write_vtk(path, pts, cells, data, title="fluid")


def write_solid_vtk(path, X, lam=None):
    """Deformed solid mesh: points X(s_i), reference coordinates as data."""
    mesh = X.space.mesh
    data = {"reference": mesh.vertices}
    if lam is not None:
        data["multiplier"] = lam.nodal_values()
    write_vtk(path, X.nodal_values(), mesh.cells, data, title="solid")


def write_state_vtk(path, disc, state):
    """Fluid file at ``path`` and solid file next to it (suffix _solid)."""
    root, ext = os.path.splitext(path)
    write_fluid_vtk(path, state.u, state.p)
    write_solid_vtk(f"{root}_solid{ext or '.vtk'}", state.X, state.lam)


def save_state(path, state):
    _ensure_dir(path)
    np.savez(path, u=state.u.coefficients, p=state.p.coefficients, X=state.X.coefficients,
             X_prev=state.X_prev.coefficients, lam=state.lam.coefficients, t=state.t, n=state.n)


def write_csv(path, header, rows):
    """CSV with floats written in shortest round-trip form."""
    _ensure_dir(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_matrix(path, A):
    _ensure_dir(path)
    scipy.io.mmwrite(path, A, precision=17)


def read_matrix(path):
    return scipy.io.mmread(path).tocsr()
