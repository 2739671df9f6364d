"""Fluid and solid meshes, and point location in the fluid mesh.

The fluid mesh is a structured criss-cross triangulation of a rectangle:
every grid rectangle is split into four triangles about its center. The
solid mesh lives on the reference domain B and is either a triangulation
(thick solid) or a polyline of segments (thin solid).
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import InvalidGeometry, PointOutsideDomain

# relative tolerance used for barycentric tests and the Omega membership test
GEOM_EPS = 1e-12


def mesh_edges(cells):
    """Unique edges of a triangle list in first-appearance (cell-major) order.

    Local edge k of a cell joins local vertices (k, k+1 mod 3).

    Returns
    -------
    edges : (n_edges, 2) int array, sorted vertex pairs
    cell_edges : (n_cells, 3) int array of global edge indices
    """
    cells = np.asarray(cells)
    local = np.stack([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]], axis=1)
    flat = np.sort(local.reshape(-1, 2), axis=1)
    uniq, first, inverse = np.unique(flat, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    edges = uniq[order]
    cell_edges = rank[inverse.reshape(-1)].reshape(-1, 3)
    return edges, cell_edges


def _triangle_areas(vertices, cells):
    p0, p1, p2 = (vertices[cells[:, k]] for k in range(3))
    d1, d2 = p1 - p0, p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _triangle_diameters(vertices, cells):
    p0, p1, p2 = (vertices[cells[:, k]] for k in range(3))
    return np.max(
        np.stack([np.linalg.norm(p1 - p0, axis=1),
                  np.linalg.norm(p2 - p1, axis=1),
                  np.linalg.norm(p0 - p2, axis=1)]),
        axis=0,
    )


def _boundary_edges(cells):
    edges, cell_edges = mesh_edges(cells)
    counts = np.bincount(cell_edges.ravel(), minlength=len(edges))
    return edges[counts == 1]


@dataclass(frozen=True, eq=False)
class FluidMesh:
    """Triangulation of the fluid domain Omega.

    ``grid`` holds ``(nx, ny, (x0, y0, x1, y1))`` for criss-cross meshes and
    enables O(1) point location; other meshes fall back to an exhaustive scan.
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_edges: np.ndarray
    h_x: float
    grid: Optional[Tuple[int, int, Tuple[float, float, float, float]]] = None
    edges: np.ndarray = field(init=False, repr=False)
    cell_edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        edges, cell_edges = mesh_edges(self.cells)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "cell_edges", cell_edges)
        for arr in (self.vertices, self.cells, self.boundary_edges):
            arr.setflags(write=False)

    cell_kind = "triangle"
    codim = 0

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    def areas(self):
        return _triangle_areas(self.vertices, self.cells)

    def diameters(self):
        return _triangle_diameters(self.vertices, self.cells)

    def eps_geom(self):
        return GEOM_EPS * self.h_x


@dataclass(frozen=True, eq=False)
class SolidMesh:
    """Mesh of the solid reference domain B.

    For ``codim == 0`` the cells are triangles in the plane. For ``codim == 1``
    the cells are segments; ``vertices`` are the embedded 2D positions of the
    reference curve and ``arclength`` the cumulative arclength parameter.
    """

    codim: int
    vertices: np.ndarray
    cells: np.ndarray
    h_s: float
    arclength: Optional[np.ndarray] = None
    closed: bool = False

    def __post_init__(self):
        for arr in (self.vertices, self.cells):
            arr.setflags(write=False)

    @property
    def cell_kind(self):
        return "triangle" if self.codim == 0 else "segment"

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    def measures(self):
        if self.codim == 0:
            return _triangle_areas(self.vertices, self.cells)
        p0, p1 = self.vertices[self.cells[:, 0]], self.vertices[self.cells[:, 1]]
        return np.linalg.norm(p1 - p0, axis=1)

    def diameters(self):
        if self.codim == 0:
            return _triangle_diameters(self.vertices, self.cells)
        return self.measures()

    @property
    def edges(self):
        return mesh_edges(self.cells)[0] if self.codim == 0 else self.cells

    @property
    def cell_edges(self):
        return mesh_edges(self.cells)[1]


@dataclass(frozen=True)
class PointLocation:
    cell_index: int
    ref_coords: np.ndarray  # barycentric coordinates (3,)


def _check_bounds(bounds):
    x0, y0, x1, y1 = (float(b) for b in bounds)
    if not (np.isfinite([x0, y0, x1, y1]).all() and x1 > x0 and y1 > y0):
        raise InvalidGeometry(f"degenerate or inverted bounds {bounds!r}")
    return x0, y0, x1, y1


def _criss_cross(nx, ny, bounds):
    x0, y0, x1, y1 = bounds
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    corners = np.column_stack([X.ravel(), Y.ravel()])
    xc = 0.5 * (xs[:-1] + xs[1:])
    yc = 0.5 * (ys[:-1] + ys[1:])
    XC, YC = np.meshgrid(xc, yc)
    centers = np.column_stack([XC.ravel(), YC.ravel()])
    vertices = np.vstack([corners, centers])

    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    i, j = i.ravel(), j.ravel()
    v00 = j * (nx + 1) + i
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    c = len(corners) + j * nx + i
    # per rectangle: bottom, right, top, left -- all counter-clockwise
    cells = np.stack([
        np.column_stack([v00, v10, c]),
        np.column_stack([v10, v11, c]),
        np.column_stack([v11, v01, c]),
        np.column_stack([v01, v00, c]),
    ], axis=1).reshape(-1, 3)
    return vertices, cells


def build_rect_fluid_mesh(nx, ny, bounds=(0.0, 0.0, 1.0, 1.0)):
    """Criss-cross triangulation of the rectangle ``bounds = (x0, y0, x1, y1)``.

    Cells are ordered rectangle-major (row by row, left to right), four per
    rectangle. ``h_x`` is ``max(dx, dy)``: the longest edge of every triangle
    is the rectangle side it sits on.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InvalidGeometry(f"cell counts must be positive integers, got {nx}, {ny}")
    nx, ny = int(nx), int(ny)
    bounds = _check_bounds(bounds)
    vertices, cells = _criss_cross(nx, ny, bounds)
    h_x = float(_triangle_diameters(vertices, cells).max())
    return FluidMesh(vertices, cells, _boundary_edges(cells), h_x, grid=(nx, ny, bounds))


def build_solid_square_mesh(n, bounds=(0.25, 0.25, 0.75, 0.75)):
    """Criss-cross triangulation of a rectangular reference domain B."""
    if int(n) != n or n < 1:
        raise InvalidGeometry(f"cell count must be a positive integer, got {n}")
    bounds = _check_bounds(bounds)
    vertices, cells = _criss_cross(int(n), int(n), bounds)
    return SolidMesh(0, vertices, cells, float(_triangle_diameters(vertices, cells).max()))


def _red_refine(vertices, cells, center, radius):
    edges, cell_edges = mesh_edges(cells)
    counts = np.bincount(cell_edges.ravel(), minlength=len(edges))
    mids = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])
    on_boundary = counts == 1
    d = mids[on_boundary] - center
    mids[on_boundary] = center + radius * d / np.linalg.norm(d, axis=1)[:, None]
    m = cell_edges + len(vertices)
    a, b, c = cells[:, 0], cells[:, 1], cells[:, 2]
    m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
    new = np.stack([
        np.column_stack([a, m01, m20]),
        np.column_stack([m01, b, m12]),
        np.column_stack([m20, m12, c]),
        np.column_stack([m01, m12, m20]),
    ], axis=1).reshape(-1, 3)
    return np.vstack([vertices, mids]), new


def build_solid_disk_mesh(center, radius, n_refine=0, n_sectors=12):
    """Triangulated disk: a fan of ``n_sectors`` triangles about the center,
    red-refined ``n_refine`` times with new boundary nodes pulled onto the circle."""
    if not radius > 0:
        raise InvalidGeometry(f"radius must be positive, got {radius}")
    if n_refine < 0:
        raise InvalidGeometry("n_refine must be >= 0")
    center = np.asarray(center, dtype=float)
    theta = 2 * np.pi * np.arange(n_sectors) / n_sectors
    ring = center + radius * np.column_stack([np.cos(theta), np.sin(theta)])
    vertices = np.vstack([center, ring])
    k = np.arange(n_sectors)
    cells = np.column_stack([np.zeros(n_sectors, dtype=int), 1 + k, 1 + (k + 1) % n_sectors])
    for _ in range(int(n_refine)):
        vertices, cells = _red_refine(vertices, cells, center, radius)
    return SolidMesh(0, vertices, cells, float(_triangle_diameters(vertices, cells).max()))


def build_solid_curve_mesh(samples, closed=False):
    """Segment mesh through the ordered ``samples`` (thin solid)."""
    pts = np.asarray(samples, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise InvalidGeometry("need at least two 2D points")
    n = len(pts)
    if closed and n < 3:
        raise InvalidGeometry("a closed curve needs at least three points")
    idx = np.arange(n)
    cells = np.column_stack([idx, (idx + 1) % n]) if closed else np.column_stack([idx[:-1], idx[1:]])
    lengths = np.linalg.norm(pts[cells[:, 1]] - pts[cells[:, 0]], axis=1)
    if np.any(lengths <= 0):
        bad = int(np.argmin(lengths))
        raise InvalidGeometry(f"duplicate consecutive points at segment {bad}")
    arclength = np.concatenate([[0.0], np.cumsum(lengths)[: n - 1]])
    return SolidMesh(1, pts, cells, float(lengths.max()), arclength=arclength, closed=bool(closed))


def circle_curve_points(center, radius, n_segments):
    theta = 2 * np.pi * np.arange(n_segments) / n_segments
    return np.asarray(center, float) + radius * np.column_stack([np.cos(theta), np.sin(theta)])


def _barycentric(vertices, cells, pts):
    """Barycentric coordinates of pts[k] with respect to cells[k]."""
    p0, p1, p2 = (vertices[cells[..., i]] for i in range(3))
    d1, d2, r = p1 - p0, p2 - p0, pts - p0
    det = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    l1 = (r[..., 0] * d2[..., 1] - r[..., 1] * d2[..., 0]) / det
    l2 = (d1[..., 0] * r[..., 1] - d1[..., 1] * r[..., 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


def locate_points_bruteforce(mesh, pts, chunk=256):
    """Exhaustive scan over all cells; lowest containing cell index wins.

    Returns ``-1`` for points not contained in any cell.
    """
    pts = np.atleast_2d(np.asarray(pts, float))
    tol = GEOM_EPS
    out_cells = np.full(len(pts), -1, dtype=int)
    out_bary = np.zeros((len(pts), 3))
    all_cells = np.arange(mesh.n_cells)
    for start in range(0, len(pts), chunk):
        block = pts[start:start + chunk]
        lam = _barycentric(mesh.vertices, mesh.cells[None, :, :], block[:, None, :])
        inside = np.all(lam >= -tol, axis=2)
        has = inside.any(axis=1)
        first = np.argmax(inside, axis=1)
        rows = np.arange(len(block))
        out_cells[start:start + chunk] = np.where(has, all_cells[first], -1)
        out_bary[start:start + chunk] = lam[rows, first]
    return out_cells, out_bary


def _locate_grid(mesh, pts):
    nx, ny, (x0, y0, x1, y1) = mesh.grid
    dx, dy = (x1 - x0) / nx, (y1 - y0) / ny
    i = np.clip(np.floor((pts[:, 0] - x0) / dx).astype(int), 0, nx - 1)
    j = np.clip(np.floor((pts[:, 1] - y0) / dy).astype(int), 0, ny - 1)
    # candidate rectangles (i-1..i) x (j-1..j), enumerated in increasing cell index
    di = np.array([-1, 0, -1, 0])
    dj = np.array([-1, -1, 0, 0])
    ci = i[:, None] + di[None, :]
    cj = j[:, None] + dj[None, :]
    valid_rect = (ci >= 0) & (cj >= 0)
    rect = np.where(valid_rect, cj * nx + ci, 0)
    cand = (4 * rect[:, :, None] + np.arange(4)[None, None, :]).reshape(len(pts), 16)
    valid = np.repeat(valid_rect, 4, axis=1)
    lam = _barycentric(mesh.vertices, mesh.cells[cand], pts[:, None, :])
    inside = np.all(lam >= -GEOM_EPS, axis=2) & valid
    has = inside.any(axis=1)
    key = np.where(inside, cand, np.iinfo(np.int64).max)
    pick = np.argmin(key, axis=1)
    rows = np.arange(len(pts))
    return np.where(has, cand[rows, pick], -1), lam[rows, pick]


def locate_points(mesh, pts):
    """Vectorized point location.

    Returns ``(cells, bary)``; points lying on shared edges or vertices are
    assigned to the lowest-index containing cell. Raises
    :class:`PointOutsideDomain` for points farther than ``eps_geom`` from Omega.
    """
    pts = np.atleast_2d(np.asarray(pts, float))
    if len(pts) == 0:
        return np.zeros(0, dtype=int), np.zeros((0, 3))
    if mesh.grid is not None:
        nx, ny, (x0, y0, x1, y1) = mesh.grid
        eps = mesh.eps_geom()
        outside = ((pts[:, 0] < x0 - eps) | (pts[:, 0] > x1 + eps)
                   | (pts[:, 1] < y0 - eps) | (pts[:, 1] > y1 + eps))
        if outside.any():
            k = int(np.argmax(outside))
            raise PointOutsideDomain(f"point {pts[k].tolist()} lies outside the fluid domain",
                                     point=pts[k], quad_index=k)
        # points within eps_geom outside the box are snapped onto it
        pts = np.column_stack([np.clip(pts[:, 0], x0, x1), np.clip(pts[:, 1], y0, y1)])
        cells, bary = _locate_grid(mesh, pts)
        missing = cells < 0
        if missing.any():
            c2, b2 = locate_points_bruteforce(mesh, pts[missing])
            cells[missing], bary[missing] = c2, b2
    else:
        cells, bary = locate_points_bruteforce(mesh, pts)
    if np.any(cells < 0):
        k = int(np.argmax(cells < 0))
        raise PointOutsideDomain(f"point {pts[k].tolist()} lies outside the fluid domain",
                                 point=pts[k], quad_index=k)
    return cells, bary


def locate_point(mesh, x):
    cells, bary = locate_points(mesh, np.asarray(x, float)[None, :])
    return PointLocation(int(cells[0]), bary[0])
