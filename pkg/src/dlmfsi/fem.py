"""Reference elements, quadrature, DOF maps and nodal interpolation.

Supported families: P1 and P2 on triangles, P1 on segments. Vector spaces
are component-blocked: DOF ``comp * n_scalar + node``. Scalar nodes are
numbered vertices first, then edges in first-appearance (cell-major) order.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import UnsupportedElement, UnsupportedQuadrature

MAX_TRIANGLE_DEGREE = 30
MAX_SEGMENT_DEGREE = 41

# gradients of the barycentric coordinates on the reference triangle
_REF_DLAM = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
_P2_EDGES = ((0, 1), (1, 2), (2, 0))


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (nq, dim) reference coordinates
    weights: np.ndarray  # (nq,), sum = reference measure
    degree: int


@lru_cache(maxsize=None)
def quadrature(degree, cell_kind="triangle"):
    """Quadrature exact for polynomials up to ``degree``.

    Triangle: centroid rule for degree <= 1, the 3-point interior rule for
    degree 2, collapsed Gauss-Legendre (Duffy) products above. Segment
    ([0, 1]): Gauss-Legendre.
    """
    degree = int(degree)
    if degree < 0:
        raise UnsupportedQuadrature("negative degree")
    if cell_kind == "segment":
        if degree > MAX_SEGMENT_DEGREE:
            raise UnsupportedQuadrature(f"segment rules go up to degree {MAX_SEGMENT_DEGREE}")
        n = degree // 2 + 1
        x, w = np.polynomial.legendre.leggauss(n)
        return QuadratureRule(0.5 * (x + 1.0)[:, None], 0.5 * w, degree)
    if cell_kind != "triangle":
        raise UnsupportedQuadrature(f"unknown cell kind {cell_kind!r}")
    if degree > MAX_TRIANGLE_DEGREE:
        raise UnsupportedQuadrature(f"triangle rules go up to degree {MAX_TRIANGLE_DEGREE}")
    if degree <= 1:
        return QuadratureRule(np.array([[1 / 3, 1 / 3]]), np.array([0.5]), degree)
    if degree == 2:
        pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        return QuadratureRule(pts, np.full(3, 1 / 6), degree)
    # x = u, y = (1 - u) v on the unit square; the Jacobian adds one degree in u
    nu = (degree + 1) // 2 + 1
    nv = degree // 2 + 1
    xu, wu = np.polynomial.legendre.leggauss(nu)
    xv, wv = np.polynomial.legendre.leggauss(nv)
    u, wu = 0.5 * (xu + 1), 0.5 * wu
    v, wv = 0.5 * (xv + 1), 0.5 * wv
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu * (1 - u), wv)
    pts = np.column_stack([U.ravel(), ((1 - U) * V).ravel()])
    return QuadratureRule(pts, W.ravel(), degree)


def p1_from_bary(lam, dlam=None):
    """P1 triangle basis from barycentric coordinates ``lam (..., 3)``.

    ``dlam (..., 3, 2)`` are the barycentric gradients in whatever frame the
    caller wants the basis gradients in.
    """
    if dlam is None:
        return lam
    return lam, np.broadcast_to(dlam, lam.shape + (dlam.shape[-1],)).copy()


def p2_from_bary(lam, dlam=None):
    vals = [lam[..., i] * (2 * lam[..., i] - 1) for i in range(3)]
    vals += [4 * lam[..., i] * lam[..., j] for i, j in _P2_EDGES]
    vals = np.stack(vals, axis=-1)
    if dlam is None:
        return vals
    dlam = np.broadcast_to(dlam, lam.shape + (dlam.shape[-1],))
    grads = [(4 * lam[..., i] - 1)[..., None] * dlam[..., i, :] for i in range(3)]
    grads += [4 * (lam[..., j][..., None] * dlam[..., i, :] + lam[..., i][..., None] * dlam[..., j, :])
              for i, j in _P2_EDGES]
    return vals, np.stack(grads, axis=-2)


def reference_basis(family, cell_kind, ref_points):
    """Values ``(nq, nloc)`` and reference gradients ``(nq, nloc, dim)``."""
    ref_points = np.atleast_2d(np.asarray(ref_points, float))
    if cell_kind == "segment":
        if family != "P1":
            raise UnsupportedElement(f"{family} is not available on segments")
        x = ref_points[:, 0]
        vals = np.column_stack([1 - x, x])
        grads = np.broadcast_to(np.array([[-1.0], [1.0]]), (len(x), 2, 1)).copy()
        return vals, grads
    lam = np.column_stack([1 - ref_points[:, 0] - ref_points[:, 1], ref_points[:, 0], ref_points[:, 1]])
    if family == "P1":
        return p1_from_bary(lam, _REF_DLAM)
    if family == "P2":
        return p2_from_bary(lam, _REF_DLAM)
    raise UnsupportedElement(f"unknown family {family!r}")


def basis_from_bary(family, lam, dlam=None):
    if family == "P1":
        return p1_from_bary(lam, dlam)
    if family == "P2":
        return p2_from_bary(lam, dlam)
    raise UnsupportedElement(f"unknown family {family!r}")


@dataclass
class CellGeometry:
    """Affine cell maps. For triangles ``jac`` is (m, 2, 2) with columns
    v1 - v0, v2 - v0; for segments it is the (m, 2, 1) tangent v1 - v0."""

    origin: np.ndarray
    jac: np.ndarray
    measure_scale: np.ndarray  # |det J| for triangles, length for segments
    grad_map: np.ndarray       # maps reference gradients to physical ones

    @classmethod
    def of(cls, mesh):
        v = mesh.vertices
        c = mesh.cells
        x0 = v[c[:, 0]]
        if mesh.cell_kind == "segment":
            t = v[c[:, 1]] - x0
            length = np.linalg.norm(t, axis=1)
            # derivative with respect to arclength
            return cls(x0, t[:, :, None], length, (1.0 / length)[:, None, None])
        J = np.stack([v[c[:, 1]] - x0, v[c[:, 2]] - x0], axis=2)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1] / det
        inv[:, 1, 1] = J[:, 0, 0] / det
        inv[:, 0, 1] = -J[:, 0, 1] / det
        inv[:, 1, 0] = -J[:, 1, 0] / det
        return cls(x0, J, np.abs(det), np.transpose(inv, (0, 2, 1)))


@dataclass
class Tabulation:
    """Basis data at the quadrature points of every cell of a space."""

    points: np.ndarray   # (m, nq, 2) physical points
    dx: np.ndarray       # (m, nq) quadrature weight times cell measure
    values: np.ndarray   # (nq, nloc)
    grads: np.ndarray    # (m, nq, nloc, dim) physical gradients
    ref_points: np.ndarray


class FESpace:
    """Continuous Lagrange space on a fluid or solid mesh.

    Parameters
    ----------
    mesh : FluidMesh or SolidMesh
    family : {"P1", "P2"}
    n_components : {1, 2}
    """

    def __init__(self, mesh, family="P1", n_components=1):
        if family not in ("P1", "P2"):
            raise UnsupportedElement(f"unknown family {family!r}")
        if mesh.cell_kind == "segment" and family != "P1":
            raise UnsupportedElement(f"{family} is not supported on segment meshes")
        if n_components not in (1, 2):
            raise UnsupportedElement("n_components must be 1 or 2")
        self.mesh = mesh
        self.family = family
        self.n_components = n_components
        self.cell_kind = mesh.cell_kind
        nv = mesh.n_vertices
        if family == "P1":
            self.cell_dofs = np.asarray(mesh.cells, dtype=int)
            self.node_coords = np.asarray(mesh.vertices, float)
        else:
            edges, cell_edges = mesh.edges, mesh.cell_edges
            self.cell_dofs = np.hstack([mesh.cells, nv + cell_edges]).astype(int)
            mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
            self.node_coords = np.vstack([mesh.vertices, mids])
        self.n_scalar = len(self.node_coords)
        self.n_dofs = self.n_scalar * n_components
        self.geometry = CellGeometry.of(mesh)
        self._tab_cache = {}

    @property
    def degree(self):
        return 2 if self.family == "P2" else 1

    @property
    def n_local(self):
        return self.cell_dofs.shape[1]

    def __repr__(self):
        return (f"FESpace({self.family}, components={self.n_components}, "
                f"cells={self.mesh.n_cells}, dofs={self.n_dofs})")

    def dof(self, comp, scalar_index):
        return comp * self.n_scalar + np.asarray(scalar_index)

    def boundary_nodes(self):
        """Scalar node indices on the boundary of a fluid mesh."""
        be = getattr(self.mesh, "boundary_edges", None)
        if be is None or len(be) == 0:
            return np.zeros(0, dtype=int)
        nodes = set(np.unique(be).tolist())
        if self.family == "P2":
            edges = self.mesh.edges
            lookup = {tuple(e): k for k, e in enumerate(edges.tolist())}
            nv = self.mesh.n_vertices
            for e in np.sort(be, axis=1).tolist():
                nodes.add(nv + lookup[tuple(e)])
        return np.array(sorted(nodes), dtype=int)

    def boundary_dofs(self):
        nodes = self.boundary_nodes()
        return np.concatenate([self.dof(k, nodes) for k in range(self.n_components)])

    def eval_basis(self, cell, ref_point):
        """Basis values and reference gradients of ``cell`` at one reference point."""
        vals, grads = reference_basis(self.family, self.cell_kind, np.asarray(ref_point, float)[None, :])
        return vals[0], grads[0]

    def tabulate(self, degree):
        if degree in self._tab_cache:
            return self._tab_cache[degree]
        rule = quadrature(degree, self.cell_kind)
        vals, rgrads = reference_basis(self.family, self.cell_kind, rule.points)
        g = self.geometry
        pts = g.origin[:, None, :] + np.einsum("mij,qj->mqi", g.jac, rule.points)
        grads = np.einsum("mij,qnj->mqni", g.grad_map, rgrads)
        dx = g.measure_scale[:, None] * rule.weights[None, :]
        tab = Tabulation(pts, dx, vals, grads, rule.points)
        self._tab_cache[degree] = tab
        return tab


class FEFunction:
    """Coefficient vector attached to a space."""

    def __init__(self, space, coefficients=None):
        self.space = space
        if coefficients is None:
            coefficients = np.zeros(space.n_dofs)
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (space.n_dofs,):
            raise ValueError(f"expected {space.n_dofs} coefficients, got {coefficients.shape}")
        self.coefficients = coefficients

    def component(self, k):
        n = self.space.n_scalar
        return self.coefficients[k * n:(k + 1) * n]

    def nodal_values(self):
        """(n_scalar, n_components) array of nodal values."""
        return self.coefficients.reshape(self.space.n_components, -1).T

    def copy(self):
        return FEFunction(self.space, self.coefficients.copy())

    def values_at_quadrature(self, degree):
        """(m, nq, n_components) values at the quadrature points of every cell."""
        tab = self.space.tabulate(degree)
        local = self.nodal_values()[self.space.cell_dofs]  # (m, nloc, ncomp)
        return np.einsum("qn,mnc->mqc", tab.values, local)

    def gradients_at_quadrature(self, degree):
        """(m, nq, n_components, dim) gradients at the quadrature points."""
        tab = self.space.tabulate(degree)
        local = self.nodal_values()[self.space.cell_dofs]
        return np.einsum("mqnd,mnc->mqcd", tab.grads, local)


def interpolate(space, field):
    """Nodal interpolant of ``field``.

    ``field`` maps an (n, 2) array of points to an (n,) array (scalar spaces)
    or an (n, n_components) array. Constants are accepted as well.
    """
    n, nc = space.n_scalar, space.n_components
    vals = field(space.node_coords) if callable(field) else field
    vals = np.asarray(vals, dtype=float)
    if nc == 1:
        return FEFunction(space, np.array(np.broadcast_to(vals.reshape(-1) if vals.size == n else vals, (n,))))
    vals = np.broadcast_to(vals, (n, nc))
    return FEFunction(space, np.ascontiguousarray(vals.T).reshape(-1))
