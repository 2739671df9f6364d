"""Sparse assembly of the fluid, solid and coupling operators.

All matrices are ``scipy.sparse.csr_matrix`` with duplicates summed. Vector
fields use the component-blocked DOF layout of :class:`dlmfsi.fem.FESpace`.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import PointOutsideDomain, UnsupportedElement
from .fem import FEFunction, basis_from_bary, interpolate
from .mesh import locate_points

_REF_DLAM = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class ModelParams:
    """Coefficients of the stationary four-field problem.

    a_f(u, v) = alpha (u, v) + nu (sym grad u, sym grad v)
    a_s(X, Y) = beta (X, Y)_B + gamma (grad X, grad Y)_B
    """

    alpha: float
    beta: float
    gamma: float
    nu: float
    rho_f: float = 1.0

    def __post_init__(self):
        if not self.alpha >= 0 or not self.beta >= 0:
            raise ValueError("alpha and beta must be nonnegative")
        if not self.gamma >= 0 or not self.nu >= 0:
            raise ValueError("gamma and nu must be nonnegative")

    @classmethod
    def from_time_step(cls, rho_f, rho_s, kappa, nu, dt):
        """Parameters of one semi-implicit step: alpha = rho_f/dt,
        beta = (rho_s - rho_f)/dt, gamma = kappa*dt."""
        return cls(alpha=rho_f / dt, beta=(rho_s - rho_f) / dt, gamma=kappa * dt, nu=nu, rho_f=rho_f)


@dataclass
class CouplingConfig:
    """How the constraint c(mu, v(Xbar) - Y) is realized.

    variant "L2": c(mu, z) = (mu, z)_B. variant "H1": c(mu, z) = (grad mu,
    grad z)_B + (mu, z)_B, thick solids only.
    """

    Xbar: FEFunction
    variant: str = "L2"
    quad_degree: Optional[int] = None

    def __post_init__(self):
        if self.variant not in ("L2", "H1"):
            raise ValueError(f"unknown coupling variant {self.variant!r}")
        if self.variant == "H1" and self.codim != 0:
            raise UnsupportedElement("the H1 coupling is only defined for thick (codim 0) solids")

    @property
    def codim(self):
        return self.Xbar.space.mesh.codim


def _scatter(row_dofs, col_dofs, local, shape):
    m, nt, ns = local.shape
    rows = np.broadcast_to(row_dofs[:, :, None], (m, nt, ns)).ravel()
    cols = np.broadcast_to(col_dofs[:, None, :], (m, nt, ns)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape).tocsr()
    mat.sum_duplicates()
    return mat


def _vector_block(scalar, n_components):
    if n_components == 1:
        return scalar.tocsr()
    return sp.block_diag([scalar] * n_components, format="csr")


def scalar_mass(space, degree=None):
    degree = 2 * space.degree if degree is None else degree
    tab = space.tabulate(degree)
    local = np.einsum("mq,qi,qj->mij", tab.dx, tab.values, tab.values)
    n = space.n_scalar
    return _scatter(space.cell_dofs, space.cell_dofs, local, (n, n))


def scalar_stiffness(space, degree=None):
    degree = max(2 * space.degree - 2, 0) if degree is None else degree
    tab = space.tabulate(degree)
    local = np.einsum("mq,mqid,mqjd->mij", tab.dx, tab.grads, tab.grads)
    n = space.n_scalar
    return _scatter(space.cell_dofs, space.cell_dofs, local, (n, n))


def mass_matrix(space, degree=None):
    """Vector (or scalar) L2 Gram matrix of ``space``."""
    return _vector_block(scalar_mass(space, degree), space.n_components)


def stiffness_matrix(space, degree=None):
    """Full-gradient Gram matrix (grad X, grad Y), component by component."""
    return _vector_block(scalar_stiffness(space, degree), space.n_components)


def h1_gram(space):
    return (mass_matrix(space) + stiffness_matrix(space)).tocsr()


def symmetric_gradient_matrix(space):
    """Matrix of (sym grad u, sym grad v) on a 2-component triangle space."""
    if space.n_components != 2 or space.cell_kind != "triangle":
        raise UnsupportedElement("symmetric gradient needs a 2-component triangle space")
    tab = space.tabulate(max(2 * space.degree - 2, 0))
    n = space.n_scalar
    G = [[_scatter(space.cell_dofs, space.cell_dofs,
                   np.einsum("mq,mqi,mqj->mij", tab.dx, tab.grads[..., a], tab.grads[..., b]), (n, n))
          for b in range(2)] for a in range(2)]
    L = G[0][0] + G[1][1]
    # block (row comp b, col comp a) = 1/2 (delta_ab L + G_ab)
    return (0.5 * sp.bmat([[L + G[0][0], G[1][0]], [G[0][1], L + G[1][1]]])).tocsr()


def assemble_fluid_operator(V, params, mass_only=False):
    """A_f = alpha M + nu K_sym; ``mass_only`` drops the viscous part."""
    A = params.alpha * mass_matrix(V)
    if not mass_only:
        A = A + params.nu * symmetric_gradient_matrix(V)
    return A.tocsr()


def assemble_convection(V, w, rho_f=1.0):
    """Skew matrix of b(w, u, v) = rho_f/2 ((w.grad u, v) - (w.grad v, u)).

    Row ``i`` is the test function, column ``j`` the trial function.
    """
    deg = 3 * V.degree - 1
    tab = V.tabulate(deg)
    wq = w.values_at_quadrature(deg)  # (m, nq, 2)
    adv = np.einsum("mqd,mqjd->mqj", wq, tab.grads)
    local = 0.5 * rho_f * np.einsum("mq,qi,mqj->mij", tab.dx, tab.values, adv)
    n = V.n_scalar
    K = _scatter(V.cell_dofs, V.cell_dofs, local, (n, n))
    N = K - K.T
    return _vector_block(N, V.n_components)


def assemble_divergence(V, Q):
    """B_f[i, j] = (div phi_j, q_i): rows on Q_h, columns on V_h."""
    if V.mesh is not Q.mesh:
        raise ValueError("velocity and pressure spaces must share the mesh")
    deg = V.degree + Q.degree - 1
    tabv, tabq = V.tabulate(deg), Q.tabulate(deg)
    blocks = []
    for a in range(V.n_components):
        local = np.einsum("mq,qi,mqj->mij", tabv.dx, tabq.values, tabv.grads[..., a])
        blocks.append(_scatter(Q.cell_dofs, V.cell_dofs, local, (Q.n_scalar, V.n_scalar)))
    return sp.hstack(blocks, format="csr")


def pressure_mean_vector(Q):
    """Integrals of the pressure basis functions, (int_Omega q_i)."""
    tab = Q.tabulate(Q.degree)
    local = np.einsum("mq,qi->mi", tab.dx, tab.values)
    return np.bincount(Q.cell_dofs.ravel(), weights=local.ravel(), minlength=Q.n_scalar)


def assemble_solid_operator(S, params, include_mass=True, include_stiffness=True):
    """A_s = beta M_B + gamma K_B."""
    A = sp.csr_matrix((S.n_dofs, S.n_dofs))
    if include_mass:
        A = A + params.beta * mass_matrix(S)
    if include_stiffness:
        A = A + params.gamma * stiffness_matrix(S)
    return A.tocsr()


def _fluid_bary_gradients(V):
    return np.einsum("mij,kj->mki", V.geometry.grad_map, _REF_DLAM)


def _coupling_points(V, S, Xbar, degree):
    """Locate X̄ at the solid quadrature points; return fluid basis data there."""
    tab = S.tabulate(degree)
    xq = Xbar.values_at_quadrature(degree)  # (ms, nq, 2)
    ms, nq, _ = xq.shape
    try:
        cells, bary = locate_points(V.mesh, xq.reshape(-1, 2))
    except PointOutsideDomain as exc:
        k = exc.quad_index
        raise PointOutsideDomain(
            f"mapped quadrature point {k % nq} of solid cell {k // nq} at "
            f"{np.round(exc.point, 15).tolist()} lies outside the fluid domain",
            point=exc.point, solid_cell=k // nq, quad_index=k % nq) from None
    dlam = _fluid_bary_gradients(V)[cells]
    phi, dphi = basis_from_bary(V.family, bary, dlam)
    return tab, cells.reshape(ms, nq), phi.reshape(ms, nq, -1), dphi.reshape(ms, nq, phi.shape[-1], 2)


def assemble_coupling(V, S, L, config):
    """Coupling blocks C_f[i, j] = c(mu_i, phi_j o Xbar) and C_s[i, j] = c(mu_i, Y_j).

    ``L`` is the multiplier space (the same P1 space as ``S``).
    """
    if L.mesh is not S.mesh or L.family != S.family:
        raise UnsupportedElement("the multiplier space must coincide with the solid space")
    if V.n_components != L.n_components:
        raise UnsupportedElement("velocity and multiplier spaces need equal component counts")
    degree = config.quad_degree if config.quad_degree is not None else 2 * V.degree + 1
    tab, cells, phi, dphi = _coupling_points(V, S, config.Xbar, degree)
    ms, nq = cells.shape
    nloc_f = phi.shape[-1]
    vals = np.einsum("mq,qa,mqb->mqab", tab.dx, tab.values, phi)
    if config.variant == "H1":
        # grad_s (v o Xbar) = (grad v)(Xbar) F, F = grad_s Xbar
        F = config.Xbar.gradients_at_quadrature(degree)  # (ms, nq, comp l, dir k)
        dcomp = np.einsum("mqbl,mqlk->mqbk", dphi, F)
        vals = vals + np.einsum("mq,mqak,mqbk->mqab", tab.dx, tab.grads, dcomp)
    # fluid columns vary per quadrature point: scatter point by point
    rows = np.broadcast_to(L.cell_dofs[:, None, :, None], (ms, nq, L.n_local, nloc_f))
    cols = np.broadcast_to(V.cell_dofs[cells][:, :, None, :], (ms, nq, L.n_local, nloc_f))
    Cf = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                       shape=(L.n_scalar, V.n_scalar)).tocsr()
    Cf.sum_duplicates()
    Cs = mass_matrix(L) if config.variant == "L2" else h1_gram(L)
    return _vector_block(Cf, V.n_components), Cs.tocsr()


def coupling_rhs(L, d, config):
    """Vector c(mu_i, d) for a callable or FEFunction ``d`` on B."""
    if isinstance(d, FEFunction):
        Cs = mass_matrix(L) if config.variant == "L2" else h1_gram(L)
        return Cs @ d.coefficients
    if config.variant == "H1":
        return h1_gram(L) @ interpolate(L, d).coefficients
    degree = config.quad_degree if config.quad_degree is not None else 2 * L.degree + 3
    return _load_vector(L, d, degree)


def _load_vector(space, func, degree):
    tab = space.tabulate(degree)
    pts = tab.points.reshape(-1, 2)
    vals = np.asarray(func(pts), dtype=float).reshape(tab.points.shape[0], tab.points.shape[1], -1)
    vals = np.broadcast_to(vals, vals.shape[:2] + (space.n_components,))
    out = np.zeros(space.n_dofs)
    for c in range(space.n_components):
        local = np.einsum("mq,qi,mq->mi", tab.dx, tab.values, vals[..., c])
        out[c * space.n_scalar:(c + 1) * space.n_scalar] = np.bincount(
            space.cell_dofs.ravel(), weights=local.ravel(), minlength=space.n_scalar)
    return out


def assemble_loads(V, S, L, f, g, d, config, degree=None):
    """Right-hand sides (f, v), (g, Y)_B and c(mu, d).

    ``f`` is evaluated at points of Omega, ``g`` and ``d`` at reference points
    of B; each returns an (n, 2) array.
    """
    fdeg = 2 * V.degree + 2 if degree is None else degree
    rhs_u = _load_vector(V, f, fdeg)
    rhs_X = _load_vector(S, g, 2 * S.degree + 3 if degree is None else degree)
    rhs_l = coupling_rhs(L, d, config)
    return rhs_u, rhs_X, rhs_l
