"""Four-field block system, direct solve, residuals and inf-sup estimates.

Unknowns are ordered (u, p, X, lambda, m): m is the scalar multiplier of the
zero-mean pressure constraint. Homogeneous Dirichlet velocity DOFs are removed
from the system. The assembled matrix is

    [ A_f  -B_f^T   0     C_f^T   0 ]
    [-B_f    0      0      0      w ]
    [  0     0     A_s   -C_s^T   0 ]
    [ C_f    0    -C_s     0      0 ]
    [  0    w^T     0      0      0 ]

with B_f[i, j] = (div phi_j, q_i) and w_i = int q_i, so it is symmetric when
A_f is.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (CouplingConfig, assemble_convection, assemble_coupling, assemble_divergence,
                       assemble_solid_operator, h1_gram, mass_matrix, pressure_mean_vector,
                       stiffness_matrix, symmetric_gradient_matrix)
from .errors import BlockShapeError, EigenFailure, SingularSystem
from .fem import FEFunction, FESpace

RESIDUAL_TOL = 1e-10


def splu(K):
    """SuperLU tuned for symmetric-pattern saddle matrices."""
    return spla.splu(sp.csc_matrix(K), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01,
                     options=dict(SymmetricMode=True))


@dataclass
class SystemBlocks:
    V: FESpace
    Q: FESpace
    S: FESpace
    L: FESpace
    A_f: sp.spmatrix
    B_f: sp.spmatrix
    A_s: sp.spmatrix
    C_f: sp.spmatrix
    C_s: sp.spmatrix
    N: Optional[sp.spmatrix] = None


@dataclass
class BlockOperator:
    blocks: SystemBlocks
    boundary_dofs: np.ndarray
    free_dofs: np.ndarray
    mean: np.ndarray
    matrix: sp.csc_matrix
    offsets: dict  # name -> (start, stop) in the reduced ordering
    _lu: object = field(default=None, repr=False)

    @property
    def shape(self):
        return self.matrix.shape

    def factorize(self):
        if self._lu is None:
            try:
                self._lu = splu(self.matrix)
            except RuntimeError as exc:
                raise SingularSystem(f"sparse LU failed: {exc}") from exc
        return self._lu

    def pack(self, u=None, p=None, X=None, lam=None, m=0.0):
        """Full-length field vectors -> reduced vector (boundary rows dropped)."""
        b = self.blocks
        parts = [
            np.zeros(b.V.n_dofs) if u is None else np.asarray(u, float),
            np.zeros(b.Q.n_dofs) if p is None else np.asarray(p, float),
            np.zeros(b.S.n_dofs) if X is None else np.asarray(X, float),
            np.zeros(b.L.n_dofs) if lam is None else np.asarray(lam, float),
        ]
        return np.concatenate([parts[0][self.free_dofs], parts[1], parts[2], parts[3], [m]])

    def unpack(self, z):
        b = self.blocks
        u = np.zeros(b.V.n_dofs)
        u[self.free_dofs] = z[slice(*self.offsets["u"])]
        return (u, z[slice(*self.offsets["p"])].copy(), z[slice(*self.offsets["X"])].copy(),
                z[slice(*self.offsets["lam"])].copy(), float(z[self.offsets["m"][0]]))


@dataclass
class SaddleSolution:
    u: FEFunction
    p: FEFunction
    X: FEFunction
    lam: FEFunction
    m: float
    residuals: dict
    relative_residual: float


def build_system(blocks, bc=None):
    """Assemble the reduced global matrix.

    ``bc`` lists the velocity DOFs carrying homogeneous Dirichlet conditions
    (default: every boundary DOF of V).
    """
    b = blocks
    nV, nQ, nS, nL = b.V.n_dofs, b.Q.n_dofs, b.S.n_dofs, b.L.n_dofs
    expected = {
        "A_f": (nV, nV), "B_f": (nQ, nV), "A_s": (nS, nS), "C_f": (nL, nV), "C_s": (nL, nS),
    }
    if b.N is not None:
        expected["N"] = (nV, nV)
    for name, shape in expected.items():
        got = getattr(b, name).shape
        if got != shape:
            raise BlockShapeError(f"block {name} has shape {got}, expected {shape}")
    bc = b.V.boundary_dofs() if bc is None else np.asarray(bc, dtype=int)
    mask = np.ones(nV, dtype=bool)
    mask[bc] = False
    free = np.flatnonzero(mask)

    A = b.A_f if b.N is None else b.A_f + b.N
    A = sp.csr_matrix(A)[free][:, free]
    B = sp.csr_matrix(b.B_f)[:, free]
    Cf = sp.csr_matrix(b.C_f)[:, free]
    Cs = sp.csr_matrix(b.C_s)
    w = sp.csr_matrix(pressure_mean_vector(b.Q)[:, None])
    K = sp.bmat([
        [A, -B.T, None, Cf.T, None],
        [-B, None, None, None, w],
        [None, None, b.A_s, -Cs.T, None],
        [Cf, None, -Cs, None, None],
        [None, w.T, None, None, None],
    ], format="csc")
    n_u = len(free)
    offsets = {}
    start = 0
    for name, size in (("u", n_u), ("p", nQ), ("X", nS), ("lam", nL), ("m", 1)):
        offsets[name] = (start, start + size)
        start += size
    # bmat drops all-zero block rows/cols from the shape only if sizes are ambiguous
    if K.shape != (start, start):
        raise BlockShapeError(f"assembled matrix has shape {K.shape}, expected {(start, start)}")
    return BlockOperator(b, np.sort(bc), free, w.toarray().ravel(), K, offsets)


def _rhs_vector(system, rhs):
    if isinstance(rhs, np.ndarray) and rhs.ndim == 1 and rhs.shape[0] == system.shape[0]:
        return rhs.astype(float)
    rhs_u, rhs_p, rhs_X, rhs_l = rhs
    return system.pack(rhs_u, rhs_p, rhs_X, rhs_l, 0.0)


def _block_norms(system, r):
    o = system.offsets
    return {
        "momentum": float(np.linalg.norm(r[slice(*o["u"])])),
        "mass": float(np.linalg.norm(np.concatenate([r[slice(*o["p"])], r[slice(*o["m"])]]))),
        "solid": float(np.linalg.norm(r[slice(*o["X"])])),
        "constraint": float(np.linalg.norm(r[slice(*o["lam"])])),
    }


def residuals(system, sol, rhs):
    """Per-equation residual norms of ``sol`` (a SaddleSolution or reduced vector)."""
    if isinstance(sol, SaddleSolution):
        z = system.pack(sol.u.coefficients, sol.p.coefficients, sol.X.coefficients,
                        sol.lam.coefficients, sol.m)
    else:
        z = np.asarray(sol, float)
    b = _rhs_vector(system, rhs)
    return _block_norms(system, b - system.matrix @ z)


def _relative(system, b, z):
    r = b - system.matrix @ z
    bnorm = np.linalg.norm(b)
    return r, (np.linalg.norm(r) / bnorm if bnorm > 0 else np.linalg.norm(r))


class RecyclingSolver:
    """Reuses an earlier LU factorization as a GMRES preconditioner.

    Consecutive time steps produce nearby matrices, so a few preconditioned
    iterations usually replace a new factorization. When they do not reach
    ``0.1 * tol`` the current matrix is factorized and kept.
    """

    def __init__(self, tol=RESIDUAL_TOL, restart=20):
        self.tol = tol
        self.restart = restart
        self.lu = None
        self.n_factorizations = 0
        self.last_iterations = 0

    def _refactor(self, system):
        self.lu = system.factorize()
        self.n_factorizations += 1
        self.last_iterations = 0
        return self.lu.solve

    def solve(self, system, b):
        n = system.shape[0]
        if self.lu is not None and self.lu.shape == (n, n):
            count = [0]

            def cb(_):
                count[0] += 1

            M = spla.LinearOperator((n, n), self.lu.solve)
            z, _ = spla.gmres(system.matrix, b, x0=self.lu.solve(b), rtol=0.01 * self.tol, atol=0.0,
                              restart=self.restart, maxiter=1, M=M, callback=cb,
                              callback_type="pr_norm")
            if _relative(system, b, z)[1] <= 0.1 * self.tol:
                self.last_iterations = count[0]
                return z
        return self._refactor(system)(b)


def solve(system, rhs, tol=RESIDUAL_TOL, solver=None):
    """Solve the block system.

    ``rhs`` is ``(rhs_u, rhs_p, rhs_X, rhs_lam)`` with full-length vectors (any
    entry may be None) or an already reduced vector. ``solver`` may be a
    :class:`RecyclingSolver`; by default the matrix is factorized directly. One
    step of iterative refinement is taken when the relative residual exceeds
    ``tol``; :class:`SingularSystem` is raised if it still does.
    """
    b = _rhs_vector(system, rhs)
    z = solver.solve(system, b) if solver is not None else system.factorize().solve(b)
    r, rel = _relative(system, b, z)
    if not np.isfinite(rel):
        raise SingularSystem("non-finite solution; the factorization is singular")
    if rel > tol:
        z = z + system.factorize().solve(r)
        r, rel = _relative(system, b, z)
        if not rel <= tol:
            raise SingularSystem(f"relative residual {rel:.3e} exceeds {tol:.1e}; "
                                 "the system is singular or severely ill-conditioned")
    u, p, X, lam, m = system.unpack(z)
    blk = system.blocks
    return SaddleSolution(FEFunction(blk.V, u), FEFunction(blk.Q, p), FEFunction(blk.S, X),
                          FEFunction(blk.L, lam), m, _block_norms(system, r), float(rel))


class FSIDiscretization:
    """Spaces and the geometry-independent matrices of one fluid/solid mesh pair.

    V = P2 vector, Q = P1 on the fluid mesh; S = Lambda = P1 vector on the solid mesh.
    """

    def __init__(self, fluid_mesh, solid_mesh, variant="L2", quad_degree=None, velocity_family="P2"):
        self.fluid_mesh = fluid_mesh
        self.solid_mesh = solid_mesh
        self.variant = variant
        self.quad_degree = quad_degree
        self.V = FESpace(fluid_mesh, velocity_family, 2)
        self.Q = FESpace(fluid_mesh, "P1", 1)
        self.S = FESpace(solid_mesh, "P1", 2)
        self.L = self.S
        self.M_f = mass_matrix(self.V)
        self.K_f = symmetric_gradient_matrix(self.V)
        self.B_f = assemble_divergence(self.V, self.Q)
        self.M_s = mass_matrix(self.S)
        self.K_s = stiffness_matrix(self.S)
        self.C_s = self.M_s if variant == "L2" else h1_gram(self.S)

    def coupling(self, Xbar):
        cfg = CouplingConfig(Xbar, self.variant, self.quad_degree)
        return assemble_coupling(self.V, self.S, self.L, cfg)

    def blocks(self, params, Xbar, convection=None):
        C_f, C_s = self.coupling(Xbar)
        A_f = (params.alpha * self.M_f + params.nu * self.K_f).tocsr()
        A_s = (params.beta * self.M_s + params.gamma * self.K_s).tocsr()
        N = None if convection is None else assemble_convection(self.V, convection, params.rho_f)
        return SystemBlocks(self.V, self.Q, self.S, self.L, A_f, self.B_f, A_s, C_f, C_s, N)

    def identity_map(self):
        """Xbar(s) = s (thick), or the embedded reference curve (thin)."""
        return FEFunction(self.S, np.ascontiguousarray(self.solid_mesh.vertices.T).reshape(-1))


def _spd_solve_many(A, B):
    lu = spla.splu(sp.csc_matrix(A))
    return lu.solve(np.asarray(B.toarray() if sp.issparse(B) else B, dtype=float))


def estimate_infsup(C_f, C_s, norm_V, norm_S, norm_L):
    """Discrete inf-sup constant of C = [C_f, -C_s].

    Returns sqrt of the smallest eigenvalue of (C N^{-1} C^T) q = t M_L q with
    N = blockdiag(norm_V, norm_S) and M_L = ``norm_L``.
    """
    try:
        Cf = sp.csr_matrix(C_f)
        Cs = sp.csr_matrix(C_s)
        S = np.zeros((Cf.shape[0], Cf.shape[0]))
        if Cf.nnz:
            S += Cf @ _spd_solve_many(norm_V, Cf.T)
        if Cs.nnz:
            S += Cs @ _spd_solve_many(norm_S, Cs.T)
        S = 0.5 * (S + S.T)
        ML = norm_L.toarray() if sp.issparse(norm_L) else np.asarray(norm_L, float)
        ML = 0.5 * (ML + ML.T)
        t = sla.eigh(S, ML, eigvals_only=True, subset_by_index=[0, 0])[0]
    except (np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
        raise EigenFailure(f"inf-sup eigenproblem failed: {exc}") from exc
    if not np.isfinite(t):
        raise EigenFailure("non-finite inf-sup eigenvalue")
    return float(np.sqrt(max(t, 0.0)))


def dual_h1_gram(S):
    """Gram matrix of the discrete (H^1)' norm on S_h: M G^{-1} M."""
    M = mass_matrix(S)
    G = h1_gram(S)
    return np.asarray(M @ _spd_solve_many(G, M))


def multiplier_norm(S, variant="L2"):
    """Lambda-norm Gram matrix used by the inf-sup estimate.

    thick + L2 coupling: discrete dual H^1 norm; thick + H1 coupling: H^1
    Gram; thin: h_s-scaled L2 Gram (inverse-inequality proxy of (H^{1/2})').
    """
    if S.mesh.codim == 1:
        return (S.mesh.h_s * mass_matrix(S)).toarray()
    if variant == "H1":
        return h1_gram(S).toarray()
    return dual_h1_gram(S)


def infsup_for(disc, Xbar=None):
    """beta_h of a discretization, with V restricted to zero boundary values."""
    Xbar = disc.identity_map() if Xbar is None else Xbar
    C_f, C_s = disc.coupling(Xbar)
    bc = disc.V.boundary_dofs()
    mask = np.ones(disc.V.n_dofs, dtype=bool)
    mask[bc] = False
    norm_V = h1_gram(disc.V).tocsr()[mask][:, mask]
    return estimate_infsup(C_f.tocsc()[:, mask], C_s, norm_V, h1_gram(disc.S),
                           multiplier_norm(disc.S, disc.variant))
