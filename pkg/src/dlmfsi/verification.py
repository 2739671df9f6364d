"""Manufactured solutions, error norms and the convergence / inf-sup studies.

The manufactured case is the thick stationary problem on the unit square with
B = [1/4, 3/4]^2 embedded by the identity and the L2 coupling. The strong data

    f = alpha u - div(nu sym grad u) + grad p + chi_B lam
    g = beta X - gamma Lap X - lam
    d = u - X        (on B)

are derived symbolically with sympy. Since div u = 0, div(sym grad u) = Lap(u)/2.
The indicator chi_B is discontinuous across the boundary of B; for fluid grids
with nx divisible by 4 that boundary lies on mesh lines, so quadrature points
never straddle it and the load is integrated without a consistency error.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla
import sympy

from .assembly import CouplingConfig, ModelParams, _coupling_points, assemble_loads, h1_gram
from .errors import MMSInconsistent
from .fem import FEFunction
from .mesh import build_rect_fluid_mesh, build_solid_curve_mesh, build_solid_square_mesh, circle_curve_points
from .saddle import FSIDiscretization, build_system, infsup_for, solve

B_BOUNDS = (0.25, 0.25, 0.75, 0.75)
SELF_CHECK_TOL = 1e-8


def _vector_fn(exprs, syms):
    fns = [sympy.lambdify(syms, e, "numpy") for e in exprs]

    def f(pts):
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        return np.stack([np.broadcast_to(fn(x, y), x.shape) for fn in fns], axis=-1)

    return f


def _scalar_fn(expr, syms):
    fn = sympy.lambdify(syms, expr, "numpy")

    def f(pts):
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        return np.array(np.broadcast_to(fn(x, y), x.shape), dtype=float)

    return f


def _tensor_fn(rows, syms):
    comp = [_vector_fn(r, syms) for r in rows]

    def f(pts):
        return np.stack([c(pts) for c in comp], axis=-2)  # (..., component, direction)

    return f


@dataclass
class MMSCase:
    """Exact fields and data of the manufactured stationary problem.

    Vector callables map (..., 2) points to (..., 2) values; gradients return
    (..., 2, 2) arrays indexed [component, direction]. Solid fields take
    reference points of B (identical to their physical positions).
    """

    params: ModelParams
    u: Callable
    p: Callable
    X: Callable
    lam: Callable
    grad_u: Callable
    grad_X: Callable
    f: Callable
    g: Callable
    d: Callable
    div_u: Callable
    bounds: tuple = B_BOUNDS


def mms_case(params=None):
    """Manufactured case with u = curl psi, psi = sin^2(pi x) sin^2(pi y).

    X is assembled from C(t) = cos(2 pi (t - 1/4)), the lowest Neumann mode
    of [1/4, 3/4]: its derivative vanishes at both ends, so the normal
    derivative of X is zero on the boundary of B.
    """
    params = ModelParams(1.0, 1.0, 1.0, 1.0) if params is None else params
    x, y = sympy.symbols("x y", real=True)
    pi = sympy.pi
    psi = sympy.sin(pi * x) ** 2 * sympy.sin(pi * y) ** 2
    u = [sympy.diff(psi, y), -sympy.diff(psi, x)]
    p = sympy.sin(2 * pi * x) * sympy.cos(2 * pi * y)

    def C(t):
        return sympy.cos(2 * pi * (t - sympy.Rational(1, 4)))

    X = [C(x) * C(y), C(x) - sympy.Rational(1, 3) * C(y)]
    lam = [sympy.sin(pi * x) * sympy.cos(pi * y), x * y + sympy.cos(2 * pi * x)]

    a, b, c, nu = (sympy.nsimplify(v) for v in (params.alpha, params.beta, params.gamma, params.nu))
    grad = lambda w: [[sympy.diff(w[i], v) for v in (x, y)] for i in range(2)]
    gu = grad(u)
    eps = [[(gu[i][j] + gu[j][i]) / 2 for j in range(2)] for i in range(2)]
    div_eps = [sympy.diff(eps[i][0], x) + sympy.diff(eps[i][1], y) for i in range(2)]
    f_smooth = [sympy.simplify(a * u[i] - nu * div_eps[i] + sympy.diff(p, (x, y)[i])) for i in range(2)]
    lap = lambda w: sympy.diff(w, x, 2) + sympy.diff(w, y, 2)
    g = [sympy.simplify(b * X[i] - c * lap(X[i]) - lam[i]) for i in range(2)]
    d = [u[i] - X[i] for i in range(2)]
    syms = (x, y)

    f_s = _vector_fn(f_smooth, syms)
    lam_fn = _vector_fn(lam, syms)
    x0, y0, x1, y1 = B_BOUNDS

    def f(pts):
        pts = np.asarray(pts, dtype=float)
        chi = ((pts[..., 0] > x0) & (pts[..., 0] < x1) & (pts[..., 1] > y0) & (pts[..., 1] < y1))
        return f_s(pts) + chi[..., None] * lam_fn(pts)

    return MMSCase(
        params=params, u=_vector_fn(u, syms), p=_scalar_fn(p, syms), X=_vector_fn(X, syms), lam=lam_fn,
        grad_u=_tensor_fn(gu, syms), grad_X=_tensor_fn(grad(X), syms), f=f,
        g=_vector_fn(g, syms), d=_vector_fn(d, syms),
        div_u=_scalar_fn(sympy.simplify(gu[0][0] + gu[1][1]), syms),
    )


def mms_discretization(nx, n_solid=None):
    """Fluid nx-by-nx grid with B meshed at h_s = 2 h_x unless ``n_solid`` is given."""
    if n_solid is None:
        if nx % 4:
            raise ValueError("nx must be a multiple of 4 so that B aligns with fluid cells")
        n_solid = nx // 4
    return FSIDiscretization(build_rect_fluid_mesh(nx, nx), build_solid_square_mesh(n_solid, B_BOUNDS))


def _sym(t):
    return 0.5 * (t + np.swapaxes(t, -1, -2))


def weak_residuals(case, disc, n_tests=20, degree=14, seed=0):
    """Relative weak residuals of the exact fields against random discrete test functions.

    Each equation is tested with ``n_tests`` random coefficient vectors (fluid
    test velocities vanish on the boundary). The residual is divided by the sum
    of the magnitudes of its terms. Fluid integrals use the fluid quadrature;
    the coupling integral over B uses the solid quadrature with point location,
    so the chi_B part of f is checked against an independent evaluation.
    """
    rng = np.random.default_rng(seed)
    prm = case.params
    V, Q, S = disc.V, disc.Q, disc.S
    tv, tq, ts = V.tabulate(degree), Q.tabulate(degree), S.tabulate(degree)
    xf, xs = tv.points, ts.points
    u, gu, p, f = case.u(xf), case.grad_u(xf), case.p(xf), case.f(xf)
    cfg = CouplingConfig(disc.identity_map(), "L2", degree)
    _, cells, phi, _ = _coupling_points(V, S, cfg.Xbar, degree)
    lam_s, X_s, gX_s, g_s, d_s = case.lam(xs), case.X(xs), case.grad_X(xs), case.g(xs), case.d(xs)
    u_s = case.u(xs)
    free = np.setdiff1d(np.arange(V.n_dofs), V.boundary_dofs())
    out = {"momentum": 0.0, "mass": 0.0, "solid": 0.0, "constraint": 0.0}

    def rel(terms):
        return abs(sum(terms)) / max(sum(abs(t) for t in terms), 1e-300)

    for _ in range(n_tests):
        cv = np.zeros(V.n_dofs)
        cv[free] = rng.standard_normal(len(free))
        v = FEFunction(V, cv)
        vq, gv = v.values_at_quadrature(degree), v.gradients_at_quadrature(degree)
        div_v = gv[..., 0, 0] + gv[..., 1, 1]
        # v at the solid quadrature points through the fluid basis
        loc = v.nodal_values()[V.cell_dofs[cells]]  # (ms, nq, nloc, 2)
        v_s = np.einsum("mqn,mqnc->mqc", phi, loc)
        terms = [
            prm.alpha * np.sum(tv.dx * np.sum(u * vq, -1)),
            prm.nu * np.sum(tv.dx * np.sum(_sym(gu) * _sym(gv), (-1, -2))),
            -np.sum(tv.dx * p * div_v),
            np.sum(ts.dx * np.sum(lam_s * v_s, -1)),
            -np.sum(tv.dx * np.sum(f * vq, -1)),
        ]
        out["momentum"] = max(out["momentum"], rel(terms))

        q = FEFunction(Q, rng.standard_normal(Q.n_dofs)).values_at_quadrature(degree)[..., 0]
        mass = np.sum(tq.dx * q * case.div_u(tq.points))
        scale = np.sum(tq.dx * np.abs(q)) * np.max(np.abs(case.grad_u(tq.points)))
        out["mass"] = max(out["mass"], abs(mass) / scale)

        Y = FEFunction(S, rng.standard_normal(S.n_dofs))
        Yq, gY = Y.values_at_quadrature(degree), Y.gradients_at_quadrature(degree)
        terms = [
            prm.beta * np.sum(ts.dx * np.sum(X_s * Yq, -1)),
            prm.gamma * np.sum(ts.dx * np.sum(gX_s * gY, (-1, -2))),
            -np.sum(ts.dx * np.sum(lam_s * Yq, -1)),
            -np.sum(ts.dx * np.sum(g_s * Yq, -1)),
        ]
        out["solid"] = max(out["solid"], rel(terms))

        mu = FEFunction(S, rng.standard_normal(S.n_dofs)).values_at_quadrature(degree)
        terms = [np.sum(ts.dx * np.sum(mu * u_s, -1)), -np.sum(ts.dx * np.sum(mu * X_s, -1)),
                 -np.sum(ts.dx * np.sum(mu * d_s, -1))]
        out["constraint"] = max(out["constraint"], rel(terms))
    return out


def self_check(case, nx=16, tol=SELF_CHECK_TOL, **kw):
    """Raise :class:`MMSInconsistent` if any weak residual exceeds ``tol``.

    The solid grid matches the fluid cells inside B (h_s = h_x), so discrete
    fluid test functions are polynomial on every solid cell and the solid-side
    quadrature integrates them to rounding.
    """
    res = weak_residuals(case, mms_discretization(nx, nx // 2), **kw)
    bad = {k: v for k, v in res.items() if not v <= tol}
    if bad:
        raise MMSInconsistent(f"manufactured data fail the weak residual check: {bad}")
    return res


def solve_mms(case, disc, degree=None):
    cfg = CouplingConfig(disc.identity_map(), "L2")
    blocks = disc.blocks(case.params, cfg.Xbar)
    rhs_u, rhs_X, rhs_l = assemble_loads(disc.V, disc.S, disc.L, case.f, case.g, case.d, cfg, degree)
    system = build_system(blocks)
    return solve(system, (rhs_u, None, rhs_X, rhs_l))


@dataclass
class ErrorNorms:
    u_h1: float
    u_l2: float
    p_l2: float
    X_h1: float
    lam_dual: float   # Riesz proxy of the dual H1(B) norm
    lam_l2: float

    @property
    def combined(self):
        return self.u_h1 + self.p_l2 + self.X_h1 + self.lam_dual


def error_norms(sol, case, degree=8):
    """Errors of a discrete solution (any object with u, p, X, lam FEFunctions).

    The multiplier error is measured by r_h in S_h with
    (r_h, Y)_{1,B} = (lam - lam_h, Y)_{0,B}; its H1(B) norm is reported as
    the dual-norm proxy, next to the plain L2(B) error.
    """
    V, S = sol.u.space, sol.X.space
    tv = V.tabulate(degree)
    eu = case.u(tv.points) - sol.u.values_at_quadrature(degree)
    egu = case.grad_u(tv.points) - sol.u.gradients_at_quadrature(degree)
    tq = sol.p.space.tabulate(degree)
    ep = case.p(tq.points) - sol.p.values_at_quadrature(degree)[..., 0]
    ts = S.tabulate(degree)
    eX = case.X(ts.points) - sol.X.values_at_quadrature(degree)
    egX = case.grad_X(ts.points) - sol.X.gradients_at_quadrature(degree)
    el = case.lam(ts.points) - sol.lam.values_at_quadrature(degree)

    def integ(dx, e2):
        return float(np.sqrt(np.sum(dx * e2)))

    L = sol.lam.space
    b = np.zeros(L.n_dofs)
    for c in range(L.n_components):
        local = np.einsum("mq,qi,mq->mi", ts.dx, ts.values, el[..., c])
        b[c * L.n_scalar:(c + 1) * L.n_scalar] = np.bincount(
            L.cell_dofs.ravel(), weights=local.ravel(), minlength=L.n_scalar)
    r = spla.splu(h1_gram(L).tocsc()).solve(b)
    l2u = integ(tv.dx, np.sum(eu ** 2, -1))
    return ErrorNorms(
        u_h1=float(np.sqrt(l2u ** 2 + np.sum(tv.dx * np.sum(egu ** 2, (-1, -2))))),
        u_l2=l2u,
        p_l2=integ(tq.dx, ep ** 2),
        X_h1=float(np.sqrt(np.sum(ts.dx * (np.sum(eX ** 2, -1) + np.sum(egX ** 2, (-1, -2)))))),
        lam_dual=float(np.sqrt(max(b @ r, 0.0))),
        lam_l2=integ(ts.dx, np.sum(el ** 2, -1)),
    )


def loglog_slope(h, e):
    """Least-squares slope of log e against log h."""
    h, e = np.asarray(h, float), np.asarray(e, float)
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


COMPONENTS = ("u_h1", "u_l2", "p_l2", "X_h1", "lam_dual", "lam_l2", "combined")


@dataclass
class ConvergenceReport:
    levels: list                      # (h_x, h_s) per level
    errors: list                      # ErrorNorms per level
    slopes: dict = field(default_factory=dict)
    residuals: list = field(default_factory=list)

    def series(self, name):
        return np.array([getattr(e, name) for e in self.errors])

    def monotone(self, name):
        s = self.series(name)
        return bool(np.all(np.diff(s) < 0))

    def rows(self):
        out = []
        for (hx, hs), e in zip(self.levels, self.errors):
            out.append([hx, hs] + [float(getattr(e, c)) for c in COMPONENTS])
        return out


def convergence_study(case, levels=(8, 16, 32), ratio=2):
    """Solve the manufactured problem on fluid grids ``levels`` (nx values).

    The solid grid keeps h_s = ``ratio`` * h_x.
    """
    levels = [int(n) for n in levels]
    if len(levels) < 3:
        raise ValueError("a convergence study needs at least three levels")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be strictly increasing in nx")
    errs, lv, res = [], [], []
    for nx in levels:
        n_solid = nx / (2 * ratio)
        if n_solid != int(n_solid) or nx % 4:
            raise ValueError(f"nx={nx} is incompatible with ratio {ratio} on B")
        disc = mms_discretization(nx, int(n_solid))
        try:
            sol = solve_mms(case, disc)
        except Exception as exc:
            raise type(exc)(f"level nx={nx}: {exc}") from exc
        errs.append(error_norms(sol, case))
        lv.append((disc.fluid_mesh.h_x, disc.solid_mesh.h_s))
        res.append(sol.relative_residual)
    h = [a for a, _ in lv]
    report = ConvergenceReport(lv, errs, residuals=res)
    report.slopes = {c: loglog_slope(h, report.series(c)) for c in COMPONENTS}
    return report


INFSUP_HEADER = ("h_x", "h_s", "ratio", "beta_h", "variant", "codim")


def thick_infsup_levels(levels=(8, 16, 32), ratio=2, variant="L2", bounds=B_BOUNDS):
    """beta_h for a square B at h_s = ``ratio`` * h_x on nx-by-nx unit-square
    grids; rows follow INFSUP_HEADER."""
    rows = []
    side = bounds[2] - bounds[0]
    if abs(bounds[3] - bounds[1] - side) > 1e-12:
        raise ValueError("the thick inf-sup scan needs a square B")
    for nx in levels:
        n_solid = side * nx / ratio
        if abs(n_solid - round(n_solid)) > 1e-9:
            raise ValueError(f"nx={nx} is incompatible with ratio {ratio} on B")
        disc = FSIDiscretization(build_rect_fluid_mesh(nx, nx),
                                 build_solid_square_mesh(int(round(n_solid)), bounds), variant=variant)
        hx, hs = disc.fluid_mesh.h_x, disc.solid_mesh.h_s
        rows.append([hx, hs, hx / hs, infsup_for(disc), variant, 0])
    return rows


def thin_curve(n_segments, center=(0.5, 0.5), length=2.0):
    """Closed polygon inscribed in the circle of circumference ``length``."""
    r = length / (2 * np.pi)
    return build_solid_curve_mesh(circle_curve_points(center, r, n_segments), closed=True)


def thin_infsup(nx, n_segments, **kw):
    disc = FSIDiscretization(build_rect_fluid_mesh(nx, nx), thin_curve(n_segments, **kw))
    # nominal mesh sizes 1/nx and length/n_segments label the rows
    return disc, infsup_for(disc)


def thin_ratio_sweep(ratios=(0.5, 1, 2, 4), n_segments=32, length=2.0, center=(0.5, 0.5)):
    """beta_h for a fixed curve mesh with h_x = ratio * h_s (h_s = length / n_segments)."""
    hs = length / n_segments
    rows = []
    for r in ratios:
        nx = 1.0 / (r * hs)
        if abs(nx - round(nx)) > 1e-9:
            raise ValueError(f"ratio {r} gives a non-integer fluid grid ({nx})")
        _, beta = thin_infsup(int(round(nx)), n_segments, length=length, center=center)
        rows.append([1.0 / round(nx), hs, float(r), beta, "L2", 1])
    return rows


def thin_fixed_ratio(ratio=0.5, segment_levels=(32, 64, 128), length=2.0):
    """beta_h at fixed h_x / h_s while both meshes are refined."""
    rows = []
    for n in segment_levels:
        hs = length / n
        nx = int(round(1.0 / (ratio * hs)))
        _, beta = thin_infsup(nx, n, length=length)
        rows.append([1.0 / nx, hs, float(ratio), beta, "L2", 1])
    return rows


def infsup_study(codim=0, ratios=None, levels=None, variant="L2", n_segments=32):
    """Inf-sup scan; thick: fixed ratio over ``levels``; thin: ratio sweep."""
    if codim == 0:
        ratio = 2 if not ratios else ratios[0]
        return thick_infsup_levels(levels or (8, 16, 32), ratio, variant)
    return thin_ratio_sweep(ratios or (0.5, 1, 2, 4), n_segments)
