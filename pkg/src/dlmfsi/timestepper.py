"""Semi-implicit time stepping of the fictitious-domain FSI model.

Each step solves the stationary four-field problem with

    alpha = rho_f/dt, beta = drho/dt, gamma = kappa*dt,
    f = rho_f/dt u^n, g = drho/dt^2 (2X^n - X^{n-1}), d = -X^n/dt,

for the unknown X^{n+1}/dt, with the coupling evaluated at X^n. The discrete
energy

    E^n = rho_f/2 |u^n|^2 + drho/2 |(X^n - X^{n-1})/dt|_B^2 + kappa/2 |grad X^n|_B^2

then satisfies E^{n+1} + dt nu |sym grad u^{n+1}|^2 <= E^n.
"""

import logging
import os
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import ModelParams
from .errors import EnergyViolation, InvertibilityWarning
from .fem import FEFunction
from .saddle import RecyclingSolver, build_system, solve

log = logging.getLogger(__name__)

JACOBIAN_WARN_RATIO = 1e-3


@dataclass(frozen=True)
class PhysicalParams:
    rho_f: float
    rho_s: float
    nu: float
    kappa: float
    dt: float

    def __post_init__(self):
        if not self.rho_f > 0:
            raise ValueError("rho_f must be positive")
        if not self.rho_s >= self.rho_f:
            raise ValueError("rho_s must be >= rho_f (the excess density drho must be nonnegative)")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.nu >= 0 or not self.kappa >= 0:
            raise ValueError("nu and kappa must be nonnegative")

    @property
    def drho(self):
        return self.rho_s - self.rho_f

    def model(self):
        return ModelParams.from_time_step(self.rho_f, self.rho_s, self.kappa, self.nu, self.dt)


@dataclass
class SimState:
    u: FEFunction
    p: FEFunction
    X: FEFunction
    X_prev: FEFunction
    lam: FEFunction
    t: float = 0.0
    n: int = 0


@dataclass
class EnergyBreakdown:
    kinetic: float
    solid_kinetic: float
    elastic: float

    @property
    def total(self):
        return self.kinetic + self.solid_kinetic + self.elastic


@dataclass
class StepInfo:
    dissipation: float      # dt * nu |sym grad u^{n+1}|^2
    relative_residual: float
    min_jacobian: float


def _vec_norm2(M, x):
    # PSD quadratic form; clamp rounding-level negatives
    return max(float(x @ (M @ x)), 0.0)


def _shift_constants(X):
    """X minus its first nodal value per component (the stiffness annihilates constants)."""
    v = X.nodal_values()
    return np.ascontiguousarray((v - v[0]).T).reshape(-1)


def energy(disc, state, phys):
    """Energy split of ``state``."""
    w = (state.X.coefficients - state.X_prev.coefficients) / phys.dt
    return EnergyBreakdown(
        kinetic=0.5 * phys.rho_f * _vec_norm2(disc.M_f, state.u.coefficients),
        solid_kinetic=0.5 * phys.drho * _vec_norm2(disc.M_s, w),
        elastic=0.5 * phys.kappa * _vec_norm2(disc.K_s, _shift_constants(state.X)),
    )


def solid_jacobians(X):
    """Per-cell det(grad X) (thick) or |dX/ds| (thin) of a P1 map."""
    mesh = X.space.mesh
    pos = X.nodal_values()[mesh.cells]
    ref = mesh.vertices[mesh.cells]
    if mesh.codim == 1:
        return np.linalg.norm(pos[:, 1] - pos[:, 0], axis=1) / np.linalg.norm(ref[:, 1] - ref[:, 0], axis=1)

    def signed(p):
        a, b = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]

    return signed(pos) / signed(ref)


def init_first_step(disc, u0, X0, dt):
    """X^1 = X^0 + dt * P(u0 o X^0), P solving the constraint c(mu, Y) = c(mu, u0 o X^0).

    With the L2 coupling P is the L2 projection onto S_h, which makes the
    initial structure velocity consistent with the fluid.
    """
    C_f, C_s = disc.coupling(X0)
    w = spla.splu(C_s.tocsc()).solve(C_f @ u0.coefficients)
    return FEFunction(disc.S, X0.coefficients + dt * w)


def initial_state(disc, u0, X0, phys):
    """State at n = 0 whose backward difference (X^0 - X^{-1})/dt equals
    (X^1 - X^0)/dt of :func:`init_first_step`."""
    X1 = init_first_step(disc, u0, X0, phys.dt)
    X_prev = FEFunction(disc.S, 2 * X0.coefficients - X1.coefficients)
    return SimState(u=u0.copy(), p=FEFunction(disc.Q), X=X0.copy(), X_prev=X_prev, lam=FEFunction(disc.L))


def step(disc, state, phys, convection=False, solver=None):
    """Advance one time step; returns (new_state, StepInfo)."""
    dt = phys.dt
    params = phys.model()
    blocks = disc.blocks(params, state.X, convection=state.u if convection else None)
    system = build_system(blocks)
    Xn, Xp = state.X.coefficients, state.X_prev.coefficients
    rhs_u = (phys.rho_f / dt) * (disc.M_f @ state.u.coefficients)
    rhs_X = (phys.drho / dt ** 2) * (disc.M_s @ (2 * Xn - Xp))
    rhs_l = blocks.C_s @ (-Xn / dt)
    sol = solve(system, (rhs_u, None, rhs_X, rhs_l), solver=solver)
    X_new = FEFunction(disc.S, dt * sol.X.coefficients)
    new = SimState(u=sol.u, p=sol.p, X=X_new, X_prev=state.X.copy(), lam=sol.lam,
                   t=state.t + dt, n=state.n + 1)
    diss = dt * phys.nu * _vec_norm2(disc.K_f, sol.u.coefficients)
    return new, StepInfo(diss, sol.relative_residual, float(solid_jacobians(X_new).min()))


@dataclass
class RunResult:
    state: SimState
    E0: float
    log: list = field(default_factory=list)
    n_violations: int = 0
    n_factorizations: int = 0
    allowed: float = 0.0   # audit threshold on the balance


LOG_FIELDS = ("step", "time", "kinetic", "solid_kinetic", "elastic", "total", "dissipation",
              "balance", "violation")


def run(disc, phys, u0, X0, n_steps, convection=False, audit="true", tol_energy=1e-10,
        out_dir=None, vtk_cadence=0, on_step=None):
    """Run ``n_steps`` steps from (u0, X0).

    audit : {"true", "false", "strict"}
        "true" flags steps violating the energy inequality, "strict" raises
        :class:`EnergyViolation` (after saving the offending state when
        ``out_dir`` is set), "false" skips the check.

    The log holds one row per completed step; ``balance`` is
    (E^{n+1} - E^n)/dt + nu |sym grad u^{n+1}|^2, checked against
    ``tol_energy * max(E^0, E_ref)``. E_ref = kappa/2 |grad iota|_B^2 is the
    elastic energy of the reference embedding; it only matters when E^0 is
    (nearly) zero, where a purely relative bound would flag rounding noise.
    """
    if audit not in ("true", "false", "strict"):
        raise ValueError(f"audit must be 'true', 'false' or 'strict', got {audit!r}")
    from . import io  # local import keeps the solver core free of file I/O

    state = initial_state(disc, u0, X0, phys)
    E_prev = energy(disc, state, phys).total
    E0 = E_prev
    E_ref = 0.5 * phys.kappa * _vec_norm2(disc.K_s, _shift_constants(disc.identity_map()))
    allowed = tol_energy * max(E0, E_ref)
    jac0 = float(solid_jacobians(state.X).min())
    warned = False
    result = RunResult(state, E0, allowed=allowed)
    solver = RecyclingSolver()
    if out_dir is not None and vtk_cadence:
        io.write_state_vtk(os.path.join(out_dir, "state_00000.vtk"), disc, state)
    for k in range(int(n_steps)):
        state, info = step(disc, state, phys, convection=convection, solver=solver)
        br = energy(disc, state, phys)
        balance = (br.total - E_prev) / phys.dt + info.dissipation / phys.dt
        excess = balance - allowed
        flag = audit != "false" and excess > 0
        if flag:
            result.n_violations += 1
            log.warning("energy inequality violated at step %d by %.3e", state.n, excess)
            if audit == "strict":
                if out_dir is not None:
                    io.save_state(os.path.join(out_dir, f"violation_step{state.n:05d}.npz"), state)
                raise EnergyViolation(f"energy inequality violated at step {state.n}: "
                                      f"excess {excess:.3e}", step=state.n, excess=excess)
        # degenerate initial maps (jac0 <= 0) have no invertibility to lose
        if not warned and jac0 > 0 and info.min_jacobian < JACOBIAN_WARN_RATIO * jac0:
            warned = True
            warnings.warn(InvertibilityWarning(
                f"step {state.n}: min solid Jacobian {info.min_jacobian:.3e} fell below "
                f"{JACOBIAN_WARN_RATIO:g} x its initial value {jac0:.3e}"))
        result.log.append(dict(step=state.n, time=state.t, kinetic=br.kinetic,
                               solid_kinetic=br.solid_kinetic, elastic=br.elastic, total=br.total,
                               dissipation=info.dissipation, balance=balance, violation=int(flag)))
        E_prev = br.total
        if out_dir is not None and vtk_cadence and state.n % vtk_cadence == 0:
            io.write_state_vtk(os.path.join(out_dir, f"state_{state.n:05d}.vtk"), disc, state)
        if on_step is not None:
            on_step(state, result.log[-1])
    result.state = state
    result.n_factorizations = solver.n_factorizations
    return result


def write_energy_log(path, rows):
    from . import io

    io.write_csv(path, LOG_FIELDS, [[r[k] for k in LOG_FIELDS] for r in rows])
