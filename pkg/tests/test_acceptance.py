"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line
that is printed in the terminal summary."""

import time
from functools import lru_cache

import numpy as np
import pytest

from dlmfsi.assembly import (CouplingConfig, ModelParams, assemble_convection, assemble_coupling,
                             assemble_fluid_operator, pressure_mean_vector)
from dlmfsi.errors import MMSInconsistent
from dlmfsi.fem import FEFunction, FESpace, interpolate
from dlmfsi.mesh import build_rect_fluid_mesh, build_solid_disk_mesh, build_solid_square_mesh
from dlmfsi.saddle import FSIDiscretization, build_system, solve
from dlmfsi.timestepper import PhysicalParams, run
from dlmfsi.verification import (convergence_study, mms_case, mms_discretization, self_check,
                                 thick_infsup_levels, thin_fixed_ratio, thin_ratio_sweep, weak_residuals)

pytestmark = pytest.mark.slow

RHO_F = 1.0
CENTER = np.array([0.5, 0.5])
STRETCH = np.array([1.2, 1 / 1.2])
RUN_BUDGET = 120.0
MMS_BUDGET = 180.0
CHECKED = ("u_h1", "p_l2", "X_h1", "lam_dual")


@lru_cache(maxsize=None)
def disk_discretization(nx=32, refine=2):
    return FSIDiscretization(build_rect_fluid_mesh(nx, nx), build_solid_disk_mesh(CENTER, 0.2, refine))


@lru_cache(maxsize=None)
def disk_release(rho_s, convection):
    """200-step disk release; returns (max balance / E0, max |mean p|, seconds, E0)."""
    d = disk_discretization()
    X0 = interpolate(d.S, lambda s: CENTER + (s - CENTER) * STRETCH)
    phys = PhysicalParams(RHO_F, rho_s, 0.1, 1.0, 1e-2)
    w = pressure_mean_vector(d.Q)
    means = []
    t0 = time.perf_counter()
    res = run(d, phys, FEFunction(d.V), X0, 200, convection=convection, audit="true",
              on_step=lambda st, row: means.append(abs(w @ st.p.coefficients)))
    elapsed = time.perf_counter() - t0
    ratio = max(r["balance"] for r in res.log) / res.E0
    return ratio, max(means), elapsed, res.E0


def energy_check(rho_values):
    parts, ok = [], True
    for rho_s in rho_values:
        for conv in (False, True):
            ratio, pmean, secs, _ = disk_release(rho_s, conv)
            good = ratio <= 1e-10 and secs <= RUN_BUDGET and pmean <= 1e-10
            ok &= good
            parts.append(f"drho={rho_s - RHO_F:g} conv={'on' if conv else 'off'}: "
                         f"max balance/E0={ratio:.2e}, max |mean p|={pmean:.1e}, {secs:.0f}s")
    return ok, "; ".join(parts)


@lru_cache(maxsize=None)
def mms_study(beta):
    case = mms_case(ModelParams(1.0, beta, 1.0, 1.0))
    try:
        res = self_check(case)
    except MMSInconsistent:
        return weak_residuals(case, mms_discretization(16, 8)), None, 0.0
    t0 = time.perf_counter()
    rep = convergence_study(case, (8, 16, 32), ratio=2)
    return res, rep, time.perf_counter() - t0


def mms_check(beta):
    _, rep, secs = mms_study(beta)
    if rep is None:
        return False, f"beta={beta:g}: manufactured data failed the self-check; no convergence run"
    slope = rep.slopes["combined"]
    mono = {c: rep.monotone(c) for c in CHECKED}
    ok = slope >= 0.9 and all(mono.values()) and secs <= MMS_BUDGET
    detail = (f"beta={beta:g}: combined slope {slope:.3f}, slopes "
              + ", ".join(f"{c}={rep.slopes[c]:.2f}" for c in CHECKED)
              + f", monotone={all(mono.values())}, {secs:.0f}s")
    return ok, detail


@lru_cache(maxsize=None)
def thick_betas():
    return tuple(r[3] for r in thick_infsup_levels((8, 16, 32), ratio=2))


def infsup_check():
    b = thick_betas()
    return max(b) <= 2 * min(b), f"beta_h = {', '.join(f'{v:.4f}' for v in b)} (max/min {max(b) / min(b):.3f})"


def test_criterion_1_energy_stability(acceptance):
    ok, detail = energy_check((RHO_F, 2 * RHO_F))
    assert acceptance(1, "energy stability, disk release", ok, detail), detail


def test_criterion_2_mms_convergence(acceptance):
    ok, detail = mms_check(1.0)
    assert acceptance(2, "stationary MMS convergence", ok, detail), detail


def test_criterion_3_thick_infsup(acceptance):
    ok, detail = infsup_check()
    assert acceptance(3, "thick inf-sup robustness", ok, detail), detail


def test_criterion_4_thin_ratio(acceptance):
    sweep = [r[3] for r in thin_ratio_sweep((0.5, 1, 2, 4), n_segments=32)]
    fixed = [r[3] for r in thin_fixed_ratio(0.5, (32, 64, 128))]
    nonincreasing = all(b1 <= b0 for b0, b1 in zip(sweep, sweep[1:]))
    within = max(fixed) <= 2 * min(fixed)
    detail = (f"sweep h_x/h_s=1/2,1,2,4: {', '.join(f'{b:.4f}' for b in sweep)}; "
              f"fixed 1/2 at 32/64/128 segments: {', '.join(f'{b:.4f}' for b in fixed)}")
    assert acceptance(4, "thin mesh-ratio effect", nonincreasing and within, detail), detail


def _p1_mass(mesh):
    k = mesh.cells.shape[1]
    loc = (np.ones((k, k)) + np.eye(k)) / (12 if k == 3 else 6)
    M = np.zeros((mesh.n_vertices, mesh.n_vertices))
    for c, meas in zip(mesh.cells, mesh.measures()):
        M[np.ix_(c, c)] += meas * loc
    return np.kron(np.eye(2), M)


def _nested_oracle_error(nx=8):
    # P1 fluid, solid grid = fluid cells inside B: C_f is the B-restricted P1 mass
    fmesh = build_rect_fluid_mesh(nx, nx)
    smesh = build_solid_square_mesh(nx // 2)
    V, S = FESpace(fmesh, "P1", 2), FESpace(smesh, "P1", 2)
    Xid = FEFunction(S, np.ascontiguousarray(smesh.vertices.T).reshape(-1))
    C_f, _ = assemble_coupling(V, S, S, CouplingConfig(Xid))
    lookup = {tuple(np.round(p, 12)): i for i, p in enumerate(fmesh.vertices)}
    cols = np.array([lookup[tuple(np.round(p, 12))] for p in smesh.vertices])
    ref = np.zeros((S.n_dofs, V.n_dofs))
    M = _p1_mass(smesh)
    ns, nf = S.n_scalar, V.n_scalar
    for c in range(2):
        ref[c * ns:(c + 1) * ns, c * nf + cols] = M[:ns, :ns]
    return float(np.abs(C_f.toarray() - ref).max())


def test_criterion_5_structural_invariants(acceptance):
    d = disk_discretization(16, 1)
    rng = np.random.default_rng(0)
    prm = PhysicalParams(RHO_F, 2.0, 0.1, 1.0, 1e-2).model()
    A = assemble_fluid_operator(d.V, prm)
    checks = {"A_f symmetry": (float(abs(A - A.T).max()), 1e-12)}
    N = assemble_convection(d.V, FEFunction(d.V, rng.standard_normal(d.V.n_dofs)))
    checks["N + N^T"] = (float(abs(N + N.T).max()), 1e-12)
    Xid = d.identity_map()
    worst_const = 0.0
    for Xbar in (Xid, FEFunction(d.S, Xid.coefficients + 0.02 * np.sin(5 * Xid.coefficients))):
        C_f, C_s = d.coupling(Xbar)
        one = (interpolate(d.V, (1.0, 0.0)), interpolate(d.V, (0.0, 1.0)))
        for k, c in enumerate(((1.0, 0.0), (0.0, 1.0))):
            diff = C_f @ one[k].coefficients - C_s @ interpolate(d.S, c).coefficients
            worst_const = max(worst_const, float(np.abs(diff).max()))
    checks["C_s vs independent mass"] = (float(np.abs(C_s.toarray() - _p1_mass(d.solid_mesh)).max()), 1e-13)
    checks["C_f 1 = C_s 1"] = (worst_const, 1e-12)
    checks["nested-mesh oracle"] = (_nested_oracle_error(), 1e-10)

    # pressure mean after every solve: 20 coupled steps with convection, plus static solves
    w = pressure_mean_vector(d.Q)
    means = []
    X0 = interpolate(d.S, lambda s: CENTER + (s - CENTER) * STRETCH)
    run(d, PhysicalParams(RHO_F, 2.0, 0.1, 1.0, 1e-2), FEFunction(d.V), X0, 20, convection=True,
        on_step=lambda st, row: means.append(abs(w @ st.p.coefficients)))
    system = build_system(d.blocks(prm, Xid))
    for seed in range(3):
        r = np.random.default_rng(seed)
        sol = solve(system, (r.standard_normal(d.V.n_dofs), None, r.standard_normal(d.S.n_dofs),
                             r.standard_normal(d.S.n_dofs)))
        means.append(abs(w @ sol.p.coefficients))
    checks["zero-mean pressure"] = (max(means), 1e-10)

    sol = solve(system, (None, None, None, None))
    zero_static = max(np.abs(f.coefficients).max() for f in (sol.u, sol.p, sol.X, sol.lam))
    Xc = FEFunction(d.S, np.repeat(CENTER, d.S.n_scalar))
    res = run(d, PhysicalParams(RHO_F, 2.0, 0.1, 1.0, 1e-2), FEFunction(d.V), Xc, 5)
    zero_dyn = max(np.abs(res.state.u.coefficients).max(), np.abs(res.state.X.coefficients - Xc.coefficients).max())
    checks["zero data -> zero solution"] = (max(zero_static, zero_dyn), 1e-10)

    ok = all(v <= tol for v, tol in checks.values())
    detail = "; ".join(f"{k} {v:.1e} (tol {tol:g})" for k, (v, tol) in checks.items())
    assert acceptance(5, "structural invariants", ok, detail), detail


def test_criterion_6_beta_zero_branch(acceptance):
    ok1, d1 = energy_check((RHO_F,))
    ok2, d2 = mms_check(0.0)
    ok3, d3 = infsup_check()  # the constraint operator does not involve beta
    detail = f"[1] {d1} | [2] {d2} | [3] {d3}"
    assert acceptance(6, "beta = 0 branch (rho_s = rho_f)", ok1 and ok2 and ok3, detail), detail


def test_criterion_7_mms_self_consistency(acceptance):
    worst = {}
    for beta in (1.0, 0.0):
        res, _, _ = mms_study(beta)
        worst[beta] = max(res.values())
    ok = all(v <= 1e-8 for v in worst.values())
    detail = ", ".join(f"beta={b:g}: max weak residual {v:.1e}" for b, v in worst.items())
    assert acceptance(7, "MMS self-consistency", ok, detail), detail
