from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from dlmfsi.errors import MMSInconsistent
from dlmfsi.fem import interpolate
from dlmfsi.verification import (B_BOUNDS, COMPONENTS, convergence_study, error_norms, infsup_study,
                                 loglog_slope, mms_case, mms_discretization, self_check, solve_mms,
                                 thick_infsup_levels, thin_ratio_sweep, weak_residuals)


@pytest.fixture(scope="module")
def case():
    return mms_case()


@pytest.fixture(scope="module")
def study(case):
    return convergence_study(case, (8, 16, 32))


def test_velocity_divergence_free_and_zero_on_boundary(case):
    rng = np.random.default_rng(0)
    pts = rng.random((500, 2))
    assert np.abs(case.div_u(pts)).max() < 1e-12
    # divergence from the gradient callable as well
    g = case.grad_u(pts)
    assert np.abs(g[:, 0, 0] + g[:, 1, 1]).max() < 1e-12
    t = rng.random(100)
    for side in (np.column_stack([t, 0 * t]), np.column_stack([t, 0 * t + 1]),
                 np.column_stack([0 * t, t]), np.column_stack([0 * t + 1, t])):
        assert np.abs(case.u(side)).max() < 1e-14


def test_pressure_mean_zero(case):
    x = (np.arange(400) + 0.5) / 400
    X, Y = np.meshgrid(x, x)
    assert abs(case.p(np.stack([X, Y], -1)).mean()) < 1e-12


def test_solid_neumann_condition(case):
    x0, y0, x1, y1 = B_BOUNDS
    t = np.linspace(x0, x1, 50)
    for pts, n in ((np.column_stack([t, 0 * t + y0]), (0, -1)), (np.column_stack([t, 0 * t + y1]), (0, 1)),
                   (np.column_stack([0 * t + x0, t]), (-1, 0)), (np.column_stack([0 * t + x1, t]), (1, 0))):
        assert np.abs(case.grad_X(pts) @ np.array(n, float)).max() < 1e-14
    assert np.abs(case.grad_X(np.array([[0.4, 0.6]]))).max() > 0.1  # nontrivial field


def test_constraint_data(case):
    pts = np.random.default_rng(1).random((50, 2)) * 0.5 + 0.25
    np.testing.assert_allclose(case.d(pts), case.u(pts) - case.X(pts), atol=1e-15)


def test_self_check_passes(case):
    res = self_check(case)
    assert max(res.values()) <= 1e-8


def test_self_check_detects_wrong_data(case):
    bad = replace(case, g=lambda pts: case.g(pts) + 1e-3)
    with pytest.raises(MMSInconsistent, match="solid"):
        self_check(bad)
    bad = replace(case, f=lambda pts: case.f(pts) * 1.001)
    with pytest.raises(MMSInconsistent, match="momentum"):
        self_check(bad)


def test_self_check_other_parameters():
    from dlmfsi.assembly import ModelParams
    c = mms_case(ModelParams(100.0, 0.0, 0.01, 0.1))
    assert max(weak_residuals(c, mms_discretization(16, 8), n_tests=5).values()) <= 1e-8


def interpolant(case, nx):
    d = mms_discretization(nx)
    return SimpleNamespace(u=interpolate(d.V, case.u), p=interpolate(d.Q, case.p),
                           X=interpolate(d.S, case.X), lam=interpolate(d.L, case.lam))


def test_interpolant_error_rates(case):
    e1, e2 = error_norms(interpolant(case, 8), case), error_norms(interpolant(case, 16), case)
    assert 3.3 < e1.u_h1 / e2.u_h1 < 4.7     # P2 in H1
    assert 6.5 < e1.u_l2 / e2.u_l2 < 9.5     # P2 in L2
    assert 3.3 < e1.p_l2 / e2.p_l2 < 4.7     # P1 in L2
    assert 1.7 < e1.X_h1 / e2.X_h1 < 2.3     # P1 in H1


def test_dual_proxy_bounded_by_l2(case, study):
    for e in study.errors:
        assert e.lam_dual <= e.lam_l2
    e = error_norms(interpolant(case, 8), case)
    assert e.lam_dual <= e.lam_l2


def test_exact_discrete_fields_have_zero_error(case):
    # exact polynomial fields reproduced by the spaces: zero error to rounding
    d = mms_discretization(8)
    lin = lambda pts: np.stack([pts[..., 0], 2 * pts[..., 1]], -1)
    c = replace(case, u=lin, X=lin, lam=lin, p=lambda pts: pts[..., 0] - 0.5,
                grad_u=lambda pts: np.broadcast_to(np.diag([1.0, 2.0]), pts.shape[:-1] + (2, 2)),
                grad_X=lambda pts: np.broadcast_to(np.diag([1.0, 2.0]), pts.shape[:-1] + (2, 2)))
    sol = SimpleNamespace(u=interpolate(d.V, lin), p=interpolate(d.Q, lambda x: x[:, 0] - 0.5),
                          X=interpolate(d.S, lin), lam=interpolate(d.L, lin))
    e = error_norms(sol, c)
    assert max(getattr(e, k) for k in COMPONENTS) < 1e-13


def test_convergence_study(study):
    assert study.slopes["combined"] >= 0.9
    for name in ("u_h1", "p_l2", "X_h1", "lam_dual", "combined"):
        assert study.monotone(name), name
    assert study.slopes["u_l2"] > study.slopes["u_h1"]
    assert max(study.residuals) <= 1e-10
    rows = study.rows()
    assert len(rows) == 3 and len(rows[0]) == 2 + len(COMPONENTS)
    assert rows[1][0] == pytest.approx(rows[0][0] / 2) and rows[0][1] == pytest.approx(2 * rows[0][0])


def test_study_needs_three_levels(case):
    with pytest.raises(ValueError, match="three"):
        convergence_study(case, (8,))
    with pytest.raises(ValueError):
        convergence_study(case, (16, 8, 32))
    with pytest.raises(ValueError):
        mms_discretization(10)


def test_fluid_only_refinement_plateaus(case):
    # solid grid frozen at h_s = 1/4: the solid error stops improving
    errs = []
    for nx in (8, 16, 32):
        errs.append(error_norms(solve_mms(case, mms_discretization(nx, 2)), case).X_h1)
    assert errs[1] / errs[2] < 1.3


def test_loglog_slope():
    h = np.array([0.1, 0.05, 0.025])
    assert loglog_slope(h, 3 * h ** 1.5) == pytest.approx(1.5, abs=1e-12)


def test_thin_ratio_sweep_monotone():
    rows = thin_ratio_sweep((1, 2, 4), n_segments=16)
    betas = [r[3] for r in rows]
    assert all(b > 0 for b in betas)
    assert all(b1 <= b0 * (1 + 1e-10) for b0, b1 in zip(betas, betas[1:]))
    assert [r[2] for r in rows] == [1.0, 2.0, 4.0]
    with pytest.raises(ValueError):
        thin_ratio_sweep((3,), n_segments=16)


def test_thick_infsup_levels():
    rows = thick_infsup_levels((4, 8))
    b = [r[3] for r in rows]
    assert max(b) / min(b) <= 2 and min(b) >= 1 - 1e-10
    assert rows[0][2] == pytest.approx(0.5)
    assert infsup_study(0, levels=(4,))[0][3] == pytest.approx(b[0])
