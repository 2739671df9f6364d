import os

import numpy as np
import pytest

from dlmfsi.errors import EnergyViolation, InvertibilityWarning
from dlmfsi.fem import FEFunction, interpolate
from dlmfsi.mesh import build_rect_fluid_mesh, build_solid_curve_mesh, build_solid_disk_mesh, circle_curve_points
from dlmfsi.saddle import FSIDiscretization
from dlmfsi.timestepper import (LOG_FIELDS, PhysicalParams, energy, init_first_step, initial_state, run,
                                solid_jacobians, step, write_energy_log)

CENTER = np.array([0.5, 0.5])


@pytest.fixture(scope="module")
def disc():
    return FSIDiscretization(build_rect_fluid_mesh(8, 8), build_solid_disk_mesh(CENTER, 0.2, 1))


def affine(disc, A, b=(0.0, 0.0)):
    s = disc.solid_mesh.vertices
    return FEFunction(disc.S, np.ascontiguousarray((CENTER + (s - CENTER) @ np.asarray(A).T + b).T).reshape(-1))


def stretched(disc, k=1.2):
    return affine(disc, np.diag([k, 1 / k]))


def phys(rho_s=2.0, dt=1e-2):
    return PhysicalParams(rho_f=1.0, rho_s=rho_s, nu=0.1, kappa=1.0, dt=dt)


def test_params_validation():
    with pytest.raises(ValueError, match="drho"):
        PhysicalParams(1.0, 0.5, 0.1, 1.0, 0.01)
    with pytest.raises(ValueError):
        PhysicalParams(1.0, 1.0, 0.1, 1.0, 0.0)
    p = phys(3.0, 0.5).model()
    assert (p.alpha, p.beta, p.gamma) == (2.0, 4.0, 0.5)


def test_init_first_step(disc):
    X0 = stretched(disc)
    X1 = init_first_step(disc, FEFunction(disc.V), X0, 0.01)
    np.testing.assert_array_equal(X1.coefficients, X0.coefficients)
    c = np.array([0.3, -0.7])
    X1 = init_first_step(disc, interpolate(disc.V, c), X0, 0.01)
    np.testing.assert_allclose(X1.nodal_values() - X0.nodal_values(), np.tile(0.01 * c, (disc.S.n_scalar, 1)),
                               atol=1e-14)


def test_initial_state_energy(disc):
    c = np.array([0.3, -0.7])
    st = initial_state(disc, interpolate(disc.V, c), disc.identity_map(), phys())
    E = energy(disc, st, phys())
    area = disc.solid_mesh.measures().sum()
    assert E.kinetic == pytest.approx(0.5 * c @ c, rel=1e-13)
    assert E.solid_kinetic == pytest.approx(0.5 * (c @ c) * area, rel=1e-12)
    assert E.elastic == pytest.approx(0.5 * 2 * area, rel=1e-12)  # |grad id|^2 = 2


def test_elastic_energy_affine_closed_form(disc):
    A = np.array([[1.3, 0.2], [-0.4, 0.9]])
    X = affine(disc, A, (0.01, -0.02))
    st = initial_state(disc, FEFunction(disc.V), X, phys())
    area = disc.solid_mesh.measures().sum()
    assert energy(disc, st, phys()).elastic == pytest.approx(
        0.5 * np.sum(A ** 2) * area, rel=1e-12)
    np.testing.assert_allclose(solid_jacobians(X), np.linalg.det(A), rtol=1e-12)


def test_zero_state_energy(disc):
    st = initial_state(disc, FEFunction(disc.V), affine(disc, np.zeros((2, 2))), phys())
    E = energy(disc, st, phys())
    assert (E.kinetic, E.solid_kinetic, E.elastic) == (0.0, 0.0, 0.0)


def test_thin_jacobians():
    sm = build_solid_curve_mesh(circle_curve_points(CENTER, 0.2, 16), closed=True)
    X = FEFunction(FSIDiscretization(build_rect_fluid_mesh(4, 4), sm).S,
                   np.ascontiguousarray((CENTER + 1.5 * (sm.vertices - CENTER)).T).reshape(-1))
    np.testing.assert_allclose(solid_jacobians(X), 1.5, rtol=1e-13)


def test_constant_map_is_fixed_point(disc):
    X0 = affine(disc, np.zeros((2, 2)))
    st = initial_state(disc, FEFunction(disc.V), X0, phys())
    for _ in range(3):
        st, info = step(disc, st, phys())
    # X^{n+1} = dt * X_solved: exact up to the solve tolerance
    assert np.abs(st.u.coefficients).max() < 1e-11
    assert np.abs(st.X.coefficients - X0.coefficients).max() < 1e-11
    assert info.dissipation < 1e-26


def test_one_step_zero_log(disc):
    res = run(disc, phys(), FEFunction(disc.V), affine(disc, np.zeros((2, 2))), 1)
    assert len(res.log) == 1
    row = res.log[0]
    assert row["step"] == 1 and row["time"] == pytest.approx(0.01)
    assert all(abs(row[k]) < 1e-20 for k in LOG_FIELDS[2:])
    assert res.E0 == 0.0 and res.n_violations == 0


def test_energy_decreases(disc):
    res = run(disc, phys(), FEFunction(disc.V), stretched(disc), 10)
    totals = [res.E0] + [r["total"] for r in res.log]
    assert np.all(np.diff(totals) <= 1e-10 * res.E0)
    assert res.n_violations == 0
    assert res.log[-1]["elastic"] < res.log[0]["elastic"]
    # balance identity: E^{n+1} - E^n + dissipation = dt * balance
    for prev, r in zip([res.E0] + totals[1:-1], res.log):
        assert r["balance"] * 0.01 == pytest.approx(r["total"] - prev + r["dissipation"], abs=1e-15)


def test_equal_density_has_no_solid_kinetic(disc):
    res = run(disc, phys(rho_s=1.0), FEFunction(disc.V), stretched(disc), 5)
    assert all(r["solid_kinetic"] == 0.0 for r in res.log)
    assert res.n_violations == 0


def test_strict_audit_raises_and_saves(disc, tmp_path):
    # a negative tolerance forces every step to count as a violation
    with pytest.raises(EnergyViolation) as err:
        run(disc, phys(), FEFunction(disc.V), stretched(disc), 3, audit="strict", tol_energy=-1e6,
            out_dir=str(tmp_path))
    assert err.value.step == 1 and err.value.excess > 0
    assert (tmp_path / "violation_step00001.npz").exists()
    res = run(disc, phys(), FEFunction(disc.V), stretched(disc), 3, audit="true", tol_energy=-1e6)
    assert res.n_violations == 3 and all(r["violation"] == 1 for r in res.log)
    res = run(disc, phys(), FEFunction(disc.V), stretched(disc), 3, audit="false", tol_energy=-1e6)
    assert res.n_violations == 0
    with pytest.raises(ValueError):
        run(disc, phys(), FEFunction(disc.V), stretched(disc), 1, audit="maybe")


def test_outputs(disc, tmp_path):
    res = run(disc, phys(), FEFunction(disc.V), stretched(disc), 4, out_dir=str(tmp_path), vtk_cadence=2)
    names = sorted(os.listdir(tmp_path))
    assert "state_00000.vtk" in names and "state_00004.vtk" in names and "state_00001.vtk" not in names
    write_energy_log(tmp_path / "energy.csv", res.log)
    lines = (tmp_path / "energy.csv").read_text().splitlines()
    assert lines[0] == ",".join(LOG_FIELDS) and len(lines) == 5


def test_time_step_self_convergence():
    d = FSIDiscretization(build_rect_fluid_mesh(8, 8), build_solid_disk_mesh(CENTER, 0.2, 0))
    T = 0.04
    finals = []
    for dt in (0.01, 0.005, 0.0025, 0.00125):
        res = run(d, phys(dt=dt), FEFunction(d.V), stretched(d), round(T / dt))
        finals.append(res.state.X.coefficients)
    e = [np.linalg.norm(finals[i] - finals[i + 1]) for i in range(3)]
    rates = np.log2(np.array(e[:-1]) / np.array(e[1:]))
    assert np.all(rates >= 0.9), rates


def test_invertibility_warning(disc, monkeypatch):
    import dlmfsi.timestepper as ts
    real = ts.step

    def collapsing(*a, **kw):
        st, info = real(*a, **kw)
        return st, ts.StepInfo(info.dissipation, info.relative_residual, 1e-9)

    monkeypatch.setattr(ts, "step", collapsing)
    with pytest.warns(InvertibilityWarning, match="Jacobian"):
        run(disc, phys(), FEFunction(disc.V), stretched(disc), 2)
