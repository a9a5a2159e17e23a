import numpy as np
import pytest

from statequil import maxent as mx
from statequil import potentials as pt
from statequil import statefield as sf


@pytest.fixture(scope="module")
def grid2():
    return sf.PhaseGrid.symmetric(2, 4.5, 8.0, 24)


@pytest.fixture(scope="module")
def rotating(grid2):
    return mx.match_constraints(pt.harmonic(), grid2, 2.0, 0.5)


def second_moments(rho, grid):
    q = grid.q_mesh()
    vol = grid.q_cell_volume
    return [float(np.sum(rho * qk * qk)) * vol for qk in q]


def test_harmonic_fixed_point_is_gaussian(grid2):
    # sigma_q^2 = T / (2 e^2 a) for V = a r^2; the regularized self-cell term costs O(dq^2)
    res = mx.solve_fixed_point(pt.harmonic(), grid2, T=1.0)
    for s2 in second_moments(res.rho, grid2):
        assert s2 == pytest.approx(0.5, rel=2e-3)
    assert res.residual < 1e-8
    np.testing.assert_allclose(res.lambda_q, 0.0, atol=1e-10)


def test_fixed_point_independent_of_damping(grid2):
    V = pt.softcore(1.0, 1.0, 1.0)
    a = mx.solve_fixed_point(V, grid2, 1.0, theta=0.3, tol=1e-11)
    b = mx.solve_fixed_point(V, grid2, 1.0, theta=0.8, tol=1e-11)
    np.testing.assert_allclose(a.rho, b.rho, atol=1e-9)


def test_fixed_point_map_fixes_its_solution(grid2):
    res = mx.solve_fixed_point(pt.harmonic(), grid2, T=0.7, tol=1e-12)
    img = mx.rho_fixed_point_map(res.rho, grid2, 0.7, 0.0, res.lambda_q, pt.harmonic())
    assert np.max(np.abs(img - res.rho)) < 1e-11


def test_fixed_point_argument_validation(grid2):
    with pytest.raises(ValueError):
        mx.solve_fixed_point(pt.harmonic(), grid2, 1.0, theta=0.0)
    with pytest.raises(ValueError):
        mx.rho_fixed_point_map(np.ones(grid2.q_n), grid2, -1.0, 0.0, [0, 0], pt.harmonic())


def test_nonconvergence_reports_history(grid2):
    with pytest.raises(mx.NonConvergenceError):
        mx.solve_fixed_point(pt.harmonic(), grid2, 1.0, tol=1e-14, max_iter=3)


def test_hot_state_escapes_the_box(grid2):
    with pytest.raises(mx.DivergenceError):
        mx.solve_fixed_point(pt.harmonic(), grid2, T=40.0)


def test_energy_matching_nonrotating(grid2):
    rep = mx.match_constraints(pt.harmonic(), grid2, 2.0)
    # epsilon = d T for the harmonic trap
    assert rep.multipliers.T == pytest.approx(1.0, rel=1e-3)
    assert rep.multipliers.omega == 0.0
    assert max(rep.constraint_errors.values()) < 1e-4
    assert rep.values["entropy"] == pytest.approx(2 * np.log(2 * np.pi * np.e) + np.log(0.5), rel=1e-3)


def test_symmetric_potential_gives_even_momentum_profile(grid2):
    rep = mx.match_constraints(pt.softcore(1.0, 1.0, 1.0), grid2, 2.0)
    v = rep.f.values
    np.testing.assert_allclose(v, v[:, :, ::-1, ::-1], rtol=1e-12, atol=1e-15)


def test_rotating_closed_form_relations(rotating):
    T, w = rotating.multipliers.T, rotating.multipliers.omega
    s_perp = T / (2.0 - w * w)
    assert second_moments(rotating.rho, rotating.grid)[0] == pytest.approx(s_perp, rel=1e-3)
    assert 2 * w * 2 * s_perp / 2 == pytest.approx(0.5, rel=1e-2)
    assert rotating.values["angmom"][0] == pytest.approx(0.5, abs=1e-6)


def test_assembled_density_reproduces_rigid_rotation(rotating):
    ms = sf.macrostate(rotating.f)
    w = rotating.multipliers.omega
    q = rotating.grid.q_mesh()
    bulk = ms.rho > 1e-3 * ms.rho.max()
    np.testing.assert_allclose(ms.u[0][bulk], np.broadcast_to(-w * q[1], ms.rho.shape)[bulk], rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(ms.u[1][bulk], np.broadcast_to(w * q[0], ms.rho.shape)[bulk], rtol=1e-6, atol=1e-6)


def test_assemble_f_marginal_is_rho(rotating):
    np.testing.assert_allclose(rotating.f.q_marginal(), rotating.rho, rtol=1e-10, atol=1e-16)


def test_assemble_rejects_short_momentum_box(rotating):
    g = sf.PhaseGrid.symmetric(2, 4.5, 2.0, 24)
    with pytest.raises(mx.TruncationError):
        mx.assemble_f(rotating.rho, g, rotating.multipliers.T, rotating.multipliers.omega)


def test_fixed_point_regression(rotating):
    reg = mx.fixed_point_regression(rotating, pt.harmonic())
    assert reg["r2"] >= 0.9999
    assert reg["lambda_e"] == pytest.approx(-1.0 / rotating.multipliers.T, rel=1e-6)
    assert reg["lambda_j"][0] == pytest.approx(rotating.multipliers.omega / rotating.multipliers.T, rel=1e-6)


def test_lagrange_multipliers(rotating):
    mult = mx.lagrange_multipliers(rotating, pt.harmonic())
    assert np.isfinite(mult.lambda_n)
    d = mult.as_dict()
    assert d["lambda_e"] == pytest.approx(-1.0 / mult.T)
    with pytest.raises(ValueError):
        mx.MultiplierSet(T=0.0, omega=0.0, lambda_q=[0, 0])


def test_infeasible_angular_momentum():
    g = sf.PhaseGrid.symmetric(2, 4.5, 8.0, 16)
    with pytest.raises(mx.InfeasibleConstraints, match="centrifugal"):
        mx.match_constraints(pt.harmonic(), g, 2.0, 50.0, max_iter=300)


def test_meanfield_inadmissible_potential_rejected(grid2):
    with pytest.raises(pt.NotMeanFieldAdmissible):
        mx.match_constraints(pt.coulomb(), grid2, 2.0)


def test_classify_rules(rotating):
    assert mx.classify(rotating, 1.0, 0.0) == "thermostatic"
    assert mx.classify(rotating, 1e-3, 0.1) == "thermostationary"
    assert mx.classify(rotating, 0.5, 0.1) == "thermodynamical"
    assert mx.classify(None, 0.0, 0.0) == "unclassified"


def test_classify_report_stores_label(rotating):
    out = mx.classify_report(rotating, pt.harmonic(), tol_stat=1.0)
    assert out["label"] == "thermostationary"
    assert rotating.classification == "thermostationary"
    assert out["u_field_norm"] > 0.1


@pytest.mark.slow
def test_rotating_residual_decreases_under_refinement():
    res = []
    for n in (16, 32):
        g = sf.PhaseGrid.symmetric(2, 4.5, 8.0, n)
        rep = mx.match_constraints(pt.harmonic(), g, 2.0, 0.5)
        res.append(mx.classify_report(rep, pt.harmonic())["stationarity_residual"])
    assert res[1] < 0.5 * res[0]


@pytest.mark.parametrize("n", [16, 20, 24])
def test_rotation_found_when_first_guess_is_the_root(n):
    # for the harmonic pair the initial omega = ell / I is already the solution
    g = sf.PhaseGrid.symmetric(2, 5.0, 8.0, n)
    rep = mx.match_constraints(pt.harmonic(), g, 2.0, 0.5)
    assert rep.multipliers.omega == pytest.approx(0.5, rel=1e-6)
    assert rep.constraint_errors["angmom"] <= 1e-8
