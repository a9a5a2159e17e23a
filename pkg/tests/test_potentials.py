import numpy as np
import pytest
from hypothesis import given, strategies as st

from statequil import potentials as pt

SHIPPED = [pt.harmonic(1.0), pt.softcore(1.0, 1.0, 1.0), pt.coulomb(1.0), pt.gravity(1.0), pt.linear(1.0), pt.lennard_jones(1.0)]


@pytest.mark.parametrize("V,r,expected", [
    (pt.harmonic(1.0), 2.0, 4.0),
    (pt.harmonic(1.0), 0.5, 0.25),
    (pt.softcore(1.0, 1.0, 1.0), 1.0, 1.5),
])
def test_evaluate_examples(V, r, expected):
    assert pt.evaluate(V, r) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("r", [0.0, -1.0])
def test_nonpositive_radius_is_domain_error(r):
    with pytest.raises(pt.PotentialDomainError):
        pt.evaluate(pt.harmonic(), r)


@pytest.mark.parametrize("V", SHIPPED, ids=lambda v: v.id)
def test_derivative_matches_finite_difference(V):
    r = pt.default_probe()
    h = 1e-5 * r
    fd = (V.value(r + h) - V.value(r - h)) / (2 * h)
    d = V.deriv(r)
    scale = np.maximum(np.abs(d), 1e-300)
    # cancellation floor of the centered difference: eps * |V| / h
    floor = 1e-10 * np.abs(V.value(r)) / h
    assert np.all(np.abs(fd - d) <= 1e-6 * scale + floor)


def test_harmonic_passes_everything():
    rep = pt.check_hypotheses(pt.harmonic())
    assert rep.all_pass and rep.meanfield_ok


def test_softcore_passes_everything():
    assert pt.check_hypotheses(pt.softcore(1.0, 1.0, 1.0)).all_pass


def test_coulomb_is_not_confining():
    rep = pt.check_hypotheses(pt.coulomb())
    assert not rep.confining
    assert rep.repulsive_or_flat_origin


def test_gravity_fails_confinement():
    assert not pt.check_hypotheses(pt.gravity()).confining


def test_linear_fails_superlinear_growth():
    rep = pt.check_hypotheses(pt.linear())
    assert rep.confining
    assert not rep.meanfield_superlinear


def test_lennard_jones_not_integrable_at_origin():
    rep = pt.check_hypotheses(pt.lennard_jones())
    assert not rep.locally_integrable


def test_report_is_deterministic():
    a = pt.check_hypotheses(pt.softcore(2.0, 0.5, 0.3)).as_dict()
    b = pt.check_hypotheses(pt.softcore(2.0, 0.5, 0.3)).as_dict()
    assert a == b


def test_probe_must_span_required_decades():
    with pytest.raises(ValueError):
        pt.check_hypotheses(pt.harmonic(), probe=np.logspace(-2, 2, 50))


def test_evaluation_failure_reports_flag_instead_of_raising():
    bad = pt.PairPotential("bad", {}, lambda r: np.where(r > 1e3, np.nan, r * r), lambda r: 2 * r)
    rep = pt.check_hypotheses(bad)
    assert not rep.c2_smooth


def test_require_meanfield_rejects_coulomb():
    with pytest.raises(pt.NotMeanFieldAdmissible):
        pt.require_meanfield(pt.coulomb())
    pt.require_meanfield(pt.harmonic())


def test_negative_charge_sign_breaks_confinement():
    V = pt.PairPotential("h", {"a": 1.0}, lambda r: r * r, lambda r: 2 * r, charge_sign=-1)
    assert not pt.check_hypotheses(V).confining


def test_make_potential_roundtrip():
    V = pt.make_potential({"id": "softcore", "a": 1.0, "b": 2.0, "c": 0.5})
    assert V.to_config() == {"id": "softcore", "a": 1.0, "b": 2.0, "c": 0.5}
    with pytest.raises(ValueError):
        pt.make_potential({"id": "nope"})


@given(st.floats(1e-3, 1e3), st.floats(0.1, 10.0))
def test_harmonic_dv_over_r_is_constant(r, a):
    V = pt.harmonic(a)
    assert V.dv_over_r(np.array([r]))[0] == pytest.approx(2 * a, rel=1e-12)
