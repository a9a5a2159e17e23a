import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize, stats

from statequil import statefield as sf
from statequil import transport as tr


def random_measure(rng, n, dim=4, uniform=False):
    pts = rng.normal(size=(n, dim))
    w = np.ones(n) if uniform else rng.random(n) + 0.05
    return tr.DiscreteMeasure.normalized(pts, w)


def lp_oracle(mu, nu):
    c = tr.cost_matrix(mu.support, nu.support)
    n, m = c.shape
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m:(i + 1) * m] = 1
    for j in range(m):
        a_eq[n + j, j::m] = 1
    res = optimize.linprog(c.ravel(), A_eq=a_eq, b_eq=np.concatenate([mu.mass, nu.mass]), bounds=(0, None), method="highs")
    return res.fun


def test_dirac_to_dirac_is_distance():
    mu = tr.DiscreteMeasure([[0.0, 0.0, 0.0, 0.0]], [1.0])
    nu = tr.DiscreteMeasure([[3.0, 0.0, 0.0, 4.0]], [1.0])
    assert tr.kr_distance_exact(mu, nu) == pytest.approx(5.0, rel=1e-14)
    assert tr.kr_distance_exact(mu, nu, alpha_q=4.0) == pytest.approx(np.sqrt(36 + 16), rel=1e-14)


def test_uniform_measures_match_permutation_enumeration(rng):
    mu = random_measure(rng, 5, uniform=True)
    nu = random_measure(rng, 5, uniform=True)
    c = tr.cost_matrix(mu.support, nu.support)
    best = min(c[range(5), list(p)].sum() for p in itertools.permutations(range(5))) / 5
    assert tr.kr_distance_exact(mu, nu) == pytest.approx(best, rel=1e-12)


def test_weighted_measures_match_linear_program(rng):
    mu = random_measure(rng, 7)
    nu = random_measure(rng, 9)
    assert tr.kr_distance_exact(mu, nu) == pytest.approx(lp_oracle(mu, nu), rel=1e-9)


def test_one_dimensional_cdf_formula(rng):
    x, y = rng.normal(size=30), rng.normal(1.0, 2.0, size=40)
    wx, wy = rng.random(30), rng.random(40)
    mu = tr.DiscreteMeasure.normalized(x[:, None], wx)
    nu = tr.DiscreteMeasure.normalized(y[:, None], wy)
    ref = stats.wasserstein_distance(x, y, wx, wy)
    assert tr.kr_distance_exact(mu, nu) == pytest.approx(ref, rel=1e-10)


def test_entropic_upper_bounds_and_approximates_exact(rng):
    mu = random_measure(rng, 40)
    nu = random_measure(rng, 50)
    exact = tr.kr_distance_exact(mu, nu)
    ent = tr.kr_distance_entropic(mu, nu, reg=0.02 * exact)
    assert exact - 1e-12 <= ent <= 1.05 * exact


def test_sinkhorn_nonconvergence_is_reported(rng):
    mu = random_measure(rng, 20)
    nu = random_measure(rng, 20)
    with pytest.raises(tr.SinkhornNotConverged):
        tr.kr_distance_entropic(mu, nu, reg=1e-4, max_iter=3)
    with pytest.raises(ValueError):
        tr.kr_distance_entropic(mu, nu, reg=0.0)


def test_size_cap(rng):
    big = tr.DiscreteMeasure.normalized(np.zeros((1001, 4)), np.ones(1001))
    with pytest.raises(tr.TransportSizeError, match="pre-bin"):
        tr.kr_distance_exact(big, big)


def test_measure_validation():
    with pytest.raises(ValueError):
        tr.DiscreteMeasure([[0.0], [1.0]], [0.5, 0.6])
    with pytest.raises(ValueError):
        tr.DiscreteMeasure([[np.nan]], [1.0])
    with pytest.raises(ValueError):
        tr.DiscreteMeasure([[0.0], [1.0]], [1.0])


def test_grid_density_conversion_and_binning(rng):
    g = sf.PhaseGrid.symmetric(2, 2.0, 2.0, 8)
    pts = rng.uniform(-1.9, 1.9, size=(200, 4))
    m = tr.binned(pts, g)
    assert m.mass.sum() == pytest.approx(1.0)
    # binning moves each atom by at most half a cell diagonal
    direct = tr.DiscreteMeasure.normalized(pts, np.ones(200))
    assert tr.kr_distance_exact(direct, m) <= 0.5 * np.sqrt(4 * 0.5**2) + 1e-12


@given(st.integers(0, 2**31), st.floats(0.1, 10.0))
def test_metric_properties(seed, scale):
    rng = np.random.default_rng(seed)
    a, b, c = (random_measure(rng, 6, dim=2) for _ in range(3))
    dab = tr.kr_distance_exact(a, b)
    assert dab >= 0
    assert tr.kr_distance_exact(a, a) == pytest.approx(0.0, abs=1e-12)
    assert dab == pytest.approx(tr.kr_distance_exact(b, a), rel=1e-10, abs=1e-12)
    assert dab <= tr.kr_distance_exact(a, c) + tr.kr_distance_exact(c, b) + 1e-10
    assert tr.kr_distance_exact(a.scaled(scale), b.scaled(scale)) == pytest.approx(scale * dab, rel=1e-9, abs=1e-12)
    v = rng.normal(size=2)
    assert tr.kr_distance_exact(a, a.shifted(v)) == pytest.approx(np.linalg.norm(v), rel=1e-9)
