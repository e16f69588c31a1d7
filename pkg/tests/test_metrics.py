import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from conftest import make_portfolio
from fairprice import glm
from fairprice.knn import DistanceSpec
from fairprice.metrics import (FairnessPanel, binary_panel, contingency_hgr, divergences, fairness_panel,
                               flip_test, hgr_kde, hgr_kde_full, joint_mass_grid, kendall_tau, ks_threshold,
                               ks_two_sample, lipschitz_violations, mean_ratio)
from oracles import binary_hgr_chi2, kendall_tau_b_pairs, kolmogorov_series, ks_stat_exhaustive

floats = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


# -- binary panel -----------------------------------------------------------------


def test_binary_constant_predictions():
    bp = binary_panel(np.ones(10), [0, 1] * 5)
    assert bp.disparate_impact == 1.0 and bp.m1 == 0.0
    assert bp.mistreatment_10 is None


def test_binary_constructed_table():
    # group 1: 6 of 10 positive, group 0: 3 of 10 positive
    s = np.array([1] * 10 + [0] * 10)
    yh = np.array([1] * 6 + [0] * 4 + [1] * 3 + [0] * 7)
    bp = binary_panel(yh, s)
    assert bp.disparate_impact == pytest.approx(2.0)
    assert bp.m1 == pytest.approx(0.3)


def test_binary_m1_equals_m0_on_complement():
    rng = np.random.default_rng(1)
    yh, s = rng.integers(0, 2, 200), rng.integers(0, 2, 200)
    assert binary_panel(yh, s).m1 == pytest.approx(binary_panel(1 - yh, s).m1, abs=1e-15)


def test_binary_zero_denominator_and_mistreatment():
    s = np.array([1, 1, 0, 0])
    assert binary_panel([1, 0, 0, 0], s).disparate_impact == math.inf
    y = np.array([0, 1, 0, 1])
    bp = binary_panel([1, 1, 0, 1], s, y)
    # Y=0: S=1 row predicted 1, S=0 row predicted 0; Y=1: both predicted 1
    assert bp.mistreatment_10 == 1.0 and bp.mistreatment_01 == 0.0


# -- Kendall ------------------------------------------------------------------------


def test_kendall_examples():
    assert kendall_tau([1, 2, 3, 4], [1, 2, 3, 4]) == pytest.approx(1.0)
    assert kendall_tau([1, 2, 3], [3, 1, 2]) == pytest.approx(-1 / 3)


def test_kendall_binary_ties_vs_pair_count():
    rng = np.random.default_rng(5)
    a = rng.integers(0, 20, 100).astype(float)
    b = rng.integers(0, 2, 100).astype(float)
    assert kendall_tau(a, b) == pytest.approx(kendall_tau_b_pairs(a, b), abs=1e-12)


def test_kendall_constant_errors():
    with pytest.raises(ValueError):
        kendall_tau([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        kendall_tau([1], [1])


@given(st.lists(st.tuples(floats, floats), min_size=3, max_size=40))
def test_kendall_antisymmetric_and_matches_oracle(pairs):
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    assume(np.unique(a).size > 1 and np.unique(b).size > 1)
    t = kendall_tau(a, b)
    assert t == -kendall_tau(a, -b)
    assert t == pytest.approx(kendall_tau_b_pairs(a, b), abs=1e-12)


# -- HGR -------------------------------------------------------------------------------


def test_hgr_independent_large_sample():
    rng = np.random.default_rng(2)
    assert hgr_kde(rng.normal(size=50_000), rng.normal(size=50_000)) < 0.05


def test_hgr_near_deterministic():
    rng = np.random.default_rng(3)
    u = rng.normal(size=5_000)
    assert hgr_kde(u, u + 1e-6 * rng.normal(size=5_000)) > 0.95


def test_hgr_binary_near_deterministic():
    rng = np.random.default_rng(3)
    s = rng.integers(0, 2, 5_000)
    # kernel smoothing leaks a little mass across the gap between the groups
    assert hgr_kde(s, s * 10.0 + rng.normal(size=5_000)) > 0.9


def test_hgr_gaussian_half():
    rng = np.random.default_rng(4)
    z = rng.multivariate_normal([0, 0], [[1, 0.5], [0.5, 1]], 50_000)
    assert hgr_kde(z[:, 0], z[:, 1]) == pytest.approx(0.5, abs=0.05)


def test_hgr_degenerate_and_small_sample():
    r = hgr_kde_full(np.arange(50.0), np.ones(50))
    assert r.value == 0.0 and r.degenerate
    with pytest.warns(RuntimeWarning):
        r = hgr_kde_full(np.arange(10.0), np.arange(10.0) ** 2)
    assert r.unreliable


@pytest.mark.parametrize("binary", [False, True])
def test_hgr_grid_is_a_mass(binary):
    rng = np.random.default_rng(6)
    u = rng.integers(0, 2, 3000).astype(float) if binary else rng.normal(size=3000)
    v = rng.gamma(2.0, size=3000) + u
    J = joint_mass_grid(u, v)
    assert J.shape == ((2, 256) if binary else (64, 64))
    assert np.all(J >= 0)
    assert abs(J.sum() - 1) < 1e-9


@given(seed=st.integers(0, 10_000), binary=st.booleans())
def test_hgr_symmetric_and_bounded(seed, binary):
    rng = np.random.default_rng(seed)
    u = rng.integers(0, 2, 400).astype(float) if binary else rng.normal(size=400)
    v = rng.normal(size=400) + 0.5 * u
    h = hgr_kde(u, v)
    assert 0 <= h <= 1
    assert h == pytest.approx(hgr_kde(v, u), abs=1e-6)


@given(seed=st.integers(0, 10_000), a=st.floats(0.1, 50), b=st.floats(-100, 100))
def test_hgr_monotone_transform(seed, a, b):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 2, 500)
    v = rng.gamma(2.0, size=500) * (1 + 0.3 * s)
    h = hgr_kde(s, v)
    assert abs(hgr_kde(s, a * v + b) - h) <= 0.02
    assert abs(hgr_kde(s, np.exp(v / v.max())) - h) <= 0.02


def test_contingency_hgr_matches_chi2():
    rng = np.random.default_rng(7)
    s = rng.integers(0, 2, 2000)
    z = np.where(rng.random(2000) < 0.3 + 0.2 * s, rng.integers(0, 5, 2000), 0)
    assert contingency_hgr(s, z) == pytest.approx(binary_hgr_chi2(s, z), abs=1e-12)
    assert contingency_hgr(s, s) == pytest.approx(1.0)


# -- KS ---------------------------------------------------------------------------------


def test_ks_identity_and_disjoint():
    a = np.array([3.0, 1.0, 2.0, 2.0])
    assert ks_two_sample(a, a[::-1]) == (0.0, 1.0)
    assert ks_two_sample([1, 2, 3, 4], [5, 6, 7, 8])[0] == 1.0


def test_ks_random_vs_oracles():
    rng = np.random.default_rng(8)
    for _ in range(50):
        a, b = rng.normal(size=200), rng.normal(0.1, 1.0, size=200)
        d, p = ks_two_sample(a, b)
        assert d == ks_stat_exhaustive(a, b)
        assert abs(p - kolmogorov_series(math.sqrt(100) * d)) < 1e-3


def test_ks_empty_errors():
    with pytest.raises(ValueError):
        ks_two_sample([], [1.0])


def test_ks_pvalue_floor():
    d, p = ks_two_sample(np.zeros(5000), np.ones(5000))
    assert d == 1.0 and p == 1e-300


ints = st.integers(-1000, 1000)


@given(st.lists(ints, min_size=1, max_size=30), st.lists(ints, min_size=1, max_size=30))
def test_ks_invariant_under_increasing_map(a, b):
    # integer-valued samples keep the map strictly increasing in floating point
    a, b = np.array(a, dtype=float), np.array(b, dtype=float)
    d = ks_two_sample(a, b)[0]
    assert d == ks_two_sample(np.arctan(a / 100) * 3 + 7, np.arctan(b / 100) * 3 + 7)[0]
    assert d == ks_stat_exhaustive(a, b)


@given(seed=st.integers(0, 10_000), alpha=st.sampled_from([0.01, 0.05]))
def test_ks_rule_matches_threshold(seed, alpha):
    rng = np.random.default_rng(seed)
    n0, n1 = rng.integers(20, 300, 2)
    a, b = rng.normal(size=n0), rng.normal(rng.uniform(0, 0.5), size=n1)
    d, p = ks_two_sample(a, b)
    thr = ks_threshold(n0, n1, alpha)
    # the closed-form threshold keeps only the first series term
    if abs(d - thr) > 1e-3:
        assert (d > thr) == (p < alpha)


# -- divergences --------------------------------------------------------------------------


def test_divergence_identity():
    a = np.random.default_rng(9).normal(size=500)
    kl, js = divergences(a, a)
    assert kl == 0.0 and js == 0.0


def test_divergence_hand_value():
    a = np.array([0.0] * 5 + [1.0] * 5)
    b = np.array([0.0] * 9 + [1.0])
    kl, _ = divergences(a, b, bins=2)
    assert kl == pytest.approx(0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1), abs=1e-8)
    assert kl == pytest.approx(0.5108, abs=1e-4)


def test_divergence_disjoint_hits_bound():
    _, js = divergences(np.zeros(100), np.ones(100), bins=10)
    assert js == pytest.approx(math.log(2), abs=1e-6)


@given(st.lists(floats, min_size=1, max_size=50), st.lists(floats, min_size=1, max_size=50),
       st.integers(2, 40))
def test_js_symmetric_and_bounded(a, b, bins):
    kl, js = divergences(a, b, bins)
    _, js2 = divergences(b, a, bins)
    assert js == pytest.approx(js2, abs=1e-12)
    assert 0 <= js <= math.log(2)
    assert kl >= -1e-12


# -- mean ratio ------------------------------------------------------------------------------


def test_mean_ratio_examples():
    assert mean_ratio([5, 5, 5, 5], [0, 1, 0, 1]) == 1.0
    assert mean_ratio([120, 100, 120, 100], [1, 0, 1, 0]) == pytest.approx(1.2)
    v = np.array([10.0, 20.0, 30.0, 40.0, 50.0, 60.0])
    s = np.array([1, 1, 1, 0, 0, 0])
    w = np.array([1.0, 2.0, 1.0, 0.5, 0.5, 1.0])
    num = (10 + 40 + 30) / 4
    den = (20 + 25 + 60) / 2
    assert mean_ratio(v, s, w) == pytest.approx(num / den)
    with pytest.raises(ValueError):
        mean_ratio([1.0, 0.0], [1, 0])


# -- flip test -----------------------------------------------------------------------------------


def _mirrored(c):
    x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    base = np.array([10.0, 20.0, 15.0, 30.0, 25.0])
    p = make_portfolio({"a": np.concatenate([x, x]), "s": [1] * 5 + [0] * 5, "y": np.ones(10)})
    return p, np.concatenate([base + c, base])


def test_flip_mirrored_shift():
    p, pred = _mirrored(7.5)
    ft = flip_test(p, pred, DistanceSpec("manhattan", ("a",)), k=1)
    assert ft.ft1 == pytest.approx(7.5) and ft.ft0 == pytest.approx(-7.5)


def test_flip_constant_and_full_group():
    p, pred = _mirrored(3.0)
    spec = DistanceSpec("manhattan", ("a",))
    ft = flip_test(p, np.full(10, 4.0), spec, k=2)
    assert ft.ft1 == 0.0 and ft.ft0 == 0.0
    full = flip_test(p, pred, spec, k=5)
    assert np.allclose(full.delta[:5], pred[:5] - pred[5:].mean())
    assert np.allclose(full.delta[5:], pred[5:] - pred[:5].mean())
    assert flip_test(p, pred, spec, k=8).truncated


@given(c=st.floats(-1e4, 1e4), seed=st.integers(0, 1000))
def test_flip_shift_invariance(c, seed):
    rng = np.random.default_rng(seed)
    p = make_portfolio({"a": rng.normal(size=40), "s": np.tile([0, 1], 20), "y": np.ones(40)})
    pred = rng.gamma(2.0, 30.0, 40)
    spec = DistanceSpec("manhattan", ("a",))
    d1 = flip_test(p, pred, spec, 3).delta
    d2 = flip_test(p, pred + c, spec, 3).delta
    assert np.allclose(d1, d2, atol=1e-9 * (1 + abs(c)))


# -- Lipschitz -------------------------------------------------------------------------------------


def test_lipschitz_hand_instance():
    a = np.array([0.0, 1.0, 3.0, 3.0, 6.0])
    p = make_portfolio({"a": a, "s": [0, 1, 0, 1, 0], "y": np.ones(5)})
    pred = np.array([0.0, 2.0, 2.5, 4.0, 7.0])
    spec = DistanceSpec("manhattan", ("a",), standardize=False)
    bad = sum(abs(pred[i] - pred[j]) >= 1.0 * abs(a[i] - a[j]) and pred[i] != pred[j]
              for i in range(5) for j in range(i + 1, 5))
    assert lipschitz_violations(p, pred, 1.0, spec) == pytest.approx(bad / 10)
    assert lipschitz_violations(p, np.ones(5), 1.0, spec) == 0.0
    # pair (2, 3) sits at distance 0 with unequal premiums: violated for any lambda
    assert lipschitz_violations(p, pred, 1e300, spec) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        lipschitz_violations(p, pred, 0.0, spec)


def test_lipschitz_sampled_mode_close_to_exhaustive():
    rng = np.random.default_rng(3)
    a = rng.normal(size=600)
    p = make_portfolio({"a": a, "s": rng.integers(0, 2, 600), "y": np.ones(600)})
    pred = 2 * a + rng.normal(size=600)
    spec = DistanceSpec("manhattan", ("a",))
    full = lipschitz_violations(p, pred, 2.0, spec)
    est = lipschitz_violations(p, pred, 2.0, spec, max_exhaustive=100, n_pairs=100_000)
    assert est == pytest.approx(full, abs=0.01)


# -- panel -----------------------------------------------------------------------------------------


def test_panel_signs_on_biased_book(biased):
    m = glm.fit(biased, glm.GlmSpec())
    pred = m.predict(biased)
    spec = DistanceSpec("manhattan", ("driv_age", "veh_power", "zone", "driv_2"))
    panel = fairness_panel(biased, pred, spec)
    # S=1 carries the higher losses, so tau(Yhat, S) is positive and group 0
    # sits below its opposite-group neighbours
    assert panel.kendall_tau > 0
    assert panel.flip_test_0 < 0 < panel.flip_test_1
    assert panel.mean_ratio > 1
    assert 0 <= panel.js_divergence <= math.log(2)
    assert FairnessPanel.from_dict(panel.to_dict()) == panel
    assert len(panel.csv_row()) == 8
