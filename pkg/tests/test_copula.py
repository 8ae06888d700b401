import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import ndtri

from rmtcredit._rng import substream
from rmtcredit.copula import (SCENARIOS, CopulaHistogram, TwoPortfolioSpec, block_correlation, corner_masses,
                              deviation_map, empirical_copula, gaussian_copula_histogram, joint_loss_samples,
                              rank_transform, scenario_spec, scenario_suite, size_effect)
from rmtcredit.exceptions import ContractViolation, DegenerateSeriesError, DomainError
from rmtcredit.merton import PortfolioSpec

B = 20


def chi2_pvalue(hist, expected_mass):
    counts = hist.mass * hist.sample_count
    expected = expected_mass * hist.sample_count
    return stats.chisquare(counts.ravel(), expected.ravel()).pvalue


def gaussian_box_oracle(r, a, b):
    """P(Phi^-1(a0) < Z1 < Phi^-1(a1), Phi^-1(b0) < Z2 < Phi^-1(b1)) by inclusion-exclusion."""
    mvn = stats.multivariate_normal(mean=[0, 0], cov=[[1, r], [r, 1]])
    x0, x1 = ndtri(a[0]), ndtri(a[1])
    y0, y1 = ndtri(b[0]), ndtri(b[1])
    big = 40.0

    def F(x, y):
        return mvn.cdf([min(x, big), min(y, big)]) if x > -big and y > -big else 0.0

    return F(x1, y1) - F(x0, y1) - F(x1, y0) + F(x0, y0)


# two-portfolio setup -------------------------------------------------------------------

def test_overlapping_portfolios_rejected():
    market = PortfolioSpec.homogeneous(10)
    with pytest.raises(ContractViolation):
        TwoPortfolioSpec(market, 0.3, [0, 1, 2], [2, 3, 4])
    with pytest.raises(ContractViolation):
        TwoPortfolioSpec(market, 0.3, [0, 1], [2, 3, 4])
    with pytest.raises(ContractViolation):
        TwoPortfolioSpec(market, 0.3, [0, 1], [9, 10])


def test_nearly_comonotone_market():
    # F = 2 V0: almost every contract loses, so ties at zero play no role
    market = PortfolioSpec.homogeneous(20, F=200.0, V0=100.0, mu=0.0, rho=0.35)
    spec = TwoPortfolioSpec(market, 0.999, np.arange(10), np.arange(10, 20))
    s1, s2 = joint_loss_samples(spec, 50_000, 2)
    assert np.corrcoef(s1.losses, s2.losses)[0, 1] > 0.99
    h = empirical_copula(s1, s2, B, seed=2)
    assert np.trace(h.mass) + np.trace(h.mass, 1) + np.trace(h.mass, -1) > 0.9


def test_joint_samples_match_single_portfolio_law():
    market = PortfolioSpec.homogeneous(20, rho=0.35)
    spec = TwoPortfolioSpec(market, 0.3, np.arange(10), np.arange(10, 20))
    s1, s2 = joint_loss_samples(spec, 100_000, 5)
    assert stats.ks_2samp(s1.losses, s2.losses).pvalue > 1e-3


# empirical copula --------------------------------------------------------------------------

def test_independent_uniforms_are_flat():
    rng = substream(30)
    h = empirical_copula(rng.random(200_000), rng.random(200_000), B)
    assert chi2_pvalue(h, np.full((B, B), 1 / B**2)) > 1e-3


def test_identical_samples_lie_on_diagonal():
    x = substream(31).random(20_000)
    h = empirical_copula(x, x.copy(), B)
    np.testing.assert_allclose(np.diag(h.density), B, rtol=1e-12)
    assert np.all(h.density[~np.eye(B, dtype=bool)] == 0)


def test_gaussian_pairs_match_reference():
    r = 0.8
    Z = substream(32).multivariate_normal([0, 0], [[1, r], [r, 1]], 200_000)
    h = empirical_copula(Z[:, 0], Z[:, 1], B)
    assert chi2_pvalue(h, gaussian_copula_histogram(r, B).mass) > 1e-3


def test_monotone_transforms_do_not_change_copula():
    Z = substream(33).multivariate_normal([0, 0], [[1, 0.5], [0.5, 1]], 10_000)
    a = empirical_copula(Z[:, 0], Z[:, 1], B)
    b = empirical_copula(np.exp(Z[:, 0]), Z[:, 1] ** 3, B)
    assert np.array_equal(a.density, b.density)


def test_margins_uniform_with_ties_and_mass_one():
    rng = substream(34)
    l1 = np.where(rng.random(10_000) < 0.4, 0.0, rng.random(10_000))
    l2 = np.where(rng.random(10_000) < 0.7, 0.0, rng.random(10_000))
    h = empirical_copula(l1, l2, B, ties="jitter", seed=1)
    assert h.mass.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(h.mass.sum(axis=0), 1 / B, atol=1e-12)
    np.testing.assert_allclose(h.mass.sum(axis=1), 1 / B, atol=1e-12)


def test_swapping_portfolios_transposes():
    rng = substream(35)
    l1 = np.where(rng.random(8_000) < 0.5, 0.0, rng.random(8_000))
    l2 = np.where(rng.random(8_000) < 0.3, 0.0, rng.random(8_000))
    a = empirical_copula(l1, l2, B, seed=4)
    b = empirical_copula(l2, l1, B, seed=4)
    assert np.array_equal(a.density, b.density.T)


@given(st.integers(2, 300), st.integers(0, 10**6))
def test_rank_transform_is_a_permutation(n, seed):
    x = substream(seed).integers(0, 4, n).astype(float)
    if np.all(x == x[0]):
        return
    u = rank_transform(x, seed=seed)
    np.testing.assert_allclose(np.sort(u), (np.arange(1, n + 1) - 0.5) / n)
    assert np.all(np.diff(x[np.argsort(u, kind="stable")]) >= 0)


def test_mid_ranks():
    u = rank_transform([0.0, 0.0, 1.0, 2.0], ties="mid")
    np.testing.assert_allclose(u, [1.0 / 4, 1.0 / 4, 2.5 / 4, 3.5 / 4])


def test_degenerate_margin_rejected():
    with pytest.raises(DegenerateSeriesError):
        empirical_copula(np.zeros(1000), substream(36).random(1000), B)


# Gaussian reference ---------------------------------------------------------------------------

def test_gaussian_histogram_independent_is_flat():
    g = gaussian_copula_histogram(0.0, B)
    np.testing.assert_allclose(g.density, 1.0, rtol=1e-14)


@pytest.mark.parametrize("r", [-0.6, 0.3, 0.8, 0.95])
def test_gaussian_histogram_symmetries_and_mass(r):
    g = gaussian_copula_histogram(r, B)
    np.testing.assert_allclose(g.density, g.density.T, atol=1e-13)
    np.testing.assert_allclose(g.density, g.density[::-1, ::-1], atol=1e-13)
    assert g.mass.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(g.mass.sum(axis=1), 1 / B, atol=1e-7)


@pytest.mark.parametrize("r", [0.3, 0.8])
def test_gaussian_corner_against_bivariate_normal(r):
    g = gaussian_copula_histogram(r, B)
    c = corner_masses(g)
    assert c["(0,0)"] == pytest.approx(gaussian_box_oracle(r, (0, 0.1), (0, 0.1)), abs=1e-4)
    assert c["(0,1)"] == pytest.approx(gaussian_box_oracle(r, (0, 0.1), (0.9, 1.0)), abs=1e-4)


def test_gaussian_single_bin_against_dblquad():
    r = 0.7
    g = gaussian_copula_histogram(r, B)
    lo, hi = ndtri(0.45), ndtri(0.5)
    pdf = stats.multivariate_normal(mean=[0, 0], cov=[[1, r], [r, 1]]).pdf
    ref = integrate.dblquad(lambda y, x: pdf([x, y]), lo, hi, lo, hi, epsabs=1e-12)[0]
    assert g.mass[9, 9] == pytest.approx(ref, abs=1e-9)


def test_gaussian_histogram_rejects_unit_correlation():
    with pytest.raises(DomainError):
        gaussian_copula_histogram(1.0, B)


def test_deviation_zero_for_reference_itself():
    g = gaussian_copula_histogram(0.5, B)
    e = CopulaHistogram(g.density.copy(), B, 1000)
    dev = deviation_map(e, g)
    assert np.all(dev.difference == 0)
    assert all(v == 0 for v in dev.corners.values())
    assert dev.loss_correlation == 0.5


# scenarios ---------------------------------------------------------------------------------------

@pytest.mark.parametrize("name", SCENARIOS)
def test_scenario_specs_are_valid(name):
    spec = scenario_spec(name, K=20, rng=substream(1))
    assert spec.K == 20 and spec.market.K == 40
    assert spec.market.maturity == 252.0


def test_block_correlation_structure():
    C = block_correlation([3, 4], 0.45, 0.2)
    assert C[0, 1] == pytest.approx(0.45) and C[0, 5] == pytest.approx(0.2)
    with pytest.raises(DomainError):
        block_correlation([2, 2], 0.1, 0.3)


def test_scenario_suite_deterministic_and_summarized():
    a = scenario_suite("drift-mid", trials=3000, repetitions=3, seed=9, K=20)
    b = scenario_suite("drift-mid", trials=3000, repetitions=3, seed=9, K=20)
    assert np.array_equal(a.empirical.density, b.empirical.density)
    s = a.summary()
    assert s["repetitions"] == 3 and set(s["corners"]) == {"(0,0)", "(0,1)", "(1,0)", "(1,1)"}
    assert 0 < s["correlation"] < 1
    assert a.empirical.mass.sum() == pytest.approx(1.0)


def test_drift_scenarios_order_nondefault_ratio():
    ratios = [scenario_suite(n, trials=20_000, repetitions=1, seed=1).nondefault.mean()
              for n in ("drift-high", "drift-mid", "drift-neg")]
    assert ratios[0] > ratios[1] > ratios[2]
    assert ratios[2] < 0.005


def test_size_effect_small():
    out = size_effect((4, 14, 50), trials=20_000, seed=3)
    assert out[4] < out[14] < out[50]


def test_corner_se_never_below_one_sample():
    a = scenario_suite("drift-neg", trials=2000, repetitions=3, seed=4, K=20)
    s = a.summary()
    for k, se in s["corner_se"].items():
        assert se >= 1.0 / (2000 * 3)
    # anti-diagonal corners are empty in every repetition and the reference is negligible there
    assert abs(s["corners"]["(0,1)"]) < s["corner_se"]["(0,1)"]
