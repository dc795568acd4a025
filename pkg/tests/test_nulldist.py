import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from jointgt.core import CovariateSet, ResponseVector, combined_stat_sum, single_set_stat
from jointgt.nulldist import (
    IntegrationError,
    SpectralNull,
    pvalue_asymptotic,
    spectral_decompose,
    spectral_from_sets,
    weighted_chi2_sf,
)
from jointgt.permute import PermutationPlan, permutation_pvalue


def test_identity_spectrum():
    null = spectral_decompose(np.eye(3))
    np.testing.assert_allclose(null.weights, [1, 1, 1])
    assert null.rank == 3


def test_rank_one_spectrum():
    v = np.array([1.0, 1.0, 1.0, 1.0])
    null = spectral_decompose(np.outer(v, v))
    np.testing.assert_allclose(null.weights, [4.0])
    assert null.rank == 1


def test_spectrum_matches_singular_values():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 3))
    xc = x - x.mean(axis=0)
    direct = spectral_decompose(xc @ xc.T)
    sv = np.linalg.svd(xc, compute_uv=False) ** 2
    np.testing.assert_allclose(direct.weights, np.sort(sv)[::-1], rtol=1e-10)
    via_sets = spectral_from_sets([CovariateSet(x)])
    np.testing.assert_allclose(via_sets.weights, direct.weights, rtol=1e-10)
    assert np.all(np.diff(direct.weights) <= 0)


def test_truncation_of_tiny_eigenvalues():
    kernel = np.diag([5.0, 1e-12, 0.0, 2.0])
    np.testing.assert_allclose(spectral_decompose(kernel).weights, [5.0, 2.0])


@pytest.mark.parametrize("kernel, match", [
    (np.array([[1.0, 0.5], [0.0, 1.0]]), "symmetric"),
    (np.diag([1.0, -1.0]), "indefinite"),
    (np.ones((2, 3)), "square"),
])
def test_decompose_rejects(kernel, match):
    with pytest.raises(ValueError, match=match):
        spectral_decompose(kernel)


def test_spectral_null_validation():
    with pytest.raises(ValueError, match="non-negative"):
        SpectralNull(np.array([1.0, -0.1]), 5, 4)
    with pytest.raises(ValueError, match="degrees of freedom"):
        SpectralNull(np.ones(5), 5, 4)


def beta_sf(q, w, df):
    # for one weight, q / w = chi2_1 / (chi2_1 + chi2_{df-1}) ~ Beta(1/2, (df-1)/2)
    return stats.beta.sf(q / w, 0.5, (df - 1) / 2)


@pytest.mark.parametrize("df", [2, 3, 5, 11, 50, 400, 2000])
@pytest.mark.parametrize("frac", [0.001, 0.05, 0.3, 0.8, 0.999])
def test_single_weight_matches_beta_oracle(df, frac):
    w = 2.5
    null = SpectralNull(np.array([w]), df + 1, df)
    assert pvalue_asymptotic(frac * w, null) == pytest.approx(beta_sf(frac * w, w, df), abs=1e-6)


def test_single_weight_matches_permutation_oracle():
    # N = 12, one covariate column, 1e5 sampled permutations
    rng = np.random.default_rng(7)
    n = 12
    y = rng.standard_normal(n)
    y = ResponseVector(y - y.mean(), "g")
    x = CovariateSet(rng.standard_normal((n, 1)))
    s = single_set_stat(y, x)
    p_asym = pvalue_asymptotic(s, spectral_from_sets([x]))
    perm = permutation_pvalue(y, [x], "sum-raw", PermutationPlan(100_000, seed=1))
    se = np.sqrt(p_asym * (1 - p_asym) / 100_000)
    assert abs(p_asym - perm.p) <= 3 * se + 1e-5
    # and the closed form for a rank-one kernel
    assert p_asym == pytest.approx(beta_sf(s.q_raw, spectral_from_sets([x]).weights[0], n - 1), abs=1e-6)


def test_two_weights_against_monte_carlo():
    w = np.array([3.0, 1.0])
    df = 6
    rng = np.random.default_rng(3)
    chi = rng.standard_normal((400_000, df)) ** 2
    ratio = (chi[:, :2] @ w) / chi.sum(axis=1)
    null = SpectralNull(w, df + 1, df)
    for q in (0.3, 1.0, 2.0):
        mc = float(np.mean(ratio >= q))
        assert pvalue_asymptotic(q, null) == pytest.approx(mc, abs=4 * np.sqrt(mc * (1 - mc) / chi.shape[0]) + 1e-6)


def test_boundaries():
    null = SpectralNull(np.array([4.0, 1.0]), 10, 9)
    assert pvalue_asymptotic(0.0, null) == 1.0
    assert pvalue_asymptotic(4.5, null) == 0.0
    # full-rank kernel: the ratio never drops below the smallest weight
    full = SpectralNull(np.array([3.0, 2.0, 1.0]), 4, 3)
    assert pvalue_asymptotic(0.5, full) == 1.0
    assert pvalue_asymptotic(1.0, full) == 1.0


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.1, 10), min_size=1, max_size=6), st.integers(0, 20),
       st.lists(st.floats(0.0, 1.0), min_size=2, max_size=6))
def test_monotone_in_statistic(weights, extra_df, fracs):
    w = np.array(weights)
    null = SpectralNull(w, w.size + extra_df + 1, w.size + extra_df)
    qs = np.sort(np.array(fracs)) * w.max() * 1.05
    ps = [pvalue_asymptotic(q, null) for q in qs]
    assert all(0.0 <= p <= 1.0 for p in ps)
    assert all(b <= a + 1e-6 for a, b in zip(ps, ps[1:]))


def test_equal_weights_give_uniform_pvalues():
    # r < df equal weights: simulate 1e4 null draws of the ratio and check p is uniform
    w, r, df = 2.0, 3, 15
    null = SpectralNull(np.full(r, w), df + 1, df)
    rng = np.random.default_rng(11)
    chi = rng.standard_normal((10_000, df)) ** 2
    q = w * chi[:, :r].sum(axis=1) / chi.sum(axis=1)
    p = np.array([pvalue_asymptotic(v, null) for v in q])
    res = stats.kstest(p, "uniform")
    assert res.statistic < stats.kstwo.ppf(0.99, p.size)


def test_joint_statistic_against_merged_kernel():
    rng = np.random.default_rng(5)
    n = 15
    y = rng.standard_normal(n)
    y = ResponseVector(y - y.mean())
    x = CovariateSet(rng.standard_normal((n, 3)), "X")
    z = CovariateSet(rng.standard_normal((n, 2)), "Z")
    comb = combined_stat_sum([single_set_stat(y, x), single_set_stat(y, z)], "raw")
    null = spectral_from_sets([x, z])
    p = pvalue_asymptotic(comb, null)
    assert 0 < p < 1
    assert p == pytest.approx(pvalue_asymptotic(comb.q_sum, null))
    with pytest.raises(ValueError, match="raw"):
        pvalue_asymptotic(combined_stat_sum([single_set_stat(y, x), single_set_stat(y, z)], "standardized"), null)


def test_weighted_chi2_sign_shortcuts():
    assert weighted_chi2_sf([1.0, 2.0]) == 1.0
    assert weighted_chi2_sf([-1.0, -2.0]) == 0.0
    assert weighted_chi2_sf([0.0]) == 0.0
    # symmetric difference of two chi2_1 variables
    assert weighted_chi2_sf([1.0, -1.0]) == pytest.approx(0.5, abs=1e-6)


def test_integration_error_carries_diagnostics():
    with pytest.raises(IntegrationError) as info:
        weighted_chi2_sf([1.0, -1e-300], atol=1e-300)
    assert "upper_limit" in info.value.diagnostics
