"""Distributional tests for the low-level samplers.

Reference values come from Bessel-ratio closed forms and scipy distributions
(used here only as oracles); seeds are fixed so every assertion is
deterministic.
"""

import numpy as np
import pytest
from oracles import HALF_NORMAL_NEG_MEAN, gig_mean, gig_var, truncnorm_moments
from scipy import stats as sps

from mcqr.samplers import (
    GigParams,
    SamplerStats,
    TruncInterval,
    sample_gig,
    sample_gig_many,
    sample_inverse_wishart,
    sample_mvnormal,
    sample_truncnorm,
    sample_truncnorm_many,
)


def rng_for(tag):
    return np.random.default_rng(np.random.SeedSequence(abs(hash(tag)) % 2**32))


# ---------------------------------------------------------------------------
# generalized inverse Gaussian
# ---------------------------------------------------------------------------

# (lam, nu, chi) chosen to exercise each internal regime:
#   mode-shifted ratio-of-uniforms (lam >= 1, and lam < 1 with omega > 1),
#   plain ratio-of-uniforms (lam < 1, moderate omega),
#   three-piece hat (small omega), including lam = 0 and the reciprocal
#   path lam < 0 used by the mixing-weight conditional at p = 3.
GIG_CASES = [
    (1.5, 2.0, 3.0),
    (0.5, 4.0, 1.0),
    (0.5, 0.9, 0.8),
    (0.3, 0.05, 0.4),
    (0.0, 0.2, 0.05),
    (-0.5, 2.0, 0.7),
    (-0.5, 0.1, 0.1),
    (2.0, 10.0, 0.01),
]


@pytest.mark.parametrize("lam,nu,chi", GIG_CASES)
def test_gig_mean_matches_bessel_ratio(lam, nu, chi):
    rng = np.random.default_rng(np.random.SeedSequence(2024))
    n = 200_000
    draws = sample_gig_many(lam, nu, np.full(n, chi), rng)
    se = np.sqrt(gig_var(lam, nu, chi) / n)
    assert abs(draws.mean() - gig_mean(lam, nu, chi)) < 3.5 * se


@pytest.mark.parametrize("lam,nu,chi", [(1.5, 2.0, 3.0), (0.5, 0.9, 0.8), (0.0, 0.2, 0.05), (-0.5, 2.0, 0.7)])
def test_gig_distribution_ks(lam, nu, chi):
    rng = np.random.default_rng(np.random.SeedSequence(7))
    draws = sample_gig_many(lam, nu, np.full(20_000, chi), rng)
    omega = np.sqrt(nu * chi)
    alpha = np.sqrt(chi / nu)
    res = sps.kstest(draws, lambda x: sps.geninvgauss.cdf(x, lam, omega, scale=alpha))
    assert res.pvalue > 1e-4


def test_gig_acceptance_rate_bounded_below():
    stats = SamplerStats()
    rng = np.random.default_rng(0)
    for lam, nu, chi in GIG_CASES:
        sample_gig_many(lam, nu, np.full(5_000, chi), rng, stats)
    assert stats.gig_accepts == 8 * 5_000
    assert stats.gig_acceptance_rate > 0.1


def test_gig_vector_chi_and_scalar_wrapper():
    rng = np.random.default_rng(3)
    chi = np.array([0.2, 1.0, 5.0])
    draws = sample_gig_many(0.0, 1.5, chi, rng)
    assert draws.shape == (3,)
    assert np.all(draws > 0)
    x = sample_gig(GigParams(lam=-0.5, nu=2.0, chi=0.7), np.random.default_rng(4))
    assert isinstance(x, float) and x > 0


def test_gig_determinism():
    a = sample_gig_many(0.5, 1.0, np.full(100, 0.5), np.random.default_rng(11))
    b = sample_gig_many(0.5, 1.0, np.full(100, 0.5), np.random.default_rng(11))
    np.testing.assert_array_equal(a, b)


def test_gig_parameter_validation():
    with pytest.raises(ValueError):
        sample_gig_many(0.5, -1.0, np.array([1.0]), np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_gig_many(0.5, 1.0, np.array([0.0]), np.random.default_rng(0))
    with pytest.raises(ValueError):
        GigParams(lam=0.5, nu=1.0, chi=-2.0)


# ---------------------------------------------------------------------------
# truncated normal
# ---------------------------------------------------------------------------


def test_truncnorm_half_normal_mean():
    rng = np.random.default_rng(np.random.SeedSequence(21))
    n = 200_000
    draws = sample_truncnorm_many(
        np.zeros(n), np.ones(n), np.full(n, -np.inf), np.zeros(n), rng
    )
    assert np.all(draws < 0)
    var = 1.0 - 2.0 / np.pi
    assert abs(draws.mean() - HALF_NORMAL_NEG_MEAN) < 3.5 * np.sqrt(var / n)


@pytest.mark.parametrize(
    "mean,var,lo,hi",
    [
        (0.0, 1.0, -1.0, 2.0),    # central CDF inversion
        (1.5, 4.0, -0.5, 0.5),    # shifted and scaled
        (0.0, 1.0, 3.0, np.inf),  # one-sided, still inversion region
        (0.0, 1.0, 7.0, 9.0),     # right-tail rejection
        (0.0, 1.0, -np.inf, -6.5),  # left-tail rejection
    ],
)
def test_truncnorm_distribution_ks(mean, var, lo, hi):
    rng = np.random.default_rng(np.random.SeedSequence(22))
    n = 20_000
    draws = sample_truncnorm_many(
        np.full(n, mean), np.full(n, var), np.full(n, lo), np.full(n, hi), rng
    )
    assert np.all(draws > lo) and np.all(draws < hi)
    sd = np.sqrt(var)
    res = sps.kstest(draws, sps.truncnorm((lo - mean) / sd, (hi - mean) / sd, loc=mean, scale=sd).cdf)
    assert res.pvalue > 1e-4


def test_truncnorm_deep_tail_moments():
    # far beyond double-precision CDF resolution; the rejection branch must
    # still match the Mills-ratio moments
    rng = np.random.default_rng(np.random.SeedSequence(23))
    n = 50_000
    draws = sample_truncnorm_many(
        np.zeros(n), np.ones(n), np.full(n, 40.0), np.full(n, 41.0), rng
    )
    assert np.all((draws > 40.0) & (draws < 41.0))
    m, v = truncnorm_moments(0.0, 1.0, 40.0, 41.0)
    assert abs(draws.mean() - m) < 4.0 * np.sqrt(v / n)


def test_truncnorm_broadcasting_and_bounds():
    rng = np.random.default_rng(5)
    lo = np.array([-1.0, 0.0, 2.0, -np.inf])
    hi = np.array([0.0, 1.5, np.inf, -3.0])
    draws = sample_truncnorm_many(0.0, np.array([1.0, 2.0, 0.5, 1.0]), lo, hi, rng)
    assert draws.shape == (4,)
    assert np.all(draws > lo) and np.all(draws < hi)


def test_truncnorm_zero_mass_interval_clamps():
    stats = SamplerStats()
    rng = np.random.default_rng(6)
    lo = 7.0
    hi = np.nextafter(7.0, np.inf)  # one-ulp interval deep in the tail
    x = sample_truncnorm_many(
        np.zeros(3), np.ones(3), np.full(3, lo), np.full(3, hi), rng, stats
    )
    assert stats.truncnorm_clamps == 3
    assert np.all((x >= lo) & (x <= hi))


def test_truncnorm_scalar_wrapper_and_interval_validation():
    x = sample_truncnorm(1.0, 2.0, TruncInterval(0.0, np.inf), np.random.default_rng(7))
    assert x > 0.0
    with pytest.raises(ValueError):
        TruncInterval(1.0, 1.0)
    with pytest.raises(ValueError):
        sample_truncnorm_many(0.0, 0.0, -1.0, 1.0, np.random.default_rng(0))


def test_truncnorm_determinism():
    args = (np.zeros(50), np.ones(50), np.full(50, -1.0), np.full(50, 4.0))
    a = sample_truncnorm_many(*args, np.random.default_rng(8))
    b = sample_truncnorm_many(*args, np.random.default_rng(8))
    np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------------------
# multivariate normal
# ---------------------------------------------------------------------------


def test_mvnormal_moments():
    rng = np.random.default_rng(np.random.SeedSequence(31))
    mean = np.array([1.0, -2.0, 0.5])
    cov = np.array([[2.0, 0.6, 0.2], [0.6, 1.0, -0.3], [0.2, -0.3, 1.5]])
    n = 100_000
    draws = np.array([sample_mvnormal(mean, cov, rng) for _ in range(n)])
    np.testing.assert_allclose(draws.mean(axis=0), mean, atol=0.02)
    np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.05)


# ---------------------------------------------------------------------------
# inverse Wishart
# ---------------------------------------------------------------------------


def test_inverse_wishart_mean_p2():
    rng = np.random.default_rng(np.random.SeedSequence(41))
    s = np.array([[2.0, 0.7], [0.7, 1.5]])
    df = 10.0
    draws = sample_inverse_wishart(df, s, rng, size=50_000)
    expected = s / (df - 2.0 - 1.0)
    np.testing.assert_allclose(draws.mean(axis=0), expected, rtol=0.03)


def test_inverse_wishart_precision_side_mean():
    # X^{-1} is Wishart(df, S^{-1}) with mean df * S^{-1}
    rng = np.random.default_rng(np.random.SeedSequence(42))
    s = np.array([[1.0, -0.3], [-0.3, 2.0]])
    df = 8.0
    draws = sample_inverse_wishart(df, s, rng, size=50_000)
    prec_mean = np.linalg.inv(draws).mean(axis=0)
    np.testing.assert_allclose(prec_mean, df * np.linalg.inv(s), rtol=0.03)


def test_inverse_wishart_p1_is_inverse_gamma():
    rng = np.random.default_rng(np.random.SeedSequence(43))
    df, s = 7.0, 3.0
    draws = sample_inverse_wishart(df, [[s]], rng, size=20_000)[:, 0, 0]
    res = sps.kstest(draws, sps.invgamma(df / 2.0, scale=s / 2.0).cdf)
    assert res.pvalue > 1e-4


def test_inverse_wishart_diagonal_marginal_p3():
    # marginal law of a diagonal element: IW_1(df - p + 1, S_jj), an
    # inverse gamma with shape (df - p + 1) / 2 and scale S_jj / 2
    rng = np.random.default_rng(np.random.SeedSequence(44))
    s = np.diag([1.0, 2.0, 0.5])
    df = 9.0
    draws = sample_inverse_wishart(df, s, rng, size=20_000)
    res = sps.kstest(
        draws[:, 1, 1], sps.invgamma((df - 3 + 1) / 2.0, scale=s[1, 1] / 2.0).cdf
    )
    assert res.pvalue > 1e-4


def test_inverse_wishart_draws_are_spd_and_symmetric():
    rng = np.random.default_rng(45)
    draws = sample_inverse_wishart(6.0, np.eye(3), rng, size=500)
    assert draws.shape == (500, 3, 3)
    np.testing.assert_array_equal(draws, np.swapaxes(draws, 1, 2))
    assert np.linalg.eigvalsh(draws).min() > 0

    single = sample_inverse_wishart(6.0, np.eye(3), rng)
    assert single.shape == (3, 3)


def test_inverse_wishart_df_validation():
    # df must exceed p - 1 strictly
    with pytest.raises(ValueError):
        sample_inverse_wishart(1.0, np.eye(2), np.random.default_rng(0))


def test_inverse_wishart_determinism():
    a = sample_inverse_wishart(9.0, np.eye(2), np.random.default_rng(12), size=5)
    b = sample_inverse_wishart(9.0, np.eye(2), np.random.default_rng(12), size=5)
    np.testing.assert_array_equal(a, b)
