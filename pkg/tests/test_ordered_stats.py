import numpy as np
import pytest
from scipy import integrate

from osdlab.channel import ChannelParams, raw_bit_error_prob
from osdlab.ordered_stats import OrderedStatsCtx, conditional_error_probs

SAMPLES = 40_000


def simulate(n, snr, samples=SAMPLES, seed=11):
    """Sorted reliabilities and their error indicators under the all-zero codeword."""
    p = ChannelParams.from_snr_db(snr)
    r = 1.0 + np.random.default_rng(seed).normal(0, p.sigma, size=(samples, n))
    order = np.argsort(-np.abs(r), axis=1, kind="stable")
    r = np.take_along_axis(r, order, axis=1)
    return np.abs(r), (r < 0).astype(np.int64)


@pytest.fixture(scope="module")
def small():
    ctx = OrderedStatsCtx(16, 7, ChannelParams.from_snr_db(1.0))
    return ctx, *simulate(16, 1.0)


@pytest.fixture(scope="module")
def medium():
    ctx = OrderedStatsCtx(64, 30, ChannelParams.from_snr_db(2.0))
    return ctx, *simulate(64, 2.0, samples=20_000)


def test_ordered_densities_normalize(small):
    ctx = small[0]
    for u in (1, 5, 16):
        lo, hi = ctx.support(u)
        mass, _ = integrate.quad(ctx.ordered_pdf(u), 0, ctx.alpha_max, points=[lo, hi], limit=200)
        assert mass == pytest.approx(1.0, abs=1e-4)
        assert ctx.ordered_cdf(u, hi) > 1 - 1e-9


def test_joint_density_normalizes(small):
    ctx = small[0]
    pdf = ctx.ordered_joint_pdf(3, 9)
    mass, _ = integrate.dblquad(lambda xv, xu: pdf(xu, xv), 0, ctx.alpha_max, 0, lambda xu: xu, epsabs=1e-7)
    assert mass == pytest.approx(1.0, abs=1e-4)


def test_exact_means_and_variances_match_simulation(small):
    ctx, alpha, _ = small
    se = alpha.std(axis=0) / np.sqrt(len(alpha))
    assert np.all(np.abs(ctx.exact_means() - alpha.mean(axis=0)) < 4 * se + 1e-4)
    assert np.allclose(ctx.exact_variances(), alpha.var(axis=0), rtol=0.05, atol=2e-4)


def test_normal_approximation_tracks_exact_means(medium):
    ctx = medium[0]
    mid = slice(5, 59)
    assert np.allclose(ctx.mean_vector("Fast")[mid], ctx.exact_means()[mid], atol=0.05)


def test_exact_covariance_matches_simulation(small):
    ctx, alpha, _ = small
    for u, v in [(1, 2), (4, 9), (7, 8), (10, 16)]:
        x, y = alpha[:, u - 1], alpha[:, v - 1]
        sample = np.cov(x, y)[0, 1]
        prod = (x - x.mean()) * (y - y.mean())
        sigma = prod.std() / np.sqrt(len(x))
        assert abs(ctx.covariance_entries(u, v, "Exact") - sample) < 4 * sigma + 1e-4


def test_sample_covariance_is_nonnegative(medium):
    _, alpha, _ = medium
    for u, v in [(1, 64), (10, 40), (29, 31), (30, 31), (50, 60)]:
        x, y = alpha[:, u - 1], alpha[:, v - 1]
        prod = (x - x.mean()) * (y - y.mean())
        sigma = prod.std() / np.sqrt(len(x))
        assert prod.mean() >= -3 * sigma


def test_model_covariances_are_nonnegative(medium):
    ctx = medium[0]
    cov_fast = ctx.covariance_matrix(np.arange(1, 65), "Fast")
    assert (cov_fast >= 0).all()
    for u, v in [(1, 64), (29, 31), (30, 31)]:
        assert ctx.covariance_entries(u, v, "Exact") >= 0


def test_bit_error_probs_sum_to_raw_rate(medium):
    ctx = medium[0]
    pe = ctx.bit_error_probs()
    assert pe.sum() == pytest.approx(64 * raw_bit_error_prob(ctx.params), rel=1e-5)
    assert np.all(np.diff(pe) >= -1e-12)


def test_bit_error_probs_match_simulation(small):
    ctx, _, err = small
    freq = err.mean(axis=0)
    se = np.sqrt(freq * (1 - freq) / len(err)) + 1e-4
    assert np.all(np.abs(ctx.bit_error_probs() - freq) < 4 * se)


@pytest.mark.parametrize("a,b", [(1, 7), (8, 16), (4, 11), (1, 16)])
def test_error_count_pmf_normalizes_and_matches_simulation(small, a, b):
    ctx, _, err = small
    pmf = ctx.error_count_pmf(a, b)
    assert len(pmf) == b - a + 2
    assert pmf.sum() == pytest.approx(1.0, abs=1e-4)
    counts = err[:, a - 1 : b].sum(axis=1)
    emp = np.bincount(counts, minlength=len(pmf)) / len(counts)
    assert 0.5 * np.abs(emp - pmf).sum() < 0.015


def test_error_count_mean_equals_bit_error_sum(medium):
    ctx = medium[0]
    pmf = ctx.mrb_error_pmf()
    assert np.arange(len(pmf)) @ pmf == pytest.approx(ctx.bit_error_probs()[:30].sum(), rel=1e-3)


def test_pair_moments_match_simulation(small):
    ctx, alpha, err = small
    pm = ctx.pair_moments("Exact")
    u, v = 5, 11
    assert pm.pe_pair[u, v] == pytest.approx((err[:, u] * err[:, v]).mean(), abs=4e-3)
    assert pm.second[u, v] == pytest.approx((alpha[:, u] * alpha[:, v]).mean(), rel=0.01)
    assert pm.err_mean[v] == pytest.approx((err[:, v] * alpha[:, v]).mean(), abs=3e-3)
    assert pm.err_second[u, v] == pytest.approx((err[:, u] * alpha[:, u] * alpha[:, v]).mean(), abs=3e-3)


def test_inverse_cdf_round_trip(small):
    ctx = small[0]
    p = np.array([0.01, 0.3, 0.77, 0.999])
    assert np.allclose(ctx._F(ctx.inverse_cdf(p)), p, atol=1e-8)
    with pytest.raises(ValueError):
        ctx.inverse_cdf([1.5])


def test_index_validation(small):
    ctx = small[0]
    with pytest.raises(IndexError):
        ctx.ordered_pdf(0)
    with pytest.raises(IndexError):
        ctx.ordered_joint_pdf(4, 4)
    with pytest.raises(IndexError):
        ctx.error_count_pmf(9, 3)
    with pytest.raises(ValueError):
        OrderedStatsCtx(4, 5, ctx.params)


def test_conditional_error_probs_require_sorted_input():
    p = ChannelParams.from_snr_db(2.0)
    ce = conditional_error_probs(np.array([2.0, 1.0, 0.1]), p)
    assert ce.count_pmf(1, 3).sum() == pytest.approx(1.0)
    assert ce.joint(1, 3) == pytest.approx(ce.pe[0] * ce.pe[2])
    with pytest.raises(ValueError):
        conditional_error_probs(np.array([0.1, 1.0]), p)
