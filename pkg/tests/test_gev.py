import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cevt.errors import (
    DegenerateDataError,
    DomainError,
    GevParameterError,
    InsufficientDataError,
)
from cevt.gev import (
    PENALTY,
    XI_EPS,
    FitOptions,
    GevParams,
    fit_gev,
    fit_gev_detailed,
    gev_cdf,
    gev_nll,
    gev_pdf,
    gev_quantile,
    gev_sample,
    gumbel_moment_init,
)

E_INV = math.exp(-1.0)

params_st = st.builds(
    GevParams,
    mu=st.floats(-3, 3),
    sigma=st.floats(0.05, 3),
    xi=st.one_of(st.just(0.0), st.floats(-0.9, 0.9).filter(lambda v: abs(v) > 1e-4)),
)


class TestParams:
    @pytest.mark.parametrize("sigma", [0.0, -1.0, math.nan, math.inf])
    def test_invalid_sigma(self, sigma):
        with pytest.raises(GevParameterError):
            GevParams(0.0, sigma, 0.1)

    def test_non_finite_location(self):
        with pytest.raises(GevParameterError):
            GevParams(math.nan, 1.0, 0.1)

    def test_support(self):
        assert GevParams(1.0, 0.5, 0.2).support() == (pytest.approx(-1.5), math.inf)
        assert GevParams(0.0, 1.0, -0.5).support() == (-math.inf, pytest.approx(2.0))
        assert GevParams(0.0, 1.0, 0.0).support() == (-math.inf, math.inf)


class TestCdf:
    def test_at_location(self):
        assert gev_cdf(1.7, GevParams(1.7, 0.3, 0.3)) == pytest.approx(E_INV, abs=1e-15)

    def test_gumbel_at_location(self):
        assert gev_cdf(0.0, GevParams(0.0, 1.0, 0.0)) == pytest.approx(E_INV, abs=1e-15)

    def test_matches_quadrature_of_pdf(self):
        # frozen: scipy.integrate.quad of an inline density over (-2, 2]
        assert gev_cdf(2.0, GevParams(0.0, 1.0, 0.5)) == pytest.approx(0.778800783071405, abs=1e-12)

    def test_outside_support(self):
        assert gev_cdf(-5.0, GevParams(0.0, 1.0, 0.5)) == 0.0
        assert gev_cdf(5.0, GevParams(0.0, 1.0, -0.5)) == 1.0

    def test_array_input(self):
        out = gev_cdf(np.array([-5.0, 0.0, 2.0]), GevParams(0.0, 1.0, 0.5))
        assert out.shape == (3,)
        np.testing.assert_allclose(out, [0.0, E_INV, math.exp(-0.25)], atol=1e-15)

    def test_rejects_bad_params(self):
        with pytest.raises(GevParameterError):
            gev_cdf(0.0, (0.0, 1.0, 0.1))

    @settings(max_examples=200, deadline=None)
    @given(params_st, st.lists(st.floats(-20, 20), min_size=2, max_size=40))
    def test_monotone(self, p, xs):
        vals = gev_cdf(np.sort(np.array(xs)), p)
        assert np.all(np.diff(vals) >= 0)
        assert np.all((vals >= 0) & (vals <= 1))

    @settings(max_examples=100, deadline=None)
    @given(params_st, st.floats(-5, 10))
    def test_matches_scipy(self, p, x):
        expected = stats.genextreme.cdf(x, -p.xi, loc=p.mu, scale=p.sigma)
        assert gev_cdf(x, p) == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize("sign", [1.0, -1.0])
    def test_gumbel_continuity(self, sign):
        x = np.linspace(-4, 12, 401)
        near = gev_cdf(x, GevParams(0.3, 1.2, sign * XI_EPS))
        gumbel = gev_cdf(x, GevParams(0.3, 1.2, 0.0))
        assert np.max(np.abs(near - gumbel)) < 1e-6


class TestQuantile:
    def test_at_e_inverse_is_location(self):
        assert gev_quantile(E_INV, GevParams(3.2, 0.4, 0.2)) == pytest.approx(3.2, abs=1e-12)

    def test_gumbel_at_e_inverse(self):
        assert gev_quantile(E_INV, GevParams(0.0, 1.0, 0.0)) == pytest.approx(0.0, abs=1e-12)

    def test_matches_bisection(self):
        # frozen: bisection on an inline CDF to 1e-12
        assert gev_quantile(0.778801, GevParams(0.0, 1.0, 0.5)) == pytest.approx(2.0000022283363714, abs=1e-10)
        assert gev_quantile(0.778801, GevParams(0.0, 1.0, 0.5)) == pytest.approx(2.0, abs=1e-5)

    @pytest.mark.parametrize("prob", [0.0, 1.0, -0.1, 1.5, math.nan])
    def test_domain(self, prob):
        with pytest.raises(DomainError):
            gev_quantile(prob, GevParams(0.0, 1.0, 0.1))

    @settings(max_examples=200, deadline=None)
    @given(params_st, st.floats(0.001, 0.999))
    def test_round_trip(self, p, u):
        x = gev_quantile(u, p)
        assert gev_quantile(gev_cdf(x, p), p) == pytest.approx(x, abs=1e-9)

    def test_increasing_in_probability(self):
        p = GevParams(0.5, 0.1, 0.05)
        assert gev_quantile(0.999, p) > gev_quantile(0.5, p)


class TestPdf:
    def test_gumbel_at_location(self):
        assert gev_pdf(0.0, GevParams(0.0, 1.0, 0.0)) == pytest.approx(E_INV, abs=1e-15)

    def test_zero_below_support(self):
        assert gev_pdf(0.0 - 2 * 1.0 / 0.5, GevParams(0.0, 1.0, 0.5)) == 0.0

    def test_zero_above_support(self):
        assert gev_pdf(3.0, GevParams(0.0, 1.0, -0.5)) == 0.0

    def test_integrates_to_one(self):
        from scipy import integrate

        p = GevParams(1.0, 0.5, 0.2)
        lo, hi = p.support()
        total, _ = integrate.quad(lambda x: gev_pdf(x, p), lo, hi, epsabs=1e-12)
        assert total == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("xi", [-0.4, 0.0, 0.3])
    def test_integrates_to_one_various_shapes(self, xi):
        from scipy import integrate

        p = GevParams(-0.5, 2.0, xi)
        lo, hi = p.support()
        total, _ = integrate.quad(lambda x: gev_pdf(x, p), lo, hi, epsabs=1e-12, limit=200)
        assert total == pytest.approx(1.0, abs=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(params_st, st.floats(-10, 20))
    def test_non_negative_and_matches_scipy(self, p, x):
        v = gev_pdf(x, p)
        assert v >= 0
        assert v == pytest.approx(stats.genextreme.pdf(x, -p.xi, loc=p.mu, scale=p.sigma), rel=1e-7, abs=1e-12)


class TestNll:
    def test_single_gumbel_point(self):
        assert gev_nll([0.0], GevParams(0.0, 1.0, 0.0)) == pytest.approx(1.0, abs=1e-14)

    def test_penalty_below_support(self):
        assert gev_nll([-10.0, 0.0], GevParams(0.0, 1.0, 0.5)) >= PENALTY

    def test_penalty_counts_points(self):
        p = GevParams(0.0, 1.0, 0.5)
        one = gev_nll([-10.0, 0.0], p)
        two = gev_nll([-10.0, -11.0, 0.0], p)
        assert two - one == pytest.approx(PENALTY, rel=1e-9)

    def test_empty(self):
        with pytest.raises(DomainError):
            gev_nll([], GevParams(0.0, 1.0, 0.0))

    def test_true_params_beat_shifted(self):
        p = GevParams(1.0, 0.5, 0.2)
        x = gev_sample(p, 5000, seed=3)
        assert gev_nll(x, p) < gev_nll(x, GevParams(1.5, 0.5, 0.2))

    def test_matches_scipy_logpdf(self):
        p = GevParams(1.0, 0.5, -0.2)
        x = gev_sample(p, 200, seed=1)
        expected = -np.sum(stats.genextreme.logpdf(x, 0.2, loc=1.0, scale=0.5))
        assert gev_nll(x, p) == pytest.approx(expected, rel=1e-10)


class TestSample:
    def test_empty(self):
        assert gev_sample(GevParams(0.0, 1.0, 0.1), 0, seed=0).shape == (0,)

    def test_support_containment(self):
        x = gev_sample(GevParams(1.0, 0.5, 0.2), 1000, seed=0)
        assert np.all(x > -1.5)

    def test_gumbel_mean(self):
        x = gev_sample(GevParams(0.0, 1.0, 0.0), 100_000, seed=0)
        assert x.mean() == pytest.approx(0.5772, abs=0.02)

    def test_reproducible(self):
        p = GevParams(0.2, 0.7, -0.1)
        a = gev_sample(p, 500, seed=42)
        b = gev_sample(p, 500, seed=42)
        assert a.tobytes() == b.tobytes()
        assert a.tobytes() != gev_sample(p, 500, seed=43).tobytes()

    def test_distribution_ks(self):
        p = GevParams(1.0, 0.5, 0.2)
        x = gev_sample(p, 4000, seed=5)
        res = stats.kstest(x, stats.genextreme(-0.2, loc=1.0, scale=0.5).cdf)
        assert res.pvalue > 0.01


class TestFit:
    def test_moment_init(self):
        x = np.array([0.1, 0.4, 0.2, 0.9, 0.5])
        p = gumbel_moment_init(x)
        s = np.std(x, ddof=1)
        assert p.sigma == pytest.approx(s * math.sqrt(6) / math.pi)
        assert p.mu == pytest.approx(x.mean() - 0.5772156649 * p.sigma)
        assert p.xi == 0.1

    def test_recovers_params(self):
        p = GevParams(1.0, 0.5, 0.2)
        q = fit_gev(gev_sample(p, 5000, seed=11))
        assert q.mu == pytest.approx(1.0, abs=0.05)
        assert q.xi == pytest.approx(0.2, abs=0.05)
        assert q.sigma == pytest.approx(0.5, rel=0.05)

    def test_agrees_with_scipy_mle(self):
        x = gev_sample(GevParams(0.3, 0.2, -0.1), 2000, seed=2)
        ours = fit_gev_detailed(x)
        c, loc, scale = stats.genextreme.fit(x)
        theirs = -np.sum(stats.genextreme.logpdf(x, c, loc=loc, scale=scale))
        # our optimum is at least as good as scipy's to within rounding
        assert ours.nll <= theirs + 1e-6
        assert ours.params.xi == pytest.approx(-c, abs=0.02)

    @pytest.mark.parametrize("seed", range(5))
    def test_never_worse_than_init(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.gamma(2.0, 0.3, size=300)
        fit = fit_gev_detailed(x)
        assert fit.nll <= fit.init_nll

    def test_constant_samples(self):
        with pytest.raises(DegenerateDataError):
            fit_gev([0.7] * 100)

    def test_too_few(self):
        with pytest.raises(InsufficientDataError):
            fit_gev([0.1, 0.2, 0.3, 0.4, 0.5], FitOptions(min_samples=10))

    def test_bounded_sample_stays_regular(self):
        # uniform data tempts xi below -1; the fit must stay at xi >= -1
        x = np.random.default_rng(0).uniform(0.0, 1.0, 500)
        assert fit_gev(x).xi >= -1.0

    def test_options_validation(self):
        with pytest.raises(ValueError):
            FitOptions(min_samples=1)
        with pytest.raises(ValueError):
            FitOptions(tol=0.0)
