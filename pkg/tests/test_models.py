import math

import numpy as np
import pytest
from scipy import integrate

from ticusum.errors import CapabilityError, DomainError
from ticusum.models import (
    MVN10_SIGMA_POST,
    BoltzmannPair,
    CustomPair,
    GaussianPair,
    boltzmann,
    get_pair,
    mvn10,
    with_metropolis_path,
)

from conftest import make_rng


class TestLogWeight:
    def test_boltzmann_at_zero(self, boltz):
        assert boltz.log_weight(np.array([0.0])) == 0.0

    def test_boltzmann_at_six(self, boltz):
        # -6/1.2 + 6/1 = 1
        assert boltz.log_weight(np.array([6.0])) == pytest.approx(1.0, abs=1e-12)

    def test_identical_pair_is_zero(self, identical, rng):
        x = identical.sample_pre(rng, 100)
        assert np.all(identical.log_weight(x) == 0.0)

    def test_outside_support_raises(self, boltz):
        with pytest.raises(DomainError, match="pre-change"):
            boltz.log_weight(np.array([-1.0]))

    def test_matches_bridge_density_derivative(self, boltz, mvn, rng):
        # Central finite difference of beta -> log ptilde_beta(x) at any beta
        # recovers log w(x); the bridge potential is linear in beta.
        h = 1e-5
        for pair in (boltz, mvn):
            x = pair.sample_pre(rng, 20)
            lw = pair.log_weight(x)
            for beta in (0.1, 0.5, 0.9):
                fd = (pair.log_ptilde_path(beta + h, x) - pair.log_ptilde_path(beta - h, x)) / (2 * h)
                np.testing.assert_allclose(fd, lw, rtol=1e-6)

    def test_vector_and_single_sample_agree(self, mvn, rng):
        x = mvn.sample_pre(rng, 5)
        batch = mvn.log_weight(x)
        singles = [mvn.log_weight(x[k]) for k in range(5)]
        np.testing.assert_allclose(batch, singles)


class TestSamplers:
    def test_boltzmann_pre_mean(self, boltz):
        x = boltz.sample_pre(make_rng(1), 100_000)
        se = x.std(ddof=1) / math.sqrt(x.shape[0])
        assert abs(x.mean() - 1.0) <= 3 * se

    def test_gaussian_pre_mean(self, mvn):
        x = mvn.sample_pre(make_rng(2), 100_000)
        se = x.std(axis=0, ddof=1) / math.sqrt(x.shape[0])
        assert np.all(np.abs(x.mean(axis=0)) <= 3 * se)

    def test_zero_draws(self, boltz, rng):
        assert boltz.sample_pre(rng, 0).shape == (0, 1)

    def test_missing_sampler_raises(self):
        pair = CustomPair(1, lambda x: -x[:, 0], lambda x: -2 * x[:, 0])
        with pytest.raises(CapabilityError):
            pair.sample_pre(np.random.default_rng(0), 3)

    @pytest.mark.parametrize("which", ["pre", "post"])
    def test_moments_match_analytic(self, boltz, mvn, which):
        # First and second moments of 1e5 seeded draws within 4 standard errors.
        n = 100_000
        t = {"pre": boltz.t_pre, "post": boltz.t_post}[which]
        x = (boltz.sample_pre if which == "pre" else boltz.sample_post)(make_rng(3), n)[:, 0]
        se_mean = t / math.sqrt(n)
        # For an exponential, Var(sample variance) = (9 - 1) t^4 / n to first order.
        se_var = math.sqrt(8 * t ** 4 / n)
        assert abs(x.mean() - t) <= 4 * se_mean
        assert abs(x.var(ddof=1) - t * t) <= 4 * se_var

        mu = {"pre": mvn.mu_pre, "post": mvn.mu_post}[which]
        sigma = {"pre": mvn.sigma_pre, "post": mvn.sigma_post}[which]
        y = (mvn.sample_pre if which == "pre" else mvn.sample_post)(make_rng(4), n)
        se_mu = np.sqrt(np.diag(sigma) / n)
        assert np.all(np.abs(y.mean(axis=0) - mu) <= 4 * se_mu)
        var = y.var(axis=0, ddof=1)
        se_v = np.sqrt(2 * np.diag(sigma) ** 2 / n)
        assert np.all(np.abs(var - np.diag(sigma)) <= 4 * se_v)


class TestPathSampler:
    def test_beta_out_of_range(self, boltz, rng):
        with pytest.raises(ValueError):
            boltz.sample_path(rng, -0.1)
        with pytest.raises(ValueError):
            boltz.sample_path(rng, 1.1)

    @pytest.mark.parametrize("pair_name", ["boltzmann", "mvn10"])
    def test_endpoints_bitwise_match_source_samplers(self, pair_name):
        pair = get_pair(pair_name)
        a = pair.sample_path(make_rng(5), 0.0)
        b = pair.sample_pre(make_rng(5), 1)[0]
        assert np.array_equal(a, b)
        c = pair.sample_path(make_rng(6), 1.0)
        d = pair.sample_post(make_rng(6), 1)[0]
        assert np.array_equal(c, d)

    def test_boltzmann_midpoint_mean(self, boltz):
        betas = np.full(100_000, 0.5)
        x = boltz.sample_path_batch(make_rng(7), betas)[:, 0]
        rate = 0.5 / 1.2 + 0.5
        se = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean() - 1.0 / rate) <= 3 * se

    def test_boltzmann_midpoint_mean_against_quadrature(self, boltz):
        # Independent check of the closed-form bridge mean by integrating
        # the unnormalized bridge density on [0, inf).
        beta = 0.5
        dens = lambda x: math.exp(beta * (-x / 1.2) + (1 - beta) * (-x))
        z, _ = integrate.quad(dens, 0, np.inf)
        m1, _ = integrate.quad(lambda x: x * dens(x), 0, np.inf)
        rate = beta / 1.2 + (1 - beta)
        assert m1 / z == pytest.approx(1.0 / rate, rel=1e-9)

    def test_gaussian_bridge_law_with_nonzero_means(self):
        # Nonzero pre mean so every term of the bridge mean formula is live.
        rng = make_rng(8)
        a = rng.standard_normal((3, 3))
        sigma0 = a @ a.T + 3 * np.eye(3)
        b = rng.standard_normal((3, 3))
        sigma1 = b @ b.T + 2 * np.eye(3)
        mu0 = np.array([1.0, -2.0, 0.5])
        mu1 = np.array([-0.5, 1.5, 2.0])
        pair = GaussianPair(mu0, sigma0, mu1, sigma1)
        beta = 0.37
        prec = beta * np.linalg.inv(sigma1) + (1 - beta) * np.linalg.inv(sigma0)
        want_cov = np.linalg.inv(prec)
        want_mean = want_cov @ (beta * np.linalg.inv(sigma1) @ mu1
                                + (1 - beta) * np.linalg.inv(sigma0) @ mu0)
        x = pair.sample_path_batch(make_rng(9), np.full(200_000, beta))
        se = np.sqrt(np.diag(want_cov) / x.shape[0])
        assert np.all(np.abs(x.mean(axis=0) - want_mean) <= 4 * se)
        np.testing.assert_allclose(np.cov(x.T), want_cov, atol=0.05)


class TestAnalytics:
    def test_boltzmann_log_z_ratio(self, boltz):
        assert boltz.analytic_log_z_ratio() == pytest.approx(math.log(1 / 1.2), abs=1e-15)

    def test_boltzmann_log_z_ratio_against_quadrature(self, boltz):
        z0, _ = integrate.quad(lambda x: math.exp(-x), 0, np.inf)
        z1, _ = integrate.quad(lambda x: math.exp(-x / 1.2), 0, np.inf)
        assert boltz.analytic_log_z_ratio() == pytest.approx(math.log(z0 / z1), rel=1e-9)

    def test_identical_pair_ratio_zero(self, identical):
        assert identical.analytic_log_z_ratio() == pytest.approx(0.0, abs=1e-15)

    def test_gaussian_equal_covariances_ratio_zero(self):
        sigma = MVN10_SIGMA_POST
        pair = GaussianPair(np.zeros(10), sigma, np.ones(10), sigma)
        assert pair.analytic_log_z_ratio() == pytest.approx(0.0, abs=1e-12)

    def test_boltzmann_kl_against_quadrature(self, boltz):
        def p(x, t):
            return math.exp(-x / t) / t

        def log_ratio(x, ta, tb):
            return (-x / ta - math.log(ta)) - (-x / tb - math.log(tb))

        for direction, (ta, tb) in (("post_vs_pre", (1.2, 1.0)), ("pre_vs_post", (1.0, 1.2))):
            want, _ = integrate.quad(
                lambda x: p(x, ta) * log_ratio(x, ta, tb), 0, np.inf)
            assert boltz.analytic_kl(direction) == pytest.approx(want, rel=1e-9)

    def test_identical_pair_kl_zero(self, identical):
        assert identical.analytic_kl("post_vs_pre") == pytest.approx(0.0, abs=1e-15)
        assert identical.analytic_kl("pre_vs_post") == pytest.approx(0.0, abs=1e-15)

    def test_unknown_direction(self, boltz):
        with pytest.raises(ValueError):
            boltz.analytic_kl("sideways")


def _numeric_score(logp, x, h=1e-5):
    """Hyvarinen score by central differences: 0.5|grad|^2 + laplacian."""
    d = x.shape[0]
    grad = np.empty(d)
    lap = 0.0
    f0 = logp(x)
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        fp, fm = logp(x + e), logp(x - e)
        grad[k] = (fp - fm) / (2 * h)
        lap += (fp - 2 * f0 + fm) / (h * h)
    return 0.5 * float(grad @ grad) + lap


class TestHyvarinenScore:
    def test_boltzmann_score_is_constant_half_over_t_squared(self, boltz):
        x = np.linspace(0.1, 10, 25)[:, None]
        np.testing.assert_allclose(boltz.score("pre", x), 0.5)
        np.testing.assert_allclose(boltz.score("post", x), 0.5 / 1.44)

    def test_boltzmann_score_difference_constant(self, boltz, rng):
        x = boltz.sample_pre(rng, 500)
        diff = boltz.score("pre", x) - boltz.score("post", x)
        assert np.ptp(diff) == 0.0

    def test_standard_gaussian_at_origin(self):
        pair = GaussianPair(np.zeros(10), np.eye(10), np.ones(10), np.eye(10))
        assert pair.score("pre", np.zeros(10)) == pytest.approx(-10.0, abs=1e-12)

    def test_gaussian_score_against_finite_differences(self, mvn, rng):
        x = mvn.sample_post(rng, 4)
        for which in ("pre", "post"):
            logp = lambda v: mvn.log_ptilde_pre(v) if which == "pre" else mvn.log_ptilde_post(v)
            for row in x:
                want = _numeric_score(logp, row)
                assert mvn.score(which, row) == pytest.approx(want, rel=1e-4, abs=1e-4)

    def test_missing_score_raises(self):
        pair = CustomPair(1, lambda x: -x[:, 0] ** 2, lambda x: -2 * x[:, 0] ** 2)
        with pytest.raises(CapabilityError):
            pair.score("pre", np.array([0.5]))


class TestConstruction:
    def test_non_positive_definite_rejected(self):
        lam_min = np.linalg.eigvalsh(MVN10_SIGMA_POST).min()
        bad = MVN10_SIGMA_POST - 2 * lam_min * np.eye(10)
        with pytest.raises(ValueError, match="positive definite"):
            GaussianPair(np.zeros(10), MVN10_SIGMA_PRE_OK, np.ones(10), bad)

    def test_asymmetric_rejected(self):
        bad = np.eye(3)
        bad[0, 1] = 0.5
        with pytest.raises(ValueError, match="symmetric"):
            GaussianPair(np.zeros(3), bad, np.zeros(3), np.eye(3))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            GaussianPair(np.zeros(3), np.eye(3), np.zeros(4), np.eye(4))

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ValueError):
            BoltzmannPair(0.0, 1.2)

    def test_registry(self):
        assert get_pair("boltzmann").name == "boltzmann"
        assert get_pair("mvn10").dim == 10
        with pytest.raises(ValueError, match="unknown model pair"):
            get_pair("nope")


MVN10_SIGMA_PRE_OK = mvn10().sigma_pre


class TestMetropolisFallback:
    def test_bridge_draws_recover_log_z_ratio_roughly(self):
        base = boltzmann()
        stripped = CustomPair(
            1, base._log_ptilde_pre, base._log_ptilde_post,
            sample_pre=base._sample_pre, name="boltzmann-opaque")
        pair = with_metropolis_path(stripped, burn_in=300, step_size=1.0,
                                    init=np.array([1.0]))
        assert pair.approximate_path_sampler
        rng = make_rng(10)
        betas = rng.uniform(size=600)
        x = pair.sample_path_batch(rng, betas)
        est = float(np.mean(-pair.log_weight(x)))
        assert abs(est - math.log(1 / 1.2)) < 0.05
