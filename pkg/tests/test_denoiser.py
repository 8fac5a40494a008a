import numpy as np
import pytest
from scipy.integrate import quad

from mpamp.denoiser import (
    EffectiveChannel,
    MseInterpolator,
    denoiser_mse,
    eta,
    eta_prime,
    sdr_db,
    se_step,
    se_trajectory,
    sigma2_initial,
)
from mpamp.model import SignalPrior

PRIOR = SignalPrior(epsilon=0.1, mu_s=0.0, sigma_s=1.0)


def posterior_mean_quadrature(f, v, prior):
    """Independent oracle: direct numerical integration of the posterior mean.

    E[S0 | f] = eps * int s phi(f - s; v) phi(s; mu, s2) ds / p(f), with
    p(f) = eps * int phi(f - s; v) phi(s; mu, s2) ds + (1 - eps) phi(f; v).
    """
    s2, mu, eps = prior.sigma2_s, prior.mu_s, prior.epsilon

    def phi(x, var):
        return np.exp(-x ** 2 / (2 * var)) / np.sqrt(2 * np.pi * var)

    lo, hi = mu - 14 * prior.sigma_s, mu + 14 * prior.sigma_s
    num = quad(lambda s: s * phi(f - s, v) * phi(s - mu, s2), lo, hi,
               epsabs=1e-14, epsrel=1e-12, limit=400)[0]
    den = quad(lambda s: phi(f - s, v) * phi(s - mu, s2), lo, hi,
               epsabs=1e-14, epsrel=1e-12, limit=400)[0]
    return eps * num / (eps * den + (1 - eps) * phi(f, v))


class TestEta:
    def test_gaussian_prior_is_linear_shrinkage(self):
        prior = SignalPrior(epsilon=1.0, mu_s=0.0, sigma_s=2.0)
        ch = EffectiveChannel(0.5)
        f = np.linspace(-20, 20, 41)
        np.testing.assert_allclose(eta(f, ch, prior), 4.0 * f / 4.5, rtol=1e-14)

    def test_zero_mean_symmetry(self):
        ch = EffectiveChannel(0.3)
        assert eta(0.0, ch, PRIOR) == 0.0
        f = np.linspace(0.1, 5, 20)
        np.testing.assert_allclose(eta(-f, ch, PRIOR), -eta(f, ch, PRIOR), rtol=1e-13)

    def test_against_quadrature_oracle_spec_point(self):
        """eps=0.1, sigma_s=1, v=0.2, f=1.0 to 1e-8 relative."""
        got = eta(1.0, EffectiveChannel(0.2), PRIOR)
        want = posterior_mean_quadrature(1.0, 0.2, PRIOR)
        assert got == pytest.approx(want, rel=1e-8)

    def test_against_quadrature_oracle_grid(self):
        for prior in (PRIOR, SignalPrior(epsilon=0.4, mu_s=0.7, sigma_s=1.5)):
            for v in (0.05, 0.5, 2.0):
                ch = EffectiveChannel(v)
                for f in (-3.0, -0.7, 0.0, 0.3, 1.0, 4.0):
                    want = posterior_mean_quadrature(f, v, prior)
                    assert eta(f, ch, prior) == pytest.approx(want, rel=1e-8, abs=1e-12)

    def test_bounds_zero_mean(self):
        """sign(eta) = sign(f) and |eta| <= |f| for a centered slab."""
        ch = EffectiveChannel(0.7)
        f = np.linspace(-8, 8, 401)
        out = eta(f, ch, PRIOR)
        assert np.all(np.sign(out[f != 0]) == np.sign(f[f != 0]))
        assert np.all(np.abs(out) <= np.abs(f) + 1e-15)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            eta(np.array([1.0, np.nan]), EffectiveChannel(0.1), PRIOR)

    def test_tiny_channel_variance_stable(self):
        """v far below sigma_s^2 must not underflow the responsibility."""
        ch = EffectiveChannel(1e-12)
        out = eta(np.array([-1.0, 1e-7, 1.0]), ch, PRIOR)
        assert np.all(np.isfinite(out))
        # at negligible noise the estimate follows the observation
        assert out[2] == pytest.approx(1.0, rel=1e-6)


class TestEtaPrime:
    def test_gaussian_prior_constant_slope(self):
        prior = SignalPrior(epsilon=1.0, mu_s=0.0, sigma_s=2.0)
        ch = EffectiveChannel(0.5)
        f = np.linspace(-10, 10, 21)
        np.testing.assert_allclose(eta_prime(f, ch, prior), 4.0 / 4.5, rtol=1e-14)

    def test_finite_difference_grid(self):
        """Central differences with step 1e-5*max(1,|f|), 1e-5 relative."""
        rng = np.random.default_rng(1)
        f = np.concatenate([np.linspace(-6, 6, 800), rng.uniform(-10, 10, 200)])
        for prior in (PRIOR, SignalPrior(epsilon=0.3, mu_s=0.5, sigma_s=1.2)):
            for v in (0.05, 0.4, 3.0):
                ch = EffectiveChannel(v)
                h = 1e-5 * np.maximum(1.0, np.abs(f))
                fd = (eta(f + h, ch, prior) - eta(f - h, ch, prior)) / (2 * h)
                got = eta_prime(f, ch, prior)
                np.testing.assert_allclose(got, fd, rtol=1e-5, atol=1e-9)

    def test_high_noise_slope_collapses(self):
        """Large v with eps<1: responsibility at 0 vanishes, slope -> 0."""
        ch = EffectiveChannel(1e6)
        assert abs(eta_prime(0.0, ch, PRIOR)) < 1e-3


class TestSeStep:
    KAPPA = 0.3
    S2E = 1.6667e-3

    def test_initial_variance_value(self):
        """sigma2_0 = sigma2_e + eps(mu^2 + sigma_s^2)/kappa ~ 0.16833."""
        prior = SignalPrior(epsilon=0.05)
        got = sigma2_initial(prior, self.KAPPA, self.S2E)
        assert got == pytest.approx(0.16833, rel=1e-3)

    def test_zero_added_var_matches_plain_recursion(self):
        prior = SignalPrior(epsilon=0.05)
        s2 = sigma2_initial(prior, self.KAPPA, self.S2E)
        a = se_step(s2, 0.0, prior, self.KAPPA, self.S2E)
        b = self.S2E + denoiser_mse(s2, prior) / self.KAPPA
        assert a == b

    def test_composition(self):
        """Two chained steps equal the two-step composition."""
        prior = SignalPrior(epsilon=0.05)
        s2 = sigma2_initial(prior, self.KAPPA, self.S2E)
        one = se_step(s2, 0.0, prior, self.KAPPA, self.S2E)
        two = se_step(one, 0.0, prior, self.KAPPA, self.S2E)
        tr = se_trajectory(prior, self.KAPPA, self.S2E, T_max=2)
        assert tr.sigma2_seq[2] == two

    def test_monotone_in_state_and_added_var(self):
        """Order preservation over a lattice of inputs."""
        prior = SignalPrior(epsilon=0.05)
        states = np.geomspace(2e-3, 0.3, 12)
        added = np.concatenate(([0.0], np.geomspace(1e-4, 0.3, 11)))
        vals = np.array([[se_step(s, a, prior, self.KAPPA, self.S2E)
                          for a in added] for s in states])
        assert np.all(np.diff(vals, axis=0) >= -1e-15)
        assert np.all(np.diff(vals, axis=1) >= -1e-15)

    def test_quadrature_order_stability(self):
        """Doubling the node count moves the result by < 1e-9 relative."""
        for eps in (0.03, 0.05, 0.10):
            prior = SignalPrior(epsilon=eps)
            s2e = (eps / self.KAPPA) * 1e-2
            s2 = sigma2_initial(prior, self.KAPPA, s2e)
            for state in (s2, s2 / 10, s2 / 100):
                a = se_step(state, 0.0, prior, self.KAPPA, s2e, nodes=63)
                b = se_step(state, 0.0, prior, self.KAPPA, s2e, nodes=126)
                assert a == pytest.approx(b, rel=1e-9)

    def test_monte_carlo_oracle(self):
        """Independent sampling estimate of the one-step map."""
        prior = SignalPrior(epsilon=0.05)
        s2 = sigma2_initial(prior, self.KAPPA, self.S2E)
        rng = np.random.default_rng(123)
        n = 2_000_000
        s0 = np.where(rng.random(n) < prior.epsilon, rng.normal(0.0, 1.0, n), 0.0)
        f = s0 + np.sqrt(s2) * rng.standard_normal(n)
        x = eta(f, EffectiveChannel(s2), prior)
        mc = self.S2E + np.mean((x - s0) ** 2) / self.KAPPA
        got = se_step(s2, 0.0, prior, self.KAPPA, self.S2E)
        assert got == pytest.approx(mc, rel=5e-3)


class TestSeTrajectory:
    KAPPA = 0.3

    def _steady(self, eps, tol=0.1):
        prior = SignalPrior(epsilon=eps)
        s2e = (eps / self.KAPPA) * 1e-2  # 20 dB
        return se_trajectory(prior, self.KAPPA, s2e, T_max=40, steady_tol_db=tol)

    def test_steady_state_counts(self):
        """Steady-state detection lands in the documented bands."""
        assert abs(self._steady(0.03).steady_state_t - 8) <= 1
        assert abs(self._steady(0.05).steady_state_t - 10) <= 1
        assert abs(self._steady(0.10).steady_state_t - 20) <= 2

    def test_monotone_contraction(self):
        for eps in (0.03, 0.05, 0.10):
            seq = self._steady(eps).sigma2_seq
            assert np.all(np.diff(seq) <= 1e-15)

    def test_huge_added_var_blocks_recovery(self):
        prior = SignalPrior(epsilon=0.05)
        s2e = 1.6667e-3
        tr = se_trajectory(prior, self.KAPPA, s2e, added_var_seq=[1e6] * 10, T_max=10)
        s2_0 = tr.sigma2_seq[0]
        # the denoiser returns (almost) the prior mean: variance stays put
        assert np.all(np.abs(tr.sigma2_seq - s2_0) < 0.05 * s2_0)

    def test_sdr_sentinel(self):
        assert sdr_db(1.0e-3, rho=0.1667, sigma2_e=1.0e-3) == float("inf")
        assert sdr_db(0.5e-3, rho=0.1667, sigma2_e=1.0e-3) == float("inf")


class TestMseInterpolator:
    def test_matches_quadrature(self):
        prior = SignalPrior(epsilon=0.05)
        table = MseInterpolator(prior, 1e-4, 1.0)
        w = np.geomspace(1.5e-4, 0.9, 200)
        exact = denoiser_mse(w, prior)
        np.testing.assert_allclose(table(w), exact, rtol=1e-9)

    def test_out_of_range_rejected(self):
        table = MseInterpolator(SignalPrior(epsilon=0.05), 1e-3, 1.0)
        with pytest.raises(ValueError):
            table(2.0)
