import numpy as np
import pytest

from mpamp.model import ProblemConfig, SignalPrior, build_instance, empirical_sdr, sample_signal


class TestSignalPrior:
    def test_rejects_bad_epsilon(self):
        with pytest.raises(ValueError):
            SignalPrior(epsilon=0.0)
        with pytest.raises(ValueError):
            SignalPrior(epsilon=1.5)

    def test_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            SignalPrior(epsilon=0.5, sigma_s=0.0)

    def test_second_moment(self):
        prior = SignalPrior(epsilon=0.05, mu_s=0.5, sigma_s=2.0)
        assert prior.second_moment() == pytest.approx(0.05 * (0.25 + 4.0))


class TestSampleSignal:
    def test_pure_gaussian_second_moment(self):
        """epsilon=1: mean square within 3 standard errors of 1."""
        x = sample_signal(SignalPrior(epsilon=1.0), N=100_000, seed=7)
        m2 = np.mean(x ** 2)
        stderr = np.sqrt(2.0 / x.size)  # var of mean of chi2_1 values
        assert abs(m2 - 1.0) < 3 * stderr

    def test_sparsity_fraction(self):
        """Nonzero fraction within the 4-sigma binomial band of epsilon."""
        N = 10_000
        eps = 0.05
        x = sample_signal(SignalPrior(epsilon=eps), N=N, seed=11)
        frac = np.mean(x != 0.0)
        band = 4 * np.sqrt(eps * (1 - eps) / N)
        assert abs(frac - eps) < band

    def test_deterministic(self):
        prior = SignalPrior(epsilon=0.1)
        a = sample_signal(prior, 1000, seed=3)
        b = sample_signal(prior, 1000, seed=3)
        assert np.array_equal(a, b)

    def test_matches_instance_signal(self):
        """The signal sub-stream regenerates independently of the instance."""
        prior = SignalPrior(epsilon=0.1)
        cfg = ProblemConfig(N=500, M=300, P=3, snr_db=20.0, seed=42)
        inst = build_instance(cfg, prior)
        assert np.array_equal(inst.s0, sample_signal(prior, 500, seed=42))


class TestBuildInstance:
    def test_partition(self):
        """M=3000, P=30: thirty contiguous blocks of 100 rows."""
        cfg = ProblemConfig(N=100, M=3000, P=30, snr_db=20.0, seed=0)
        inst = build_instance(cfg, SignalPrior(epsilon=0.05))
        assert len(inst.row_ranges) == 30
        assert all(b - a == 100 for a, b in inst.row_ranges)
        # disjoint cover of [0, M)
        covered = np.concatenate([np.arange(a, b) for a, b in inst.row_ranges])
        assert np.array_equal(np.sort(covered), np.arange(3000))

    def test_indivisible_P_rejected(self):
        with pytest.raises(ValueError):
            ProblemConfig(N=100, M=3000, P=7, snr_db=20.0, seed=0)

    def test_sigma2_e_value(self):
        """rho * 10^(-SNR/10) at eps=0.05, kappa=0.3, 20 dB."""
        cfg = ProblemConfig(N=10_000, M=3000, P=30, snr_db=20.0, seed=0)
        prior = SignalPrior(epsilon=0.05)
        assert cfg.sigma2_e(prior) == pytest.approx(1.6667e-3, rel=1e-4)
        assert cfg.rho(prior) == pytest.approx(1.0 / 6.0)

    def test_measurement_identity(self):
        cfg = ProblemConfig(N=400, M=200, P=4, snr_db=15.0, seed=5)
        inst = build_instance(cfg, SignalPrior(epsilon=0.1))
        np.testing.assert_allclose(inst.y, inst.A @ inst.s0 + inst.e, rtol=0, atol=1e-14)

    def test_noiseless_limit(self):
        cfg = ProblemConfig(N=400, M=200, P=4, snr_db=float("inf"), seed=5)
        inst = build_instance(cfg, SignalPrior(epsilon=0.1))
        assert np.array_equal(inst.e, np.zeros(200))
        assert np.array_equal(inst.y, inst.A @ inst.s0)

    def test_generation_deterministic(self):
        cfg = ProblemConfig(N=300, M=150, P=5, snr_db=20.0, seed=99)
        prior = SignalPrior(epsilon=0.05)
        a = build_instance(cfg, prior)
        b = build_instance(cfg, prior)
        assert np.array_equal(a.A, b.A)
        assert np.array_equal(a.s0, b.s0)
        assert np.array_equal(a.e, b.e)
        assert np.array_equal(a.y, b.y)

    def test_column_energy_band(self):
        """Column squared norms of A concentrate around 1 (chi2_M / M)."""
        cfg = ProblemConfig(N=1000, M=3000, P=30, snr_db=20.0, seed=1)
        inst = build_instance(cfg, SignalPrior(epsilon=0.05))
        norms = np.sum(inst.A ** 2, axis=0)
        assert norms.min() > 0.7 and norms.max() < 1.3


class TestEmpiricalSdr:
    def test_exact_recovery_is_inf(self):
        s0 = np.array([1.0, -2.0, 0.0])
        assert empirical_sdr(s0, s0) == float("inf")

    def test_zero_estimate_is_zero_db(self):
        s0 = np.array([1.0, -2.0, 3.0])
        assert empirical_sdr(np.zeros(3), s0) == pytest.approx(0.0, abs=1e-12)

    def test_constructed_ratio(self):
        """||d||^2 = ||s0||^2 / 100 gives exactly 20 dB."""
        rng = np.random.default_rng(0)
        s0 = rng.standard_normal(1000)
        d = rng.standard_normal(1000)
        d *= np.linalg.norm(s0) / (10.0 * np.linalg.norm(d))
        assert empirical_sdr(s0 + d, s0) == pytest.approx(20.0, abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            empirical_sdr(np.zeros(3), np.zeros(4))
