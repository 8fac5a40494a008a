"""Problem instances for compressed-sensing recovery experiments.

Measurement model: y = A s0 + e with A (M x N) i.i.d. N(0, 1/M), noise
e i.i.d. N(0, sigma2_e), and s0 drawn from a Bernoulli-Gaussian prior.
The M rows are split into P contiguous blocks, one per processor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SignalPrior:
    """Bernoulli-Gaussian (spike-and-slab) signal law.

    Each entry is 0 with probability 1 - epsilon, otherwise
    N(mu_s, sigma_s^2).
    """

    epsilon: float
    mu_s: float = 0.0
    sigma_s: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if self.sigma_s <= 0.0:
            raise ValueError(f"sigma_s must be positive, got {self.sigma_s}")

    @property
    def sigma2_s(self) -> float:
        return self.sigma_s ** 2

    def second_moment(self) -> float:
        """E[S0^2] = epsilon * (mu_s^2 + sigma_s^2)."""
        return self.epsilon * (self.mu_s ** 2 + self.sigma2_s)


@dataclass(frozen=True)
class ProblemConfig:
    """Dimensions, noise level and seed for one problem instance."""

    N: int
    M: int
    P: int
    snr_db: float
    seed: int

    def __post_init__(self):
        if self.N < 1 or self.M < 1 or self.P < 1:
            raise ValueError("N, M, P must be positive integers")
        if self.M % self.P != 0:
            raise ValueError(f"P={self.P} must divide M={self.M}")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")

    @property
    def kappa(self) -> float:
        """Sampling ratio M / N."""
        return self.M / self.N

    def rho(self, prior: SignalPrior) -> float:
        """epsilon / kappa, the expected signal energy per measurement."""
        return prior.epsilon / self.kappa

    def sigma2_e(self, prior: SignalPrior) -> float:
        """Noise variance implied by the SNR: rho * 10^(-snr_db / 10)."""
        return self.rho(prior) * 10.0 ** (-self.snr_db / 10.0)


@dataclass(frozen=True)
class ProblemInstance:
    """One generated problem: immutable after construction."""

    config: ProblemConfig
    prior: SignalPrior
    s0: np.ndarray
    A: np.ndarray
    e: np.ndarray
    y: np.ndarray
    row_ranges: tuple = field(default_factory=tuple)  # P tuples (start, stop)

    def rows(self, p: int) -> slice:
        start, stop = self.row_ranges[p]
        return slice(start, stop)


def _sub_rngs(seed: int):
    """Derive the (signal, matrix, noise) generators from one master seed."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def sample_signal(prior: SignalPrior, N: int, seed: int) -> np.ndarray:
    """Draw a length-N Bernoulli-Gaussian signal, deterministic in seed."""
    if N < 1:
        raise ValueError("N must be >= 1")
    rng, _, _ = _sub_rngs(seed)
    active = rng.random(N) < prior.epsilon
    values = rng.normal(prior.mu_s, prior.sigma_s, N)
    return np.where(active, values, 0.0)


def build_instance(config: ProblemConfig, prior: SignalPrior) -> ProblemInstance:
    """Generate (s0, A, e, y) and the P-way contiguous row partition.

    Sub-seeds for the signal, matrix and noise are derived deterministically
    from config.seed so each component is reproducible on its own.
    """
    sig_rng, mat_rng, noise_rng = _sub_rngs(config.seed)
    N, M, P = config.N, config.M, config.P

    active = sig_rng.random(N) < prior.epsilon
    s0 = np.where(active, sig_rng.normal(prior.mu_s, prior.sigma_s, N), 0.0)

    A = mat_rng.normal(0.0, 1.0 / np.sqrt(M), (M, N))

    sigma2_e = config.sigma2_e(prior)
    e = noise_rng.standard_normal(M) * np.sqrt(sigma2_e)

    y = A @ s0 + e
    block = M // P
    ranges = tuple((p * block, (p + 1) * block) for p in range(P))
    return ProblemInstance(config=config, prior=prior, s0=s0, A=A, e=e, y=y, row_ranges=ranges)


def empirical_sdr(x: np.ndarray, s0: np.ndarray) -> float:
    """Signal-to-distortion ratio 10*log10(||s0||^2 / ||x - s0||^2) in dB.

    Returns +inf when x equals s0 exactly.
    """
    x = np.asarray(x, dtype=float)
    s0 = np.asarray(s0, dtype=float)
    if x.shape != s0.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {s0.shape}")
    err = float(np.sum((x - s0) ** 2))
    if err == 0.0:
        return float("inf")
    return 10.0 * np.log10(float(np.sum(s0 ** 2)) / err)
