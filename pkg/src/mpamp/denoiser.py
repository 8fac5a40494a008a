"""Conditional-mean denoiser for the Bernoulli-Gaussian prior, and the
scalar state-evolution recursion that predicts AMP's per-iteration noise
variance, with or without an extra quantization-noise term.

Scalar channel: F = S0 + sqrt(w) Z with Z ~ N(0,1) and w the effective
noise variance.  The posterior mean is

    eta(f) = pi(f) * m(f),
    pi(f)  = P[S0 != 0 | f]          (slab responsibility)
    m(f)   = (sigma_s^2 f + w mu_s) / (sigma_s^2 + w)

and the recursion maps sigma2 -> sigma2_e + mse(sigma2 + added) / kappa,
where mse(w) = E[(eta(S0 + sqrt(w) Z) - S0)^2].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.interpolate import PchipInterpolator

from .model import SignalPrior

GH_NODES_DEFAULT = 63


@dataclass(frozen=True)
class EffectiveChannel:
    """Effective scalar-channel noise variance seen by the denoiser."""

    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0.0:
            raise ValueError(f"channel variance must be positive, got {self.sigma2}")


@dataclass(frozen=True)
class SETrace:
    """State-evolution output: variance sequence, SDRs (dB), steady point.

    sigma2_seq[t] is the effective variance before iteration t+1;
    sdr_seq[t] is the matching SDR. steady_state_t is the first t >= 1
    whose SDR gain over t-1 falls below the tolerance (None if never).
    """

    sigma2_seq: np.ndarray
    sdr_seq: np.ndarray
    steady_state_t: int | None


def _responsibility_and_mean(f, w, prior: SignalPrior):
    """Return (pi, m): slab posterior probability and slab posterior mean.

    Computed in the log domain; w can be orders of magnitude below
    sigma_s^2, which would underflow the spike evidence otherwise.
    """
    vs = prior.sigma2_s + w
    if prior.epsilon >= 1.0:
        pi = np.ones_like(f)
    else:
        log_slab = (
            math.log(prior.epsilon)
            - 0.5 * np.log(2.0 * np.pi * vs)
            - (f - prior.mu_s) ** 2 / (2.0 * vs)
        )
        log_spike = (
            math.log1p(-prior.epsilon)
            - 0.5 * np.log(2.0 * np.pi * w)
            - f ** 2 / (2.0 * w)
        )
        # pi = 1 / (1 + exp(log_spike - log_slab)), saturating safely
        diff = np.clip(log_spike - log_slab, -745.0, 745.0)
        pi = 1.0 / (1.0 + np.exp(diff))
    m = (prior.sigma2_s * f + w * prior.mu_s) / vs
    return pi, m


def eta(f, channel: EffectiveChannel, prior: SignalPrior):
    """Posterior mean E[S0 | S0 + sqrt(sigma2) Z = f]. Vectorized in f."""
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise ValueError("eta: input must be finite")
    pi, m = _responsibility_and_mean(f, channel.sigma2, prior)
    out = pi * m
    return out if out.ndim else float(out)


def eta_prime(f, channel: EffectiveChannel, prior: SignalPrior):
    """Derivative of eta with respect to f. Vectorized in f."""
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise ValueError("eta_prime: input must be finite")
    w = channel.sigma2
    vs = prior.sigma2_s + w
    pi, m = _responsibility_and_mean(f, w, prior)
    dlogit = f / w - (f - prior.mu_s) / vs  # d/df log(slab/spike evidence)
    out = pi * (1.0 - pi) * dlogit * m + pi * (prior.sigma2_s / vs)
    return out if out.ndim else float(out)


def _gh_nodes(n: int):
    x, wt = hermgauss(n)
    return np.sqrt(2.0) * x, wt / np.sqrt(np.pi)  # E[h(Z)] = sum wt * h(z)


def denoiser_mse(w, prior: SignalPrior, nodes: int = GH_NODES_DEFAULT):
    """E[(eta(S0 + sqrt(w) Z) - S0)^2] by Gauss-Hermite quadrature.

    The prior mixture is split exactly: the spike branch is a 1-D
    quadrature over Z, the slab branch a 2-D tensor grid over (S0, Z).
    Vectorized over an array of channel variances w.
    """
    w_arr = np.atleast_1d(np.asarray(w, dtype=float))
    if np.any(w_arr <= 0.0) or not np.all(np.isfinite(w_arr)):
        raise ValueError("channel variance must be positive and finite")
    z, wt = _gh_nodes(nodes)
    out = np.empty_like(w_arr)

    s_nodes = prior.mu_s + prior.sigma_s * z            # slab S0 nodes
    SS = s_nodes[None, :, None]
    ZZ = z[None, None, :]
    W2 = np.outer(wt, wt)[None, :, :]

    chunk = max(1, 2_000_000 // (nodes * nodes))
    for i in range(0, w_arr.size, chunk):
        wc = w_arr[i:i + chunk, None]
        sigma = np.sqrt(wc)
        # spike branch: S0 = 0
        e0 = _eta_raw(sigma * z[None, :], wc, prior)
        mse0 = (wt[None, :] * e0 ** 2).sum(axis=1)
        # slab branch
        f = SS + sigma[:, :, None] * ZZ
        e1 = _eta_raw(f, wc[:, :, None], prior)
        mse1 = (W2 * (e1 - SS) ** 2).sum(axis=(1, 2))
        out[i:i + chunk] = (1.0 - prior.epsilon) * mse0 + prior.epsilon * mse1
    return out if np.ndim(w) else float(out[0])


def _eta_raw(f, w, prior: SignalPrior):
    pi, m = _responsibility_and_mean(f, w, prior)
    return pi * m


def sigma2_initial(prior: SignalPrior, kappa: float, sigma2_e: float) -> float:
    """Start of the recursion: sigma2_e + E[S0^2] / kappa."""
    return sigma2_e + prior.second_moment() / kappa


def se_step(
    sigma2_t: float,
    added_var: float,
    prior: SignalPrior,
    kappa: float,
    sigma2_e: float,
    nodes: int = GH_NODES_DEFAULT,
) -> float:
    """One state-evolution update with extra channel noise added_var.

    Returns sigma2_e + (1/kappa) E[(eta(S0 + sqrt(sigma2_t + added_var) Z)
    - S0)^2]; added_var = 0 gives the plain (uncompressed) recursion.
    """
    if sigma2_t <= 0.0:
        raise ValueError("sigma2_t must be positive")
    if added_var < 0.0:
        raise ValueError("added_var must be non-negative")
    return sigma2_e + denoiser_mse(sigma2_t + added_var, prior, nodes=nodes) / kappa


def sdr_db(sigma2: float, rho: float, sigma2_e: float) -> float:
    """SDR implied by an SE variance: 10*log10(rho / (sigma2 - sigma2_e)).

    Returns +inf when sigma2 <= sigma2_e (distortion at or below the
    measurement-noise floor).
    """
    excess = sigma2 - sigma2_e
    if excess <= 0.0:
        return float("inf")
    return 10.0 * math.log10(rho / excess)


def se_trajectory(
    prior: SignalPrior,
    kappa: float,
    sigma2_e: float,
    added_var_seq=None,
    T_max: int = 40,
    steady_tol_db: float = 0.1,
    nodes: int = GH_NODES_DEFAULT,
) -> SETrace:
    """Iterate the recursion from sigma2_0 for T_max steps.

    added_var_seq gives the extra channel variance for each iteration
    (None means all zeros). steady_state_t is the first t >= 1 with
    |SDR(t) - SDR(t-1)| < steady_tol_db.
    """
    if T_max < 1:
        raise ValueError("T_max must be >= 1")
    if added_var_seq is None:
        added = np.zeros(T_max)
    else:
        added = np.asarray(added_var_seq, dtype=float)
        if added.size < T_max:
            raise ValueError(f"added_var_seq has {added.size} entries, need {T_max}")
    rho = prior.epsilon / kappa
    seq = [sigma2_initial(prior, kappa, sigma2_e)]
    for t in range(T_max):
        seq.append(se_step(seq[-1], added[t], prior, kappa, sigma2_e, nodes=nodes))
    seq = np.array(seq)
    sdr = np.array([sdr_db(s2, rho, sigma2_e) for s2 in seq])
    steady = None
    for t in range(1, len(sdr)):
        if abs(sdr[t] - sdr[t - 1]) < steady_tol_db:
            steady = t
            break
    return SETrace(sigma2_seq=seq, sdr_seq=sdr, steady_state_t=steady)


class MseInterpolator:
    """Monotone spline of denoiser_mse over a log-spaced variance grid.

    Rate allocation evaluates the recursion on ~1e5-1e6 (state, rate)
    pairs; tabulating mse(w) once makes those sweeps cheap. The table is
    validated against direct quadrature in the test suite.
    """

    def __init__(self, prior: SignalPrior, w_lo: float, w_hi: float,
                 grid_points: int = 4096, nodes: int = GH_NODES_DEFAULT):
        if not 0.0 < w_lo < w_hi:
            raise ValueError("need 0 < w_lo < w_hi")
        self.prior = prior
        self.w_lo = w_lo
        self.w_hi = w_hi
        grid = np.geomspace(w_lo, w_hi, grid_points)
        vals = denoiser_mse(grid, prior, nodes=nodes)
        self._spline = PchipInterpolator(np.log(grid), vals, extrapolate=False)

    def __call__(self, w):
        w_arr = np.asarray(w, dtype=float)
        lo = self.w_lo * (1.0 - 1e-12)
        hi = self.w_hi * (1.0 + 1e-12)
        if np.any(w_arr < lo) or np.any(w_arr > hi):
            raise ValueError(
                f"variance outside tabulated range [{self.w_lo:g}, {self.w_hi:g}]"
            )
        out = self._spline(np.log(np.clip(w_arr, self.w_lo, self.w_hi)))
        return out if out.ndim else float(out)
