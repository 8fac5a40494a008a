"""Numerical rate-distortion curves for the uplink source.

The alternating-minimization scheme of Blahut and Arimoto computes one
(rate, distortion) point per Lagrange slope for the discretized source
under squared error, with the reproduction alphabet equal to the source
alphabet.  Curves over a rate grid come from bracketing each target rate
in slope and bisecting; D(R) lookups interpolate linearly in log D.

For rate allocation (which needs D(R) at thousands of source variances)
RdFamily tabulates normalized curves on a pilot grid of variances and
interpolates, using the exact scaling D_{cY}(R) = c^2 D_Y(R).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .quantizer import ScalarSourceModel

_TINY = 1e-300
_LN2 = np.log(2.0)


class ConvergenceError(Exception):
    """Iteration cap exceeded; carries the last (rate, distortion) iterate."""

    def __init__(self, message, rate=None, distortion=None):
        super().__init__(message)
        self.rate = rate
        self.distortion = distortion


@dataclass(frozen=True)
class DiscreteSource:
    """Uniformly spaced alphabet with a pmf summing to one."""

    points: np.ndarray
    pmf: np.ndarray

    def __post_init__(self):
        if len(self.points) != len(self.pmf):
            raise ValueError("points and pmf must have equal length")
        if np.any(np.diff(self.points) <= 0):
            raise ValueError("points must be strictly increasing")
        if abs(float(self.pmf.sum()) - 1.0) > 1e-12:
            raise ValueError("pmf must sum to 1 within 1e-12")

    @property
    def mean(self) -> float:
        return float(self.pmf @ self.points)

    @property
    def variance(self) -> float:
        m = self.mean
        return float(self.pmf @ (self.points - m) ** 2)


@dataclass(frozen=True)
class RDCurve:
    """Monotone (rate, distortion) trade-off for one source."""

    rates: np.ndarray
    distortions: np.ndarray
    source_sigma2_t: float

    def __post_init__(self):
        if np.any(np.diff(self.rates) < 0):
            raise ValueError("rates must be nondecreasing")
        if np.any(self.distortions <= 0):
            raise ValueError("distortions must be positive")
        if np.any(np.diff(self.distortions) > 0):
            raise ValueError("distortions must be nonincreasing")


def discretize(source: ScalarSourceModel, num_points: int = 2001) -> DiscreteSource:
    """Sample the mixture law onto a uniform alphabet spanning +/- 10 sd.

    Cell probabilities are mixture-CDF differences; the residual tails are
    folded into the endpoint cells.
    """
    if num_points < 101 or num_points % 2 == 0:
        raise ValueError("num_points must be an odd integer >= 101")
    mean, sd = source.mean, source.std
    pts = np.linspace(mean - 10.0 * sd, mean + 10.0 * sd, num_points)
    half = (pts[1] - pts[0]) / 2.0
    edges = np.concatenate(([pts[0] - half], pts[:-1] + half, [pts[-1] + half]))
    pmf = source.interval_probs(edges)
    pmf[0] += float(source.cdf(edges[0]))
    pmf[-1] += 1.0 - float(source.cdf(edges[-1]))
    pmf = pmf / pmf.sum()
    return DiscreteSource(points=pts, pmf=pmf)


def _ba_solve(points, pmf, slope, tol, max_iter, q0=None):
    """Core alternating minimization at one slope (nats per squared error).

    Matrix-vector form: per iteration two products with the kernel
    A = exp(-slope * d), plus the dual-formula rate
    R = (-slope * D - sum_x p(x) log Z(x)) / ln 2.
    """
    d = (points[:, None] - points[None, :]) ** 2
    A = np.exp(-slope * d)
    Ad = A * d
    q = pmf.copy() if q0 is None else q0.copy()
    rate_prev = None
    rate = dist = 0.0
    for it in range(max_iter):
        Z = np.maximum(A @ q, _TINY)
        q = q * (A.T @ (pmf / Z))
        q = q / q.sum()
        Z = np.maximum(A @ q, _TINY)
        dist = float(pmf @ ((Ad @ q) / Z))
        rate = float((-slope * dist - pmf @ np.log(Z)) / _LN2)
        if rate_prev is not None and abs(rate - rate_prev) < tol:
            return max(rate, 0.0), dist, q
        rate_prev = rate
    raise ConvergenceError(
        f"no convergence after {max_iter} iterations at slope {slope:g}",
        rate=max(rate, 0.0), distortion=dist,
    )


def blahut_arimoto(source: DiscreteSource, slope: float, tol: float = 1e-8,
                   max_iter: int = 100_000):
    """One rate-distortion point at Lagrange slope `slope` (> 0).

    Returns (rate_bits, distortion); converged when successive rate
    iterates differ by less than tol.
    """
    if slope <= 0.0:
        raise ValueError("slope must be positive")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    rate, dist, _ = _ba_solve(source.points, source.pmf, slope, tol, max_iter)
    return rate, dist


def _sweep(points, pmf, var, rate_hi, tol=3e-7, max_iter=20_000, n_slopes=48):
    """Warm-started slope ladder covering rates (0, ~rate_hi].

    Returns arrays (rates, distortions, slopes) plus the per-slope
    reproduction distributions for later warm starts.  The exact zero-rate
    anchor (0, var) is prepended.
    """
    slope_hi = (4.0 ** (rate_hi + 2.0)) / (2.0 * var)
    slopes = np.geomspace(0.7 / var, slope_hi, n_slopes)
    rates, dists, qs = [0.0], [var], [None]
    q = None
    for s in slopes:
        if q is not None:
            q = q + 1e-9 * q.max()
            q = q / q.sum()
        r, D, q = _ba_solve(points, pmf, s, tol, max_iter, q0=q)
        rates.append(r)
        dists.append(D)
        qs.append(q)
    return np.array(rates), np.array(dists), np.concatenate(([np.nan], slopes)), qs


# cache of computed curves, keyed by the quantized source parameters
_curve_cache: dict = {}
_cache_lock = threading.Lock()


def _cache_key(source: ScalarSourceModel, rate_grid, num_points):
    s2 = source.sigma2_t
    quant = round(np.log(s2) / 1e-6) if s2 > 0 else 0  # 1e-6 relative
    prior = source.prior
    return (prior.epsilon, prior.mu_s, prior.sigma_s, source.P, quant,
            num_points, tuple(np.round(np.asarray(rate_grid, dtype=float), 9)))


def rd_curve(source: ScalarSourceModel, rate_grid, num_points: int = 2001,
             rate_tol_bits: float = 1e-3) -> RDCurve:
    """Distortions at the requested grid rates.

    Sweeps slopes to bracket each positive grid rate, then bisects on the
    slope (warm-started) until the rate matches within rate_tol_bits.
    Rate 0 maps to the source variance exactly.
    """
    rate_grid = np.sort(np.asarray(rate_grid, dtype=float))
    if rate_grid[0] < 0:
        raise ValueError("rates must be non-negative")
    key = _cache_key(source, rate_grid, num_points)
    with _cache_lock:
        hit = _curve_cache.get(key)
    if hit is not None:
        return hit

    disc = discretize(source, num_points)
    pts, pmf, var = disc.points, disc.pmf, disc.variance
    rmax = float(rate_grid[-1])
    sw_r, sw_d, sw_s, sw_q = _sweep(pts, pmf, var, rate_hi=max(rmax, 1.0))
    if sw_r[-1] < rmax:
        raise ValueError(
            f"requested rate {rmax:g} exceeds {sw_r[-1]:.3f} bits reachable "
            f"with a {num_points}-point alphabet"
        )

    out_d = np.empty_like(rate_grid)
    for i, r_t in enumerate(rate_grid):
        if r_t == 0.0:
            out_d[i] = var
            continue
        j = int(np.searchsorted(sw_r, r_t))
        j = min(max(j, 1), len(sw_r) - 1)
        if abs(sw_r[j] - r_t) <= rate_tol_bits:
            out_d[i] = sw_d[j]
            continue
        if abs(sw_r[j - 1] - r_t) <= rate_tol_bits and j >= 2:
            out_d[i] = sw_d[j - 1]
            continue
        s_lo = sw_s[j - 1] if j >= 2 else sw_s[1] * 0.05
        s_hi = sw_s[j]
        q = sw_q[j].copy()
        rate = dist = None
        for _ in range(100):
            s_mid = float(np.sqrt(s_lo * s_hi))
            q = q + 1e-9 * q.max()
            q = q / q.sum()
            rate, dist, q = _ba_solve(pts, pmf, s_mid, 3e-7, 20_000, q0=q)
            if abs(rate - r_t) <= rate_tol_bits:
                break
            if rate > r_t:
                s_hi = s_mid
            else:
                s_lo = s_mid
        out_d[i] = dist

    # deduplicate any flat spots so the trade-off stays strictly monotone
    out_d = np.minimum.accumulate(out_d)
    curve = RDCurve(rates=rate_grid, distortions=out_d, source_sigma2_t=source.sigma2_t)
    with _cache_lock:
        _curve_cache[key] = curve
    return curve


def distortion_at_rate(curve: RDCurve, R: float) -> float:
    """D(R) on the curve: exact at grid rates, log-D linear in between."""
    rates, dists = curve.rates, curve.distortions
    if R < rates[0] - 1e-12 or R > rates[-1] + 1e-12:
        raise ValueError(f"rate {R:g} outside curve span [{rates[0]:g}, {rates[-1]:g}]")
    R = min(max(R, float(rates[0])), float(rates[-1]))
    return float(np.exp(np.interp(R, rates, np.log(dists))))


class RdFamily:
    """D(sigma2_t, R) interpolator for one (prior, P).

    Pilot curves are computed by the slope sweep on sources normalized to
    unit variance, resampled in log D onto a fixed rate axis, and stored
    per pilot variance.  Lookups interpolate bilinearly in
    (log sigma2_t, R) and scale back by the exact source variance; rates
    beyond the axis extend at the asymptotic high-rate slope of -2 bits
    per factor of 4 in distortion.
    """

    RATE_AXIS_MAX = 7.0
    RATE_AXIS_STEP = 0.05

    def __init__(self, prior, P: int, sigma2_lo: float, sigma2_hi: float,
                 n_pilots: int = 33, num_points: int = 1201):
        if not 0.0 < sigma2_lo < sigma2_hi:
            raise ValueError("need 0 < sigma2_lo < sigma2_hi")
        self.prior = prior
        self.P = P
        self.sigma2_lo = sigma2_lo
        self.sigma2_hi = sigma2_hi
        self.rate_axis = np.arange(
            0.0, self.RATE_AXIS_MAX + self.RATE_AXIS_STEP / 2, self.RATE_AXIS_STEP
        )
        self._log_s2 = np.log(np.geomspace(sigma2_lo, sigma2_hi, n_pilots))
        rows = []
        self._variances = []
        for ls2 in self._log_s2:
            src = ScalarSourceModel(prior=prior, sigma2_t=float(np.exp(ls2)), P=P)
            rows.append(self._pilot_row(src, num_points))
            self._variances.append(src.variance)
        self._logD = np.vstack(rows)  # log of D/Var on the rate axis

    def _pilot_row(self, src: ScalarSourceModel, num_points: int) -> np.ndarray:
        disc = discretize(src, num_points)
        scale = disc.variance
        pts = disc.points / np.sqrt(scale)  # unit-variance alphabet
        r, D, _, _ = _sweep(pts, disc.pmf, 1.0, rate_hi=self.RATE_AXIS_MAX)
        keep = np.concatenate(([True], np.diff(r) > 1e-9))  # solver jitter
        r, D = r[keep], np.minimum.accumulate(D[keep])
        logd = np.log(np.maximum(D, _TINY))
        # log D is convex decreasing in R; past the last computed point,
        # continue at the asymptotic slope -2 ln 2 per bit
        row = np.interp(self.rate_axis, r, logd)
        beyond = self.rate_axis > r[-1]
        row[beyond] = logd[-1] - 2.0 * _LN2 * (self.rate_axis[beyond] - r[-1])
        return row

    def distortion(self, sigma2_t, rates):
        """Vectorized D(R) for one source variance."""
        s2 = float(sigma2_t)
        if not self.sigma2_lo * (1 - 1e-9) <= s2 <= self.sigma2_hi * (1 + 1e-9):
            raise ValueError(
                f"sigma2_t={s2:g} outside family range "
                f"[{self.sigma2_lo:g}, {self.sigma2_hi:g}]"
            )
        ls2 = np.log(min(max(s2, self.sigma2_lo), self.sigma2_hi))
        j = int(np.clip(np.searchsorted(self._log_s2, ls2), 1, len(self._log_s2) - 1))
        t = (ls2 - self._log_s2[j - 1]) / (self._log_s2[j] - self._log_s2[j - 1])
        row = (1.0 - t) * self._logD[j - 1] + t * self._logD[j]

        rates = np.asarray(rates, dtype=float)
        r_end = self.rate_axis[-1]
        logd = np.interp(np.minimum(rates, r_end), self.rate_axis, row)
        over = rates > r_end
        if np.any(over):
            logd = np.where(over, row[-1] - 2.0 * _LN2 * (rates - r_end), logd)
        var = ScalarSourceModel(prior=self.prior, sigma2_t=s2, P=self.P).variance
        out = np.exp(logd) * var
        return out if out.ndim else float(out)

    def curve(self, sigma2_t: float, rate_grid) -> RDCurve:
        """Materialize an RDCurve at one variance through the family."""
        rate_grid = np.sort(np.asarray(rate_grid, dtype=float))
        d = np.minimum.accumulate(self.distortion(sigma2_t, rate_grid))
        return RDCurve(rates=rate_grid, distortions=d, source_sigma2_t=float(sigma2_t))
