"""Per-iteration coding-rate selection.

Two strategies: an online back-tracking rule that spends the minimum rate
keeping the predicted compressed-path variance within a factor gamma of
the uncompressed path, and an offline dynamic program that splits a total
budget R over T iterations to minimize the final predicted variance.

Both reduce to repeated evaluation of the one-step map

    f1(s2, R) = sigma2_e + mse(s2 + P * D(s2, R)) / kappa

where D(s2, R) is the distortion of the uplink source at rate R (from
the rate-distortion backend for planning, or from the designed
quantizer's entropy model on the online path).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .denoiser import GH_NODES_DEFAULT, MseInterpolator, denoiser_mse, sigma2_initial
from .model import SignalPrior
from .quantizer import ScalarSourceModel, delta_for_rate
from .ratedist import RdFamily


@dataclass(frozen=True)
class BTPolicy:
    """Back-tracking knobs: allowed variance ratio and per-iteration cap."""

    gamma: float = 1.1
    rate_cap_bits: float = 6.0

    def __post_init__(self):
        if self.gamma <= 1.0:
            raise ValueError("gamma must exceed 1")
        if self.rate_cap_bits <= 0.0:
            raise ValueError("rate_cap_bits must be positive")


@dataclass(frozen=True)
class AllocationPlan:
    """Rates R_1..R_T with the predicted variance after each iteration."""

    rates: np.ndarray
    predicted_sigma2: np.ndarray
    total_bits: float


@dataclass(frozen=True)
class DPTables:
    """DP state: sigma2_table[s, t] is the best variance after iterations
    1..t+1 spending budget s * delta_R; rate_table holds the rate chosen
    at that cell."""

    sigma2_table: np.ndarray
    rate_table: np.ndarray
    delta_R: float
    S: int


@dataclass
class PlanningContext:
    """Everything the one-step map needs, plus fast tabulated backends.

    The rate-distortion family and the mse table are built lazily for the
    variance range [sigma2_floor, sigma2_ceil]; se_floor/se_ceil bound the
    channel variances the mse table must cover.
    """

    prior: SignalPrior
    kappa: float
    sigma2_e: float
    P: int
    sigma2_floor: float = 0.0   # defaults derived from sigma2_e / sigma2_0
    sigma2_ceil: float = 0.0
    rd_pilots: int = 33
    rd_points: int = 1201
    gh_nodes: int = GH_NODES_DEFAULT
    use_tables: bool = True
    _family: RdFamily | None = field(default=None, repr=False)
    _mse: MseInterpolator | None = field(default=None, repr=False)

    def __post_init__(self):
        s2_0 = sigma2_initial(self.prior, self.kappa, self.sigma2_e)
        if self.sigma2_floor <= 0.0:
            self.sigma2_floor = 0.2 * self.sigma2_e
        if self.sigma2_ceil <= 0.0:
            self.sigma2_ceil = 1.5 * s2_0

    @property
    def sigma2_0(self) -> float:
        return sigma2_initial(self.prior, self.kappa, self.sigma2_e)

    @property
    def family(self) -> RdFamily:
        if self._family is None:
            self._family = RdFamily(
                self.prior, self.P, self.sigma2_floor, self.sigma2_ceil,
                n_pilots=self.rd_pilots, num_points=self.rd_points,
            )
        return self._family

    @property
    def mse(self):
        if not self.use_tables:
            return lambda w: denoiser_mse(w, self.prior, nodes=self.gh_nodes)
        if self._mse is None:
            # channel variance = state + P * D; D <= source variance, and
            # P * Var(F^p) <= sigma2 + E[S0^2], so twice the ceiling in
            # signal units is a safe upper bound
            w_hi = 2.0 * (self.sigma2_ceil + self.prior.second_moment())
            self._mse = MseInterpolator(
                self.prior, 0.5 * self.sigma2_floor, w_hi, nodes=self.gh_nodes
            )
        return self._mse

    def se_from_channel(self, w):
        """sigma2_e + mse(w) / kappa for channel variance(s) w."""
        return self.sigma2_e + np.asarray(self.mse(w)) / self.kappa

    def sigma2_q_rd(self, sigma2_prev: float, rates):
        """Distortion of the uplink source at the given rates (RD model)."""
        return self.family.distortion(sigma2_prev, rates)

    def sigma2_q_ecsq(self, sigma2_prev: float, rate: float) -> float:
        """Model MSE delta^2/12 of the quantizer whose entropy is `rate`."""
        src = ScalarSourceModel(prior=self.prior, sigma2_t=sigma2_prev, P=self.P)
        return delta_for_rate(src, rate) ** 2 / 12.0


def f1(sigma2_prev: float, R_t: float, ctx: PlanningContext,
       rate_measure: str = "rd") -> float:
    """One-step predicted variance when iteration t spends R_t bits."""
    if R_t < 0.0:
        raise ValueError("R_t must be non-negative")
    if rate_measure == "rd":
        s2q = float(ctx.sigma2_q_rd(sigma2_prev, R_t))
    elif rate_measure == "ecsq":
        if R_t == 0.0:
            s2q = ScalarSourceModel(prior=ctx.prior, sigma2_t=sigma2_prev,
                                    P=ctx.P).variance
        else:
            s2q = ctx.sigma2_q_ecsq(sigma2_prev, R_t)
    else:
        raise ValueError(f"unknown rate_measure {rate_measure!r}")
    return float(ctx.se_from_channel(sigma2_prev + ctx.P * s2q))


_BT_RATE_FLOOR = 1e-3
_BT_RES_BITS = 1e-3


def bt_step(sigma2_hat_D: float, sigma2_next_C: float, policy: BTPolicy,
            ctx: PlanningContext, rate_measure: str = "ecsq"):
    """Minimum rate keeping the predicted next variance within
    gamma * sigma2_next_C, clamped to the cap when unattainable.

    Returns (R_t, sigma2_Q). The online rate measure is the designed
    quantizer's entropy; bisection resolution is 1e-3 bits.
    """
    if sigma2_hat_D <= 0.0 or sigma2_next_C <= 0.0:
        raise ValueError("variances must be positive")
    target = policy.gamma * sigma2_next_C

    def predicted(rate):
        return f1(sigma2_hat_D, rate, ctx, rate_measure=rate_measure)

    lo, hi = _BT_RATE_FLOOR, policy.rate_cap_bits
    if predicted(hi) > target:
        rate = hi  # unattainable below the cap
    elif predicted(lo) <= target:
        rate = lo
    else:
        while hi - lo > _BT_RES_BITS:
            mid = 0.5 * (lo + hi)
            if predicted(mid) <= target:
                hi = mid
            else:
                lo = mid
        rate = hi
    if rate_measure == "ecsq":
        s2q = ctx.sigma2_q_ecsq(sigma2_hat_D, rate)
    else:
        s2q = float(ctx.sigma2_q_rd(sigma2_hat_D, rate))
    return rate, s2q


def dp_allocate(sigma2_0: float, R_total: float, T: int, delta_R: float,
                ctx: PlanningContext):
    """Optimal split of R_total over T iterations on the delta_R grid.

    Fills the S x T tables column by column: column 0 is the one-step map
    from sigma2_0; afterwards cell (s, t) minimizes over how much of the
    budget was spent through t-1.  Ties break toward the smaller earlier
    budget.  Returns (AllocationPlan, DPTables).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if delta_R <= 0.0:
        raise ValueError("delta_R must be positive")
    steps = R_total / delta_R
    if abs(steps - round(steps)) > 1e-9:
        raise ValueError(f"delta_R={delta_R} must divide R_total={R_total}")
    S = int(round(steps)) + 1
    grid = np.arange(S) * delta_R

    sigma2_table = np.empty((S, T))
    rate_table = np.empty((S, T))

    def f1_vec(prev_s2: float, rates: np.ndarray) -> np.ndarray:
        s2q = ctx.sigma2_q_rd(prev_s2, rates)
        return ctx.se_from_channel(prev_s2 + ctx.P * np.asarray(s2q))

    sigma2_table[:, 0] = f1_vec(sigma2_0, grid)
    rate_table[:, 0] = grid

    for t in range(1, T):
        prev = sigma2_table[:, t - 1]
        # F[j, k]: start from prev[j], spend grid[k] bits at iteration t+1
        F = np.empty((S, S))
        for j in range(S):
            F[j] = f1_vec(prev[j], grid)
        for s in range(S):
            j_idx = np.arange(s + 1)
            cand = F[j_idx, s - j_idx]
            j_best = int(np.argmin(cand))  # first minimum: smaller early budget
            sigma2_table[s, t] = cand[j_best]
            rate_table[s, t] = grid[s - j_best]

    rates = np.empty(T)
    predicted = np.empty(T)
    s = S - 1
    for t in range(T - 1, -1, -1):
        rates[t] = rate_table[s, t]
        predicted[t] = sigma2_table[s, t]
        s -= int(round(rates[t] / delta_R))
    assert s == 0

    plan = AllocationPlan(rates=rates, predicted_sigma2=predicted,
                          total_bits=float(rates.sum()))
    tables = DPTables(sigma2_table=sigma2_table, rate_table=rate_table,
                      delta_R=delta_R, S=S)
    return plan, tables


ECSQ_RATE_PENALTY_BITS = 0.255
# High-rate entropy excess of a uniform quantizer over the rate-distortion
# bound at equal MSE: (1/2) log2(2 pi e / 12) ~ 0.2546 bits, carried as the
# 0.255 convention in the benchmark tables.


def plan_to_ecsq(plan: AllocationPlan) -> AllocationPlan:
    """Realizable entropy-coded version of an RD-model plan: every
    per-iteration rate grows by the 0.255-bit high-rate penalty."""
    rates = plan.rates + ECSQ_RATE_PENALTY_BITS
    return AllocationPlan(rates=rates, predicted_sigma2=plan.predicted_sigma2.copy(),
                          total_bits=float(rates.sum()))


def serialize_plan(plan: AllocationPlan) -> str:
    """Delimited-text form: one line per iteration, `t,R_t,predicted_sigma2`."""
    lines = ["t,rate_bits,predicted_sigma2"]
    for t, (r, s2) in enumerate(zip(plan.rates, plan.predicted_sigma2), start=1):
        lines.append(f"{t},{r:.9g},{s2:.9g}")
    return "\n".join(lines) + "\n"


def parse_plan(text: str) -> AllocationPlan:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if not lines or lines[0] != "t,rate_bits,predicted_sigma2":
        raise ValueError("not a serialized allocation plan")
    rates, pred = [], []
    for ln in lines[1:]:
        _, r, s2 = ln.split(",")
        rates.append(float(r))
        pred.append(float(s2))
    rates = np.array(rates)
    return AllocationPlan(rates=rates, predicted_sigma2=np.array(pred),
                          total_bits=float(rates.sum()))
