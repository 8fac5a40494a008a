"""Centralized AMP and its P-processor decomposition with quantized uplinks.

The distributed run keeps the fusion-center protocol honest: processors
see only the shared downlink scalars (current estimate, mean denoiser
slope, residual-energy estimate) plus their own row block; the fusion
center sees only uplink messages.  With quantization disabled the
decomposition reproduces centralized AMP exactly up to float summation
order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .allocation import AllocationPlan, BTPolicy, PlanningContext, bt_step
from .denoiser import (
    EffectiveChannel,
    denoiser_mse,
    eta,
    eta_prime,
    se_trajectory,
    sigma2_initial,
)
from .model import ProblemInstance, empirical_sdr
from .quantizer import CodedBlock, QuantizerSpec, ScalarSourceModel, decode, delta_for_mse, design, encode, quantize

DIVERGENCE_FACTOR = 10.0
UNCOMPRESSED_BITS_PER_ELEMENT = 32.0  # single-precision float baseline


@dataclass(frozen=True)
class IterationTrace:
    """Per-iteration record of one run; rate_bits is per element per
    processor (uplink only, headers excluded)."""

    t: int
    sigma2_C: float
    sigma2_D_pred: float
    sigma2_D_emp: float
    sdr_emp_db: float
    rate_bits: float
    hq_bits: float
    cum_bits: float
    diverged: bool = False


@dataclass(frozen=True)
class UplinkMessage:
    """One processor's per-iteration transmission."""

    processor: int
    residual_energy: float
    block: CodedBlock | None = None
    raw: np.ndarray | None = None  # uncompressed / P=1 paths


@dataclass(frozen=True)
class DownlinkMessage:
    x_next: np.ndarray
    eta_prime_mean: float
    sigma2_hat_D: float


def fusion_aggregate(messages, spec: QuantizerSpec | None, prior, M: int,
                     added_var: float) -> DownlinkMessage:
    """Decode, sum in processor order, denoise.

    The sum runs in ascending processor order regardless of arrival
    order, so the output is bit-identical under permutation.
    """
    msgs = sorted(messages, key=lambda m: m.processor)
    if len({m.processor for m in msgs}) != len(msgs):
        raise ValueError("duplicate processor ids in uplink batch")
    total = None
    for m in msgs:
        if m.block is not None:
            if spec is None:
                raise ValueError("coded uplink without a quantizer spec")
            idx = decode(m.block, spec)
            part = idx * spec.delta
        elif m.raw is not None:
            part = m.raw
        else:
            raise ValueError("uplink message carries no payload")
        total = part.copy() if total is None else total + part
    sigma2_hat = sum(m.residual_energy for m in msgs) / M
    channel = EffectiveChannel(sigma2_hat + added_var)
    x_next = eta(total, channel, prior)
    ep_mean = float(np.mean(eta_prime(total, channel, prior)))
    return DownlinkMessage(x_next=x_next, eta_prime_mean=ep_mean,
                           sigma2_hat_D=sigma2_hat)


def run_centralized(instance: ProblemInstance, T: int, nodes: int = 63):
    """Plain AMP on the full matrix; returns T iteration traces."""
    if T < 1:
        raise ValueError("T must be >= 1")
    cfg, prior = instance.config, instance.prior
    kappa = cfg.kappa
    sigma2_e = cfg.sigma2_e(prior)
    se = se_trajectory(prior, kappa, sigma2_e, T_max=T, nodes=nodes)
    sigma2_0 = se.sigma2_seq[0]

    A, y, s0 = instance.A, instance.y, instance.s0
    N, M = cfg.N, cfg.M
    x = np.zeros(N)
    z = y.copy()
    traces = []
    for tau in range(T):
        sigma2_hat = float(z @ z) / M
        f = x + A.T @ z
        channel = EffectiveChannel(sigma2_hat)
        x = eta(f, channel, prior)
        ep_mean = float(np.mean(eta_prime(f, channel, prior)))
        z = y - A @ x + (N / M) * ep_mean * z
        sigma2_emp = float(z @ z) / M
        pred = sigma2_e + float(denoiser_mse(sigma2_hat, prior, nodes=nodes)) / kappa
        traces.append(IterationTrace(
            t=tau + 1,
            sigma2_C=float(se.sigma2_seq[tau + 1]),
            sigma2_D_pred=pred,
            sigma2_D_emp=sigma2_emp,
            sdr_emp_db=empirical_sdr(x, s0),
            rate_bits=0.0,
            hq_bits=0.0,
            cum_bits=0.0,
            diverged=bool(sigma2_emp > DIVERGENCE_FACTOR * sigma2_0),
        ))
    return traces


def _coder_rng(seed: int, tau: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(0xC0DE, tau)))


def run_mp(
    instance: ProblemInstance,
    mode: str,
    T: int,
    coder: str = "ecsq",
    policy: BTPolicy | None = None,
    plan: AllocationPlan | None = None,
    ctx: PlanningContext | None = None,
    nodes: int = 63,
):
    """P-processor AMP with per-iteration uplink compression.

    mode: "uncompressed" (exact decomposition), "bt" (online
    back-tracking, needs policy) or "dp" (fixed plan, needs plan with
    one rate per iteration). coder: "ecsq" runs the real quantize +
    entropy-code + decode pipeline; "ideal" injects Gaussian noise at
    the model distortion and charges the model rate.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if mode not in ("uncompressed", "bt", "dp"):
        raise ValueError(f"unknown mode {mode!r}")
    if coder not in ("ecsq", "ideal"):
        raise ValueError(f"unknown coder {coder!r}")
    if mode == "bt" and policy is None:
        policy = BTPolicy()
    if mode == "dp":
        if plan is None or len(plan.rates) != T:
            raise ValueError("dp mode needs a plan with one rate per iteration")
    cfg, prior = instance.config, instance.prior
    N, M, P = cfg.N, cfg.M, cfg.P
    kappa = cfg.kappa
    sigma2_e = cfg.sigma2_e(prior)
    if mode in ("bt", "dp") and ctx is None:
        ctx = PlanningContext(prior=prior, kappa=kappa, sigma2_e=sigma2_e, P=P)
    se = se_trajectory(prior, kappa, sigma2_e, T_max=T, nodes=nodes)
    sigma2_0 = se.sigma2_seq[0]

    A, y, s0 = instance.A, instance.y, instance.s0
    blocks = [instance.rows(p) for p in range(P)]
    Aps = [A[b] for b in blocks]
    yps = [y[b] for b in blocks]

    x = np.zeros(N)
    zps = [yp.copy() for yp in yps]
    ep_mean = 0.0
    sigma2_hat = sum(float(zp @ zp) for zp in zps) / M

    traces = []
    cum = 0.0
    for tau in range(T):
        # --- local computation ---
        fps = [x / P + Ap.T @ zp for Ap, zp in zip(Aps, zps)]
        energies = [float(zp @ zp) for zp in zps]

        # --- rate selection for this iteration ---
        spec = None
        sigma2_q = 0.0
        rate_model = 0.0
        if mode == "bt":
            rate_model, sigma2_q = bt_step(sigma2_hat, float(se.sigma2_seq[tau + 1]),
                                           policy, ctx)
        elif mode == "dp":
            rate_model = float(plan.rates[tau])
            sigma2_q = float(ctx.sigma2_q_rd(sigma2_hat, rate_model))
        if mode != "uncompressed" and coder == "ecsq":
            spec = design(ScalarSourceModel(prior=prior, sigma2_t=sigma2_hat, P=P),
                          delta_for_mse(sigma2_q))
            sigma2_q = spec.model_mse

        # --- uplink and fusion ---
        added_var = P * sigma2_q
        if mode == "uncompressed":
            messages = [UplinkMessage(processor=p, residual_energy=en, raw=fp)
                        for p, (en, fp) in enumerate(zip(energies, fps))]
            down = fusion_aggregate(messages, None, prior, M, 0.0)
            rate_bits = UNCOMPRESSED_BITS_PER_ELEMENT
            hq_bits = 0.0
        elif coder == "ecsq":
            messages = []
            coded_bits = 0
            for p, (en, fp) in enumerate(zip(energies, fps)):
                idx, _ = quantize(fp, spec)
                block = encode(idx, spec)
                coded_bits += block.bit_length()
                messages.append(UplinkMessage(processor=p, residual_energy=en,
                                              block=block))
            down = fusion_aggregate(messages, spec, prior, M, added_var)
            rate_bits = coded_bits / (P * N)
            hq_bits = spec.entropy_bits
        else:  # ideal coder: model-rate accounting, Gaussian-noise injection
            rng = _coder_rng(cfg.seed, tau)
            noisy = [fp + rng.normal(0.0, np.sqrt(sigma2_q), N) for fp in fps]
            messages = [UplinkMessage(processor=p, residual_energy=en, raw=fpn)
                        for p, (en, fpn) in enumerate(zip(energies, noisy))]
            down = fusion_aggregate(messages, None, prior, M, added_var)
            rate_bits = rate_model
            hq_bits = 0.0

        pred = sigma2_e + float(
            denoiser_mse(sigma2_hat + added_var, prior, nodes=nodes)) / kappa
        x = down.x_next
        ep_mean = down.eta_prime_mean

        # residual update: the state this iteration is reported at
        onsager = (N / M) * ep_mean
        zps = [yp - Ap @ x + onsager * zp
               for yp, Ap, zp in zip(yps, Aps, zps)]
        sigma2_hat = sum(float(zp @ zp) for zp in zps) / M

        cum += rate_bits
        traces.append(IterationTrace(
            t=tau + 1,
            sigma2_C=float(se.sigma2_seq[tau + 1]),
            sigma2_D_pred=pred,
            sigma2_D_emp=sigma2_hat,
            sdr_emp_db=empirical_sdr(x, s0),
            rate_bits=rate_bits,
            hq_bits=hq_bits,
            cum_bits=cum,
            diverged=bool(sigma2_hat > DIVERGENCE_FACTOR * sigma2_0),
        ))
    return traces
