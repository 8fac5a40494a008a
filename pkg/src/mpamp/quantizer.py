"""Mid-tread uniform quantization with entropy coding for the per-processor
uplink messages.

Each processor's linear estimate behaves elementwise like a two-component
Gaussian mixture (ScalarSourceModel).  A QuantizerSpec fixes the bin width
and the model probabilities of every bin; encode/decode realize a lossless
range coder driven by those static probabilities, so the achieved rate
tracks the spec's entropy H_Q.
"""

from __future__ import annotations

import struct
import zlib
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .model import SignalPrior


class IntegrityError(Exception):
    """Coded block does not match the quantizer spec it is decoded with."""


class DecodeError(Exception):
    """Coded payload is truncated or otherwise undecodable."""


@dataclass(frozen=True)
class ScalarSourceModel:
    """Elementwise law of one processor's uplink message.

    With probability epsilon:      N(mu_s / P, (sigma_s^2 + P sigma2_t) / P^2)
    with probability 1 - epsilon:  N(0, sigma2_t / P)
    """

    prior: SignalPrior
    sigma2_t: float
    P: int

    def __post_init__(self):
        if self.sigma2_t <= 0.0:
            raise ValueError("sigma2_t must be positive")
        if self.P < 1:
            raise ValueError("P must be a positive integer")

    @property
    def slab_mean(self) -> float:
        return self.prior.mu_s / self.P

    @property
    def slab_var(self) -> float:
        return (self.prior.sigma2_s + self.P * self.sigma2_t) / self.P ** 2

    @property
    def spike_var(self) -> float:
        return self.sigma2_t / self.P

    @property
    def mean(self) -> float:
        return self.prior.epsilon * self.slab_mean

    @property
    def variance(self) -> float:
        eps = self.prior.epsilon
        second = eps * (self.slab_var + self.slab_mean ** 2) + (1.0 - eps) * self.spike_var
        return second - self.mean ** 2

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        eps = self.prior.epsilon
        slab = ndtr((x - self.slab_mean) / np.sqrt(self.slab_var))
        spike = ndtr(x / np.sqrt(self.spike_var))
        return eps * slab + (1.0 - eps) * spike

    def interval_probs(self, edges: np.ndarray) -> np.ndarray:
        """P[edges[i] <= X < edges[i+1]] with tail-safe evaluation.

        Each mixture component is integrated on whichever side of its mean
        keeps the normal CDF away from 1, avoiding cancellation in the far
        tails.
        """
        out = np.zeros(len(edges) - 1)
        comps = (
            (self.prior.epsilon, self.slab_mean, np.sqrt(self.slab_var)),
            (1.0 - self.prior.epsilon, 0.0, np.sqrt(self.spike_var)),
        )
        for weight, mu, sd in comps:
            if weight == 0.0:
                continue
            lo = (edges[:-1] - mu) / sd
            hi = (edges[1:] - mu) / sd
            p = np.where(lo + hi > 0, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))
            out += weight * np.maximum(p, 0.0)
        return out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        active = rng.random(n) < self.prior.epsilon
        slab = rng.normal(self.slab_mean, np.sqrt(self.slab_var), n)
        spike = rng.normal(0.0, np.sqrt(self.spike_var), n)
        return np.where(active, slab, spike)


@dataclass(frozen=True)
class QuantizerSpec:
    """Mid-tread uniform quantizer: bin k covers [(k-1/2)d, (k+1/2)d).

    Reconstruction points sit at k*delta; bin_probs[center_index] is the
    zero bin. model_mse is the uniform-noise value delta^2 / 12.
    """

    delta: float
    num_bins: int
    center_index: int
    bin_probs: np.ndarray
    entropy_bits: float
    model_mse: float

    @property
    def k_lo(self) -> int:
        return -self.center_index

    @property
    def k_hi(self) -> int:
        return self.num_bins - 1 - self.center_index


@dataclass(frozen=True)
class CodedBlock:
    """Entropy-coded index vector plus the trailer needed to decode it.

    Wire layout: u32le element count, u32le spec digest, coder payload.
    """

    payload: bytes
    element_count: int
    spec_digest: int

    def to_bytes(self) -> bytes:
        return struct.pack("<II", self.element_count, self.spec_digest) + self.payload

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CodedBlock":
        if len(raw) < 8:
            raise DecodeError("block shorter than its 8-byte header")
        count, digest = struct.unpack_from("<II", raw)
        return cls(payload=raw[8:], element_count=count, spec_digest=digest)

    def bit_length(self) -> int:
        """Payload size in bits, header excluded."""
        return 8 * len(self.payload)


def delta_for_mse(sigma2_Q: float) -> float:
    """Bin width whose uniform-noise model MSE is sigma2_Q: sqrt(12 sigma2_Q)."""
    if sigma2_Q <= 0.0:
        raise ValueError("sigma2_Q must be positive")
    return float(np.sqrt(12.0 * sigma2_Q))


_SPAN_SIGMAS = 10.0  # bin range half-width in source standard deviations
_MAX_BINS = 8_000_000


def design(source: ScalarSourceModel, delta: float) -> QuantizerSpec:
    """Build the spec for bin width delta.

    Bins cover mean +/- 10 source standard deviations (widened to an odd
    count and always including the zero bin); the residual tail mass is
    folded into the two extreme bins.
    """
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    mean, sd = source.mean, source.std
    k_lo = min(int(np.floor((mean - _SPAN_SIGMAS * sd) / delta)), 0)
    k_hi = max(int(np.ceil((mean + _SPAN_SIGMAS * sd) / delta)), 0)
    if (k_hi - k_lo) % 2 == 1:
        k_hi += 1
    num_bins = k_hi - k_lo + 1
    if num_bins > _MAX_BINS:
        raise ValueError(f"delta={delta:g} would need {num_bins} bins")

    edges = (np.arange(k_lo, k_hi + 2) - 0.5) * delta
    probs = source.interval_probs(edges)
    # fold tails beyond the covered range into the extreme bins
    probs[0] += source.cdf(edges[0])
    probs[-1] += 1.0 - float(source.cdf(edges[-1]))
    probs = probs / probs.sum()

    nz = probs[probs > 0.0]
    entropy = float(-(nz * np.log2(nz)).sum())
    return QuantizerSpec(
        delta=float(delta),
        num_bins=num_bins,
        center_index=-k_lo,
        bin_probs=probs,
        entropy_bits=entropy,
        model_mse=delta ** 2 / 12.0,
    )


def delta_for_rate(source: ScalarSourceModel, target_bits: float,
                   tol_bits: float = 1e-4) -> float:
    """Bin width whose design() entropy matches target_bits.

    Entropy decreases monotonically in delta, so a log-domain bisection
    converges; raises if the target exceeds the entropy at the smallest
    representable bin width.
    """
    if target_bits <= 0.0:
        raise ValueError("target_bits must be positive")
    sd = source.std
    hi = 2.0 * (2.0 * _SPAN_SIGMAS + 1.0) * sd  # single-bin regime, entropy ~ 0
    lo = sd
    while design(source, lo).entropy_bits <= target_bits:
        lo *= 0.5
        if 2.0 * _SPAN_SIGMAS * sd / lo > _MAX_BINS:
            raise ValueError(
                f"target {target_bits} bits exceeds the entropy reachable "
                "at the smallest allowed bin width"
            )
    for _ in range(200):
        mid = float(np.sqrt(lo * hi))
        h = design(source, mid).entropy_bits
        if abs(h - target_bits) <= tol_bits:
            return mid
        if h > target_bits:
            lo = mid
        else:
            hi = mid
    return mid


def quantize(values: np.ndarray, spec: QuantizerSpec):
    """Map values to bin indices and reconstruction points.

    Index k = round(value / delta) with half-open bins, clamped to the
    spec's range; reconstruction is k * delta.
    """
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("quantize: input must be finite")
    k = np.floor(values / spec.delta + 0.5).astype(np.int64)
    k = np.clip(k, spec.k_lo, spec.k_hi)
    return k, k * spec.delta


# --- static-model range coder ---------------------------------------------
#
# 32-bit carry-propagating range coder (cache + pending-0xFF scheme).  The
# model is the spec's bin_probs quantized to integer frequencies; encoder
# and decoder derive identical tables from the spec, so only the payload
# travels.

_RC_TOP = 1 << 32
_RC_BOT = 1 << 24
_FREQ_SCALE = 1 << 16


def _freq_counts(spec: QuantizerSpec) -> np.ndarray:
    """Integer frequencies (sum = scale, all >= 1) from bin_probs."""
    p = spec.bin_probs
    scale = _FREQ_SCALE
    while spec.num_bins * 4 > scale:
        scale <<= 1
        if scale > (1 << 22):
            raise ValueError("alphabet too large for the frequency table")
    base = np.floor(p * scale).astype(np.int64)
    frac = p * scale - base
    base = np.maximum(base, 1)
    diff = scale - int(base.sum())
    if diff > 0:
        for i in np.argsort(-frac, kind="stable")[:diff]:
            base[i] += 1
    elif diff < 0:
        order = np.argsort(-base, kind="stable")
        j = 0
        while diff < 0:
            i = order[j % len(order)]
            if base[i] > 1:
                base[i] -= 1
                diff += 1
            j += 1
    return base


def spec_digest(spec: QuantizerSpec) -> int:
    """Checksum binding a CodedBlock to the spec that produced it."""
    head = struct.pack("<dii", spec.delta, spec.k_lo, spec.num_bins)
    counts = _freq_counts(spec).astype("<u4").tobytes()
    return zlib.crc32(head + counts) & 0xFFFFFFFF


class _RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _RC_TOP - 1
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self):
        if self.low < 0xFF000000 or self.low >= _RC_TOP:
            carry = self.low >> 32
            self.out.append((self.cache + carry) & 0xFF)
            for _ in range(self.cache_size - 1):
                self.out.append((0xFF + carry) & 0xFF)
            self.cache = (self.low >> 24) & 0xFF
            self.cache_size = 0
        self.cache_size += 1
        self.low = (self.low << 8) & 0xFFFFFFFF

    def encode(self, cum_lo: int, freq: int, total: int):
        r = self.range // total
        self.low += r * cum_lo
        self.range = r * freq
        while self.range < _RC_BOT:
            self.range <<= 8
            self._shift_low()

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class _RangeDecoder:
    def __init__(self, payload: bytes):
        self.data = payload
        self.pos = 0
        self.range = _RC_TOP - 1
        self.code = 0
        for _ in range(5):  # first byte only carries encoder overflow
            self.code = ((self.code << 8) | self._byte()) & 0xFFFFFFFF

    def _byte(self) -> int:
        if self.pos >= len(self.data):
            raise DecodeError("payload exhausted before all symbols were decoded")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode(self, cum: list, total: int) -> int:
        r = self.range // total
        val = min(self.code // r, total - 1)
        sym = bisect_right(cum, val) - 1
        self.code -= r * cum[sym]
        self.range = r * (cum[sym + 1] - cum[sym])
        while self.range < _RC_BOT:
            self.code = ((self.code << 8) | self._byte()) & 0xFFFFFFFF
            self.range <<= 8
        return sym


def encode(indices: np.ndarray, spec: QuantizerSpec) -> CodedBlock:
    """Losslessly encode bin indices with the spec's static model."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < spec.k_lo or indices.max() > spec.k_hi):
        raise ValueError("index outside the spec's bin range")
    digest = spec_digest(spec)
    if indices.size == 0:
        return CodedBlock(payload=b"", element_count=0, spec_digest=digest)
    counts = _freq_counts(spec)
    cum = np.concatenate(([0], np.cumsum(counts)))
    total = int(cum[-1])
    sym = indices - spec.k_lo
    sym_lo = cum[sym]
    sym_freq = counts[sym]
    enc = _RangeEncoder()
    for lo, fr in zip(sym_lo.tolist(), sym_freq.tolist()):
        enc.encode(lo, fr, total)
    return CodedBlock(payload=enc.finish(), element_count=int(indices.size),
                      spec_digest=digest)


def decode(block: CodedBlock, spec: QuantizerSpec) -> np.ndarray:
    """Recover the exact index vector from a CodedBlock."""
    if block.spec_digest != spec_digest(spec):
        raise IntegrityError("coded block was produced with a different spec")
    if block.element_count == 0:
        return np.zeros(0, dtype=np.int64)
    counts = _freq_counts(spec)
    cum = np.concatenate(([0], np.cumsum(counts))).tolist()
    total = int(cum[-1])
    dec = _RangeDecoder(block.payload)
    out = np.empty(block.element_count, dtype=np.int64)
    for i in range(block.element_count):
        out[i] = dec.decode(cum, total)
    return out + spec.k_lo
