"""Feature extraction blocks: inner product x pooling x activation.

A feature extraction block (FEB) bundles four inner-product blocks that
share one filter, a 2x2 pooling block, and an activation block.  Four
compositions are supported:

    mux + avg + stanh         (``mux_avg``)
    mux + max + stanh_fifth   (``mux_max``)
    apc + avg + btanh         (``apc_avg``)
    apc + max + btanh         (``apc_max``)

The four receptive fields are encoded with independent generators; the
filter weights are encoded once and fanned out to all four inner
products, mirroring the filter-level weight sharing of the storage
scheme.  Indices interleave weights and pixels so that every XNOR gate
sees operands drawn from different generator polynomials.

Accuracy is measured against the composition's software target in the
scaled-back domain: tanh of the pooled sum of products, with each
design's deterministic transfer folded in.  The mux path carries its
1/n downscale as error (the activation's state count, chosen by the
state equations, only partially scales it back); the binary averaging
path's floor division contributes a fixed -0.75 drift which is part of
the designed pooling, so the target includes it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    BIPOLAR,
    DEFAULT_WIDTH,
    BitStream,
    SngFamily,
    decode_stream,
)
from .arith import BinaryStream, mux_select
from .blocks import (
    APC_ANY,
    BINARY,
    FIFTH,
    HALF,
    MUX_AVG,
    MUX_MAX,
    STOCHASTIC,
    avg_pool,
    btanh,
    max_pool_hw,
    nearest_even,
    optimal_states,
    stanh,
)

MUX = "mux"
APC = "apc"
AVG = "avg"
MAX = "max"
STANH = "stanh"
STANH_FIFTH = "stanh_fifth"
BTANH = "btanh"

UNIFORM_SIGNED = "uniform_signed"

# Segment length defaults per selection domain.  The stochastic race
# needs c=16 for a usable per-segment estimate; the binary race runs on
# accumulated counts, so a fine grain only sharpens it.
DEFAULT_SEGMENT_STOCHASTIC = 16
DEFAULT_SEGMENT_BINARY = 4

_POOL_FANIN = 4


def default_states(ip_variant: str, pool_variant: str, n: int, length: int) -> int:
    """Design-default activation state count for a composition.

    Mux compositions follow the empirical state equations.  The binary
    averaging path uses the re-formulated rule (half the input size).
    The binary max path keeps the unmodified counter pairing whose
    target is tanh of half the selected sum, i.e. K equal to the input
    size.
    """
    if ip_variant == MUX:
        kind = MUX_AVG if pool_variant == AVG else MUX_MAX
        return optimal_states(kind, n, length)
    if pool_variant == AVG:
        return optimal_states(APC_ANY, n, length)
    return nearest_even(float(n))


@dataclass(frozen=True)
class FebConfig:
    """One feature-extraction-block composition.

    `states` and `segment` default to the composition's design values
    when None.
    """

    ip_variant: str
    pool_variant: str
    act_variant: str
    n: int
    length: int
    segment: int | None = None
    states: int | None = None

    def __post_init__(self):
        if self.ip_variant not in (MUX, APC):
            raise ValueError(f"unknown inner product variant {self.ip_variant!r}")
        if self.pool_variant not in (AVG, MAX):
            raise ValueError(f"unknown pooling variant {self.pool_variant!r}")
        legal = {MUX: (STANH, STANH_FIFTH), APC: (BTANH,)}[self.ip_variant]
        if self.act_variant not in legal:
            raise ValueError(
                f"activation {self.act_variant!r} is illegal for "
                f"{self.ip_variant!r} inner products")
        if self.ip_variant == MUX and self.pool_variant == MAX \
                and self.act_variant != STANH_FIFTH:
            raise ValueError("mux max pooling requires the fifth-boundary stanh")
        if self.n < 1:
            raise ValueError("input size must be positive")
        if self.length < 2:
            raise ValueError("stream length must be at least 2")
        k = self.resolved_states()
        if k % 2 != 0 or k < 2:
            raise ValueError(f"state count {k} must be a positive even number")
        if self.length % self.resolved_segment() != 0:
            raise ValueError("stream length must be divisible by the segment length")

    def resolved_states(self) -> int:
        if self.states is not None:
            return self.states
        return default_states(self.ip_variant, self.pool_variant, self.n, self.length)

    def resolved_segment(self) -> int:
        if self.segment is not None:
            return self.segment
        if self.ip_variant == APC:
            return DEFAULT_SEGMENT_BINARY
        return DEFAULT_SEGMENT_STOCHASTIC

    @property
    def name(self) -> str:
        return f"{self.ip_variant}_{self.pool_variant}"


@dataclass(frozen=True)
class ErrorStats:
    """Accuracy summary of repeated single-block trials."""

    mean_abs_error: float
    std_dev: float
    trials: int
    per_trial_seed_base: int


def feb_reference(cfg: FebConfig, receptive_fields: np.ndarray,
                  filter_weights: np.ndarray) -> float:
    """Software target of the composition in the scaled-back domain."""
    sums = np.asarray(receptive_fields, dtype=np.float64) @ np.asarray(
        filter_weights, dtype=np.float64)
    k = cfg.resolved_states()
    if cfg.ip_variant == MUX:
        pooled = sums.mean() if cfg.pool_variant == AVG else sums.max()
        return float(np.tanh(pooled))
    if cfg.pool_variant == AVG:
        # floor division by 4 inside the pooled count costs 0.375 of a
        # count per cycle, i.e. 0.75 on the doubled drift
        return float(np.tanh((2.0 * k / cfg.n) * (sums.mean() - 0.75)))
    return float(np.tanh((k / (2.0 * cfg.n)) * sums.max()))


def _encode_shared(cfg: FebConfig, receptive_fields, filter_weights,
                   gen_base: SngFamily, first_index: int):
    """Encode pixels and the shared filter, return product bit cubes.

    Layout per weight lane: [w_i, x0_i, x1_i, x2_i, x3_i] so adjacent
    stream indices land on distinct generator polynomials.
    """
    n, length = cfg.n, cfg.length
    flat = np.empty(5 * n, dtype=np.float64)
    flat[0::5] = filter_weights
    for b in range(_POOL_FANIN):
        flat[b + 1::5] = receptive_fields[b]
    bits = gen_base.encode(flat, BIPOLAR, length, first_index=first_index)
    w_bits = bits[0::5]
    products = np.empty((_POOL_FANIN, n, length), dtype=np.uint8)
    for b in range(_POOL_FANIN):
        products[b] = 1 - (bits[b + 1::5] ^ w_bits)
    return products, first_index + 5 * n


def feb_forward(cfg: FebConfig, receptive_fields, filter_weights,
                gen_base: SngFamily, first_index: int = 0) -> float:
    """Run one feature extraction block, return the decoded output."""
    receptive_fields = np.asarray(receptive_fields, dtype=np.float64)
    filter_weights = np.asarray(filter_weights, dtype=np.float64)
    if receptive_fields.shape != (_POOL_FANIN, cfg.n):
        raise ValueError(
            f"receptive fields must be {_POOL_FANIN} x {cfg.n}, "
            f"got {receptive_fields.shape}")
    if filter_weights.shape != (cfg.n,):
        raise ValueError(f"filter must have {cfg.n} weights")
    if np.abs(receptive_fields).max(initial=0.0) > 1.0 \
            or np.abs(filter_weights).max(initial=0.0) > 1.0:
        raise ValueError("values outside [-1, 1]; prescale first")

    n, length = cfg.n, cfg.length
    k = cfg.resolved_states()
    c = cfg.resolved_segment()
    products, idx = _encode_shared(cfg, receptive_fields, filter_weights,
                                   gen_base, first_index)

    if cfg.ip_variant == MUX:
        cols = np.arange(length)
        ips = np.empty((_POOL_FANIN, length), dtype=np.uint8)
        for b in range(_POOL_FANIN):
            sel = mux_select(gen_base.stream(idx), n, length)
            idx += 1
            ips[b] = products[b][sel, cols]
        if cfg.pool_variant == AVG:
            sel = mux_select(gen_base.stream(idx), _POOL_FANIN, length)
            idx += 1
            pooled = BitStream(ips[sel, cols], BIPOLAR)
            out = stanh(pooled, k, HALF if cfg.act_variant == STANH else FIFTH)
        else:
            streams = [BitStream(ips[b], BIPOLAR) for b in range(_POOL_FANIN)]
            pooled = max_pool_hw(streams, c, STOCHASTIC, gen_base.stream(idx))
            idx += 1
            out = stanh(pooled, k, FIFTH)
        return decode_stream(out)

    counts = [
        BinaryStream(products[b].sum(axis=0, dtype=np.int32), n)
        for b in range(_POOL_FANIN)
    ]
    if cfg.pool_variant == AVG:
        pooled = avg_pool(counts, BINARY)
    else:
        pooled = max_pool_hw(counts, c, BINARY, gen_base.stream(idx))
        idx += 1
    return decode_stream(btanh(pooled, k))


def streams_per_forward(cfg: FebConfig) -> int:
    """Upper bound on generator indices one forward pass consumes.
    Callers running many blocks off one family stride by this."""
    return 5 * cfg.n + _POOL_FANIN + 2


def feb_inaccuracy(cfg: FebConfig, trials: int,
                   input_distribution: str = UNIFORM_SIGNED,
                   seed: int = 0, width: int = DEFAULT_WIDTH) -> ErrorStats:
    """Mean absolute error of the block against its software target.

    Inputs and weights are sampled i.i.d. uniform on [-1, 1].  Every
    trial derives its own value and stream randomness from `seed`, so
    results are reproducible and trials could run in any order.
    `width` sets the generator register width; wide registers push the
    cross-stream correlation floor below the sampling error.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if input_distribution != UNIFORM_SIGNED:
        raise ValueError(f"unknown input distribution {input_distribution!r}")
    stride = streams_per_forward(cfg)
    gen_base = SngFamily(seed, width=width)
    rng = np.random.default_rng(seed)
    errs = np.empty(trials, dtype=np.float64)
    for t in range(trials):
        rf = rng.uniform(-1.0, 1.0, (_POOL_FANIN, cfg.n))
        w = rng.uniform(-1.0, 1.0, cfg.n)
        out = feb_forward(cfg, rf, w, gen_base, first_index=t * stride)
        errs[t] = abs(out - feb_reference(cfg, rf, w))
    return ErrorStats(
        mean_abs_error=float(errs.mean()),
        std_dev=float(errs.std()),
        trials=trials,
        per_trial_seed_base=seed,
    )
