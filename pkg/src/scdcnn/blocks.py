"""DCNN function blocks: inner product, pooling, and FSM activations.

Activation state machines emit before they transition and start at the
midpoint state K/2, so a zero-drift input sits on the output decision
boundary.  K is even everywhere.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .core import BIPOLAR, BitStream, SngState
from .arith import (
    APC_EXACT,
    BinaryStream,
    CarryCounter,
    add_mux,
    add_or,
    apc_counts_approx,
    apc_counts_exact,
    bipolar_to_two_line,
    mux_select,
    two_line_add,
)

IP_OR = "or"
IP_MUX = "mux"
IP_APC = "apc"
IP_TWO_LINE = "two_line"

STOCHASTIC = "stochastic"
BINARY = "binary"

HALF = "half"
FIFTH = "fifth"

MUX_AVG = "mux_avg"
MUX_MAX = "mux_max"
APC_ANY = "apc_any"

DEFAULT_SEGMENT = 16


def xnor_products(x_bits: np.ndarray, w_bits: np.ndarray) -> np.ndarray:
    """Bipolar products of paired rows: 1 - (x XOR w)."""
    return (1 - (x_bits ^ w_bits)).astype(np.uint8)


def inner_product(xs: list[BitStream], ws: list[BitStream], variant: str,
                  select: SngState | None = None,
                  apc_mode: str = APC_EXACT,
                  dither: SngState | None = None):
    """Sum of bipolar products x_i * w_i under one addition scheme.

    Returns a BitStream for "or" (union, over-counting; prescale the
    encoded values and scale back outside) and "mux" (scaled by 1/n,
    needs `select`), a BinaryStream of per-cycle product popcounts for
    "apc", and a TwoLineStream (non-scaled sum) for "two_line".
    """
    if len(xs) != len(ws) or not xs:
        raise ValueError("inner_product needs matching non-empty xs/ws")
    for s in xs + ws:
        if s.encoding != BIPOLAR:
            raise ValueError("inner_product expects bipolar streams")
        if s.length != xs[0].length:
            raise ValueError("inner_product: stream lengths differ")
    products = [
        BitStream(1 - (x.bits ^ w.bits), BIPOLAR) for x, w in zip(xs, ws)
    ]
    if variant == IP_OR:
        return add_or(products)
    if variant == IP_MUX:
        if select is None:
            raise ValueError("mux inner product needs a select generator")
        return add_mux(products, select)
    if variant == IP_APC:
        mat = np.stack([p.bits for p in products])
        if apc_mode == APC_EXACT:
            counts = apc_counts_exact(mat)
        else:
            bits = None
            if dither is not None:
                units = mat.shape[0] // 16
                words = dither.words(units * mat.shape[1])
                half = 1 << (dither.width - 1)
                bits = (words < half).astype(np.int32).reshape(units, -1)
            counts = apc_counts_approx(mat, bits)
        return BinaryStream(counts, len(products))
    if variant == IP_TWO_LINE:
        acc = bipolar_to_two_line(products[0])
        for p in products[1:]:
            acc = two_line_add(acc, bipolar_to_two_line(p), CarryCounter())
        return acc
    raise ValueError(f"unknown inner product variant {variant!r}")


def avg_pool(inputs: list, domain: str, select: SngState | None = None):
    """2x2 average pooling over four block outputs.

    Stochastic domain: 4-to-1 scaled addition (value divided by 4;
    needs `select`).  Binary domain: per-cycle truncated integer mean
    of the four count streams, e.g. counts (2, 3, 4, 5) pool to 3.
    """
    if len(inputs) != 4:
        raise ValueError(f"avg_pool needs exactly 4 inputs, got {len(inputs)}")
    if domain == STOCHASTIC:
        if select is None:
            raise ValueError("stochastic avg_pool needs a select generator")
        return add_mux(inputs, select)
    if domain == BINARY:
        n = inputs[0].n
        length = inputs[0].length
        for b in inputs:
            if b.n != n or b.length != length:
                raise ValueError("avg_pool: mismatched count streams")
        total = (inputs[0].counts.astype(np.int64) + inputs[1].counts
                 + inputs[2].counts + inputs[3].counts)
        return BinaryStream((total // 4).astype(np.int32), n)
    raise ValueError(f"unknown pooling domain {domain!r}")


def _segment_winners(values: np.ndarray, c: int, first: int,
                     cumulative: bool) -> np.ndarray:
    """Winner index per segment: segment 0 by `first`, segment t+1 by
    the largest segment-t sum (ties to the lowest index).  Binary-domain
    selectors accumulate across segments instead of resetting."""
    m, length = values.shape
    segs = length // c
    sums = values.reshape(m, segs, c).sum(axis=2, dtype=np.int64)
    if cumulative:
        sums = np.cumsum(sums, axis=1)
    winners = np.empty(segs, dtype=np.int64)
    winners[0] = first
    if segs > 1:
        winners[1:] = np.argmax(sums[:, :-1], axis=0)
    return winners


def max_pool_hw(inputs: list, c: int = DEFAULT_SEGMENT,
                domain: str = STOCHASTIC,
                first_pick: SngState | None = None):
    """Segment-race approximate max pooling.

    The output is a concatenation of c-cycle segments, each copied
    verbatim from one input; the source of segment t+1 is the input
    with the largest ones count in segment t.  Binary-domain selection
    replaces the per-segment counters with accumulators, so the race is
    over running totals.  Segment 0 is chosen by `first_pick`.  Accepts
    any number of inputs >= 2 (2x2 pooling uses 4).
    """
    if len(inputs) < 2:
        raise ValueError("max_pool_hw needs at least 2 inputs")
    if first_pick is None:
        raise ValueError("max_pool_hw needs a first_pick generator")
    m = len(inputs)
    length = inputs[0].length
    if length % c != 0:
        raise ValueError(f"stream length {length} not divisible by c={c}")
    first = int(mux_select(first_pick, m, 1)[0])
    if domain == STOCHASTIC:
        mat = np.stack([s.bits for s in inputs])
        encoding = inputs[0].encoding
    elif domain == BINARY:
        mat = np.stack([s.counts for s in inputs])
    else:
        raise ValueError(f"unknown pooling domain {domain!r}")
    winners = _segment_winners(mat, c, first, cumulative=(domain == BINARY))
    segs = length // c
    segview = mat.reshape(m, segs, c)
    out = np.take_along_axis(
        segview, winners[None, :, None], axis=0)[0].reshape(length)
    if domain == STOCHASTIC:
        return BitStream(out.astype(np.uint8), encoding)
    return BinaryStream(out.astype(np.int32), inputs[0].n)


@njit(cache=True)
def _fsm_threshold_kernel(bits, K, thresh, init):
    out = np.empty(bits.size, dtype=np.uint8)
    s = init
    top = K - 1
    for i in range(bits.size):
        out[i] = 1 if s >= thresh else 0
        if bits[i]:
            if s < top:
                s += 1
        elif s > 0:
            s -= 1
    return out


def stanh(s: BitStream, K: int, boundary: str = HALF,
          init_state: int | None = None) -> BitStream:
    """Saturating up/down FSM driven by a bipolar stream; decodes to
    roughly tanh((K/2) x).

    The half boundary emits 1 in the upper half of the states; the
    fifth boundary emits 0 only in the lowest fifth (ceil(K/5)), which
    re-biases the output for max-pooled inputs that under-count ones.
    """
    if K < 2 or K % 2:
        raise ValueError(f"K must be even and >= 2, got {K}")
    if s.encoding != BIPOLAR:
        raise ValueError("stanh expects a bipolar stream")
    if boundary == HALF:
        thresh = K // 2
    elif boundary == FIFTH:
        thresh = math.ceil(K / 5)
    else:
        raise ValueError(f"unknown boundary {boundary!r}")
    init = K // 2 if init_state is None else init_state
    if not 0 <= init < K:
        raise ValueError("init_state outside [0, K)")
    out = _fsm_threshold_kernel(s.bits, K, thresh, init)
    return BitStream(out, BIPOLAR)


@njit(cache=True)
def _btanh_kernel(counts, n, K, init):
    out = np.empty(counts.size, dtype=np.uint8)
    s = init
    half = K // 2
    top = K - 1
    for i in range(counts.size):
        out[i] = 1 if s >= half else 0
        s += 2 * counts[i] - n
        if s < 0:
            s = 0
        elif s > top:
            s = top
    return out


def btanh(bs: BinaryStream, K: int, init_state: int | None = None) -> BitStream:
    """Saturating counter activation for count streams: per cycle the
    state moves by 2*count - n, clamped to [0, K-1]; emits 1 in the
    upper half of the states (before the move)."""
    if K < 2 or K % 2:
        raise ValueError(f"K must be even and >= 2, got {K}")
    counts = bs.counts
    if counts.min() < 0 or counts.max() > bs.n:
        raise ValueError("counts outside [0, n]")
    init = K // 2 if init_state is None else init_state
    if not 0 <= init < K:
        raise ValueError("init_state outside [0, K)")
    out = _btanh_kernel(counts.astype(np.int64), bs.n, K, init)
    return BitStream(out, BIPOLAR)


def nearest_even(x: float) -> int:
    """Nearest even integer, exact halfway rounds up."""
    return max(2, int(2 * math.floor(x / 2 + 0.5)))


def optimal_states(feb_kind: str, N: int, L: int) -> int:
    """State count K for an activation matched to its summation block.

    mux_avg and mux_max trade the 1/N (and pooling) scale-back against
    FSM transient error as functions of N and L; apc_any re-targets the
    counter to pooled count streams, which lands near N/2.
    """
    if N < 2 or L < 2:
        raise ValueError("optimal_states needs N >= 2 and L >= 2")
    log2n = math.log2(N)
    log2l = math.log2(L)
    if feb_kind == MUX_AVG:
        k = 2 * log2n + log2l * N / (33.27 * log2n)
    elif feb_kind == MUX_MAX:
        k = 2 * (log2n + log2l) - 37 / log2n - 16.5 / (math.log(L) / math.log(5))
    elif feb_kind == APC_ANY:
        k = N / 2
    else:
        raise ValueError(f"unknown feb kind {feb_kind!r}")
    return nearest_even(k)
