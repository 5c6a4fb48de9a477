"""Gate-level SC arithmetic: multiplication and four addition schemes.

All stream operations are positionwise.  Hot paths work on raw 0/1
matrices of shape (n, L); the public functions wrap BitStream values
and validate contracts.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, log2

import numpy as np
from numba import njit

from .core import (
    BIPOLAR,
    UNIPOLAR,
    BitStream,
    SngState,
    TwoLineStream,
)

APC_EXACT = "exact"
APC_APPROXIMATE = "approximate"


@dataclass(frozen=True, eq=False)
class BinaryStream:
    """Per-cycle small-integer counts, the output domain of a parallel
    counter summing `n` parallel bit lines."""

    counts: np.ndarray
    n: int

    def __post_init__(self):
        if self.counts.ndim != 1 or self.counts.size < 1:
            raise ValueError("counts must be a non-empty 1-D array")
        if self.n < 1:
            raise ValueError("fan-in n must be >= 1")

    @property
    def length(self) -> int:
        return self.counts.size

    @property
    def width(self) -> int:
        return max(1, ceil(log2(self.n + 1)))


@dataclass
class CarryCounter:
    """Saturating three-state carry for non-scaled two-line addition."""

    state: int = 0

    def __post_init__(self):
        if self.state not in (-1, 0, 1):
            raise ValueError("carry state must be in {-1, 0, +1}")


def _check_streams(streams, op: str):
    if not streams:
        raise ValueError(f"{op} needs at least one input stream")
    length = streams[0].length
    encoding = streams[0].encoding
    for s in streams[1:]:
        if s.length != length:
            raise ValueError(f"{op}: stream lengths differ "
                             f"({s.length} vs {length})")
        if s.encoding != encoding:
            raise ValueError(f"{op}: stream encodings differ "
                             f"({s.encoding} vs {encoding})")
    return length, encoding


def multiply(a: BitStream, b: BitStream) -> BitStream:
    """Stochastic product: AND for unipolar, XNOR for bipolar."""
    _, encoding = _check_streams([a, b], "multiply")
    if encoding == UNIPOLAR:
        bits = a.bits & b.bits
    else:
        bits = 1 - (a.bits ^ b.bits)
    return BitStream(bits.astype(np.uint8), encoding)


def add_or(inputs: list[BitStream]) -> BitStream:
    """Positionwise OR of all inputs.  Over-counts whenever two inputs
    carry a 1 at the same position; callers prescale to keep the ones
    density low enough for the union bound to track the sum."""
    _, encoding = _check_streams(inputs, "add_or")
    bits = inputs[0].bits.copy()
    for s in inputs[1:]:
        np.bitwise_or(bits, s.bits, out=bits)
    return BitStream(bits, encoding)


def mux_select(gen: SngState, n: int, length: int) -> np.ndarray:
    """Uniform selection sequence in [0, n) from a generator word
    stream; exact for power-of-two n."""
    words = gen.words(length).astype(np.int64)
    return (words * n) >> gen.width


def add_mux(inputs: list[BitStream], select: SngState) -> BitStream:
    """Scaled addition: at each position emit the bit of one input
    chosen uniformly; decodes to (1/n) * sum of inputs."""
    length, encoding = _check_streams(inputs, "add_mux")
    n = len(inputs)
    if n == 1:
        return BitStream(inputs[0].bits.copy(), encoding)
    sel = mux_select(select, n, length)
    mat = np.stack([s.bits for s in inputs])
    bits = mat[sel, np.arange(length)]
    return BitStream(bits, encoding)


def apc_counts_exact(product_bits: np.ndarray) -> np.ndarray:
    """Column popcounts of an (n, L) bit matrix."""
    return product_bits.sum(axis=0, dtype=np.int32)


def apc_counts_approx(product_bits: np.ndarray,
                      dither_bits: np.ndarray | None = None) -> np.ndarray:
    """Approximate parallel counter built from 16-input units.

    Each unit pairs its inputs, feeds one AND and one OR per pair into
    an exact small tree (a + b == (a AND b) + (a OR b), so the tree sum
    is the true unit popcount), then drops the sum's LSB: the emitted
    word has LSB weight 2.  The dropped bit is compensated by a dither
    bit added before the shift, making the per-unit error zero-mean in
    {-1, 0, +1}.  `dither_bits` has shape (n/16, L); by default unit u
    uses the alternating sequence (t + u) & 1.
    """
    n, length = product_bits.shape
    if n % 16 != 0:
        raise ValueError(f"approximate counter needs n divisible by 16, got {n}")
    units = n // 16
    grouped = product_bits.reshape(units, 16, length)
    a = grouped[:, 0::2, :]
    b = grouped[:, 1::2, :]
    tree = (a & b).sum(axis=1, dtype=np.int32) \
        + (a | b).sum(axis=1, dtype=np.int32)
    if dither_bits is None:
        t = np.arange(length, dtype=np.int32)
        u = np.arange(units, dtype=np.int32)
        dither = (t[None, :] + u[:, None]) & 1
    else:
        if dither_bits.shape != (units, length):
            raise ValueError(f"dither_bits must have shape ({units}, {length})")
        dither = dither_bits.astype(np.int32)
    return (((tree + dither) >> 1) << 1).sum(axis=0, dtype=np.int32)


def apc(inputs: list[BitStream], mode: str = APC_EXACT,
        dither: SngState | None = None) -> BinaryStream:
    """Parallel counter over input columns.

    Exact mode emits true popcounts.  Approximate mode (n must be a
    multiple of 16) emits even-valued counts from the dithered unit
    tree; `dither` supplies the rounding bits (p = 1/2 words), else the
    deterministic alternating default is used.
    """
    length, _ = _check_streams(inputs, "apc")
    n = len(inputs)
    if n < 2:
        raise ValueError("apc needs n >= 2 inputs")
    mat = np.stack([s.bits for s in inputs])
    if mode == APC_EXACT:
        counts = apc_counts_exact(mat)
    elif mode == APC_APPROXIMATE:
        bits = None
        if dither is not None:
            units = n // 16 if n % 16 == 0 else 1
            words = dither.words(units * length)
            half = 1 << (dither.width - 1)
            bits = (words < half).astype(np.int32).reshape(units, length)
        counts = apc_counts_approx(mat, bits)
    else:
        raise ValueError(f"unknown apc mode {mode!r}")
    return BinaryStream(counts, n)


def decode_binary_sum(bs: BinaryStream, encoding: str) -> float:
    """Sum estimate carried by a count stream: mean count for unipolar
    products, 2 * mean - n for bipolar products."""
    mean = float(bs.counts.mean(dtype=np.float64))
    if encoding == UNIPOLAR:
        return mean
    return 2.0 * mean - bs.n


@njit(cache=True)
def _two_line_add_kernel(va, vb, out, carry):
    for i in range(va.size):
        s = va[i] + vb[i] + carry
        c = s
        if c > 1:
            c = 1
        elif c < -1:
            c = -1
        r = s - c
        if r > 1:
            r = 1
        elif r < -1:
            r = -1
        carry = r
        out[i] = c
    return carry


def _digit_values(t: TwoLineStream) -> np.ndarray:
    return ((1 - 2 * t.sign.astype(np.int8)) * t.magnitude).astype(np.int8)


def _digits_to_stream(digits: np.ndarray) -> TwoLineStream:
    mag = (digits != 0).astype(np.uint8)
    sgn = (digits < 0).astype(np.uint8)
    return TwoLineStream(mag, sgn)


def two_line_add(a: TwoLineStream, b: TwoLineStream,
                 carry: CarryCounter) -> TwoLineStream:
    """Non-scaled signed addition on magnitude/sign digit streams.

    Per cycle: s = digit(a) + digit(b) + carry; the output digit is s
    clamped to {-1, 0, +1} and the new carry is the clamped remainder.
    Saturation (both digits and carry pinned at the same sign) silently
    loses magnitude; that loss is the scheme's measured inaccuracy.
    The residual carry is left in `carry`.
    """
    if a.length != b.length:
        raise ValueError("two_line_add: stream lengths differ")
    out = np.empty(a.length, dtype=np.int8)
    carry.state = int(_two_line_add_kernel(
        _digit_values(a), _digit_values(b), out, carry.state))
    return _digits_to_stream(out)


def bipolar_to_two_line(s: BitStream) -> TwoLineStream:
    """Reinterpret a bipolar stream digitwise: bit 1 -> +1, bit 0 -> -1
    (every digit has full magnitude)."""
    if s.encoding != BIPOLAR:
        raise ValueError("two-line conversion expects a bipolar stream")
    mag = np.ones(s.length, dtype=np.uint8)
    sgn = (1 - s.bits).astype(np.uint8)
    return TwoLineStream(mag, sgn)
