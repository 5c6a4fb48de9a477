"""Stochastic number encoding and reproducible stream generation.

A stochastic number is a bit-stream whose ones density carries the
value: unipolar streams encode x = P(bit=1) in [0, 1], bipolar streams
encode x = 2*P(bit=1) - 1 in [-1, 1].  Streams come from a comparator
SNG: each output bit is 1 iff the next pseudo-random word, read as a
fraction in [0, 1), is strictly below the target probability.

Everything is deterministic given (seed, width, mode); that is what
makes the Monte Carlo harness reproducible and thread-safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

UNIPOLAR = "unipolar"
BIPOLAR = "bipolar"
LFSR = "lfsr"
COUNTER_EXACT = "counter_exact"

DEFAULT_WIDTH = 10
MIN_WIDTH = 8
MAX_WIDTH = 16

# Maximal-length feedback tap sets per register width, verified by full
# period simulation (period 2**width - 1 each).  Fibonacci right-shift
# form: feedback = XOR of the tapped bits, taps 1-indexed from the LSB,
# new bit enters at the top.
MAXIMAL_TAPS: dict[int, tuple[tuple[int, ...], ...]] = {
    8: ((1, 2, 3, 8), (1, 2, 7, 8), (1, 3, 4, 8), (1, 4, 6, 8)),
    9: ((1, 2, 5, 9), (1, 2, 6, 9), (1, 3, 5, 9), (1, 3, 8, 9),
        (1, 5, 6, 9), (1, 6, 7, 9)),
    10: ((1, 2, 5, 10), (1, 2, 7, 10), (1, 3, 5, 10), (1, 3, 6, 10),
         (1, 4, 8, 10), (1, 6, 9, 10)),
    11: ((1, 2, 4, 11), (1, 2, 9, 11), (1, 3, 4, 11), (1, 3, 8, 11),
         (1, 3, 10, 11), (1, 4, 5, 11)),
    12: ((1, 3, 11, 12), (1, 5, 8, 12), (1, 5, 11, 12), (1, 7, 9, 12)),
    13: ((1, 2, 3, 13), (1, 2, 12, 13), (1, 3, 5, 13), (1, 3, 9, 13),
         (1, 3, 12, 13), (1, 4, 5, 13)),
    14: ((1, 3, 4, 14), (1, 3, 5, 14), (1, 3, 13, 14), (1, 4, 8, 14),
         (1, 4, 9, 14), (1, 4, 11, 14)),
    15: ((1, 15), (1, 2, 3, 15), (1, 2, 5, 15), (1, 2, 12, 15),
         (1, 2, 14, 15), (1, 3, 6, 15)),
    16: ((1, 2, 5, 16), (1, 2, 13, 16), (1, 3, 5, 16), (1, 3, 8, 16),
         (1, 5, 10, 16), (1, 5, 11, 16)),
}

# The counter_exact word sequence is bit_reverse(j) XOR a per-width
# constant, phase fixed at 0.  The constant minimizes the worst-case
# drift of threshold-prefix counts; _COUNTER_EXCESS records the residue
# that remains beyond the ideal corridor (in ones, over any window and
# any threshold).  Width 8 achieves the corridor exactly.
_COUNTER_XOR: dict[int, int] = {
    8: 63, 9: 127, 10: 127, 11: 127, 12: 255, 13: 511, 14: 511,
    15: 511, 16: 1023,
}
_COUNTER_EXCESS: dict[int, float] = {
    8: 0.0, 9: 0.109375, 10: 0.125, 11: 0.4375, 12: 0.445313,
    13: 0.777344, 14: 0.78125, 15: 1.109375, 16: 1.111329,
}

_U64 = np.uint64
_SALT_POLY = 0x51ED2700
_SALT_PHASE = 0xA3D1FB11
_SALT_MASK = 0x7E4C9D22
_SALT_ADD = 0x1C86F3A9
_SALT_MUL = 0x3C6EF372
_SALT_STEP = 0x6B11D0C5


def _mix64(z):
    """splitmix64 finalizer, vectorized over uint64 (modular wrap)."""
    with np.errstate(over="ignore"):
        z = np.asarray(z, dtype=np.uint64)
        z = z + _U64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
        return z ^ (z >> _U64(31))


def _derive(seed: int, index, salt: int):
    """Stateless child value for (seed, stream index, purpose salt)."""
    base = _mix64(_U64(seed & 0xFFFFFFFFFFFFFFFF) ^ _U64(salt))
    return _mix64(base ^ np.asarray(index, dtype=np.uint64))


@lru_cache(maxsize=None)
def _lfsr_orbit(width: int, taps: tuple[int, ...]) -> np.ndarray:
    """Full-period state sequence from the all-ones register."""
    n = (1 << width) - 1
    out = np.empty(n, dtype=np.uint32)
    state = n
    top = width - 1
    shifts = tuple(t - 1 for t in taps)
    for i in range(n):
        out[i] = state
        fb = 0
        for s in shifts:
            fb ^= state >> s
        state = (state >> 1) | ((fb & 1) << top)
    if state != n:
        raise AssertionError(f"taps {taps} are not maximal for width {width}")
    out.setflags(write=False)
    return out


def _bit_reverse(x: np.ndarray, width: int) -> np.ndarray:
    x = x.astype(np.uint32)
    x = ((x & 0x55555555) << 1) | ((x >> 1) & 0x55555555)
    x = ((x & 0x33333333) << 2) | ((x >> 2) & 0x33333333)
    x = ((x & 0x0F0F0F0F) << 4) | ((x >> 4) & 0x0F0F0F0F)
    x = ((x & 0x00FF00FF) << 8) | ((x >> 8) & 0x00FF00FF)
    x = (x << 16) | (x >> 16)
    return x >> np.uint32(32 - width)


@lru_cache(maxsize=None)
def _counter_orbit(width: int) -> np.ndarray:
    j = np.arange(1 << width, dtype=np.uint32)
    out = _bit_reverse(j, width) ^ np.uint32(_COUNTER_XOR[width])
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class BitStream:
    """Fixed-length stochastic bit sequence.

    `bits` is a 1-D array of 0/1 (uint8); treat it as immutable.
    """

    bits: np.ndarray
    encoding: str

    def __post_init__(self):
        if self.encoding not in (UNIPOLAR, BIPOLAR):
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if self.bits.ndim != 1 or self.bits.size < 1:
            raise ValueError("bits must be a non-empty 1-D array")
        if self.bits.max() > 1:
            raise ValueError("bits must contain only 0 and 1")

    @property
    def length(self) -> int:
        return self.bits.size


@dataclass(frozen=True, eq=False)
class TwoLineStream:
    """Signed non-scaled stochastic number: magnitude and sign lines.

    Digit i has value (1 - 2*sign[i]) * magnitude[i] in {-1, 0, +1};
    the stream decodes to the digit average.
    """

    magnitude: np.ndarray
    sign: np.ndarray

    def __post_init__(self):
        if self.magnitude.shape != self.sign.shape or self.magnitude.ndim != 1:
            raise ValueError("magnitude and sign must be 1-D and equal length")

    @property
    def length(self) -> int:
        return self.magnitude.size


def probability(value: float, encoding: str) -> float:
    """Ones probability encoding `value`; range-checks the value."""
    if encoding == UNIPOLAR:
        if not 0.0 <= value <= 1.0:
            raise ValueError(
                f"unipolar value {value} outside [0, 1]; prescale first")
        return float(value)
    if encoding == BIPOLAR:
        if not -1.0 <= value <= 1.0:
            raise ValueError(
                f"bipolar value {value} outside [-1, 1]; prescale first")
        return (float(value) + 1.0) / 2.0
    raise ValueError(f"unknown encoding {encoding!r}")


class SngState:
    """One comparator word source.  Single-owner mutable.

    "lfsr" mode walks a maximal-length shift register; the seed picks
    the feedback polynomial, the starting phase, and an output XOR
    mask, so distinct seeds give decorrelated sequences.

    "counter_exact" mode walks a fixed bit-reversed enumeration of all
    2**width words (seed ignored, phase always 0).  Every full period
    contains each word exactly once, and the sequence order keeps
    partial-period counts tight, which separates encoding error from
    stochastic noise in tests.  Its instances all emit the same words,
    so streams from this mode are mutually correlated by design.
    """

    __slots__ = ("width", "mode", "_orbit", "_xor", "_mul", "_add", "_pos")

    def __init__(self, seed: int = 0, width: int = DEFAULT_WIDTH,
                 mode: str = LFSR):
        if not MIN_WIDTH <= width <= MAX_WIDTH:
            raise ValueError(
                f"width must be in [{MIN_WIDTH}, {MAX_WIDTH}], got {width}")
        self.width = width
        self.mode = mode
        if mode == LFSR:
            polys = MAXIMAL_TAPS[width]
            poly = polys[int(_derive(seed, 0, _SALT_POLY)) % len(polys)]
            self._orbit = _lfsr_orbit(width, poly)
            self._pos = int(_derive(seed, 0, _SALT_PHASE)) % self._orbit.size
            wmask = (1 << width) - 1
            self._xor = int(_derive(seed, 0, _SALT_MASK)) & wmask
            self._mul = (int(_derive(seed, 0, _SALT_MUL)) & wmask) | 1
            self._add = int(_derive(seed, 0, _SALT_ADD)) & wmask
        elif mode == COUNTER_EXACT:
            self._orbit = _counter_orbit(width)
            self._pos = 0
            self._xor = 0
            self._mul = 1
            self._add = 0
        else:
            raise ValueError(f"unknown mode {mode!r}")

    @classmethod
    def _from_parts(cls, width: int, mode: str, poly_index: int,
                    phase: int, xor_mask: int, mul: int,
                    add_mask: int) -> "SngState":
        gen = cls.__new__(cls)
        gen.width = width
        gen.mode = mode
        if mode == LFSR:
            polys = MAXIMAL_TAPS[width]
            gen._orbit = _lfsr_orbit(width, polys[poly_index % len(polys)])
            gen._pos = phase % gen._orbit.size
            wmask = (1 << width) - 1
            gen._xor = xor_mask & wmask
            gen._mul = (mul & wmask) | 1
            gen._add = add_mask & wmask
        else:
            gen._orbit = _counter_orbit(width)
            gen._pos = 0
            gen._xor = 0
            gen._mul = 1
            gen._add = 0
        return gen

    def words(self, count: int) -> np.ndarray:
        """Next `count` comparator words; advances the state.

        Per-stream scrambling is the affine bijection
        w -> (mul * (w XOR xor) + add) mod 2**width with odd mul.
        A bijection keeps the full-period word balance exact; the
        multiply mixes every input bit into the high bits, which a
        pure XOR cannot do (at p = 1/2 a XOR only flips the output).
        """
        period = self._orbit.size
        idx = (self._pos + np.arange(count, dtype=np.int64)) % period
        self._pos = int((self._pos + count) % period)
        out = self._orbit[idx]
        if self.mode == LFSR:
            wmask = np.uint32((1 << self.width) - 1)
            out = ((out ^ np.uint32(self._xor)) * np.uint32(self._mul)
                   + np.uint32(self._add)) & wmask
        return out


class SngFamily:
    """Indexed set of mutually independent generators.

    Stream i uses feedback polynomial i mod #polys; within each
    polynomial, phases step through the full period on a seed-derived
    coprime stride, so no two streams of the family share (polynomial,
    phase) until the period is exhausted (#polys * (2**width - 1)
    streams).  Each stream also gets a seed-derived affine scramble.
    Derivation is stateless: any subset of streams, built in any order
    or in bulk, comes out identical, which is what lets trials run in
    a thread pool deterministically.

    Streams on the same polynomial share one orbit, so their worst-case
    pairwise correlation floor is ~1/sqrt(period); consumers give the
    two operands of a gate adjacent indices, which round-robin places
    them on different polynomials.
    """

    def __init__(self, master_seed: int, width: int = DEFAULT_WIDTH,
                 mode: str = LFSR):
        if not MIN_WIDTH <= width <= MAX_WIDTH:
            raise ValueError(
                f"width must be in [{MIN_WIDTH}, {MAX_WIDTH}], got {width}")
        if mode not in (LFSR, COUNTER_EXACT):
            raise ValueError(f"unknown mode {mode!r}")
        self.master_seed = master_seed
        self.width = width
        self.mode = mode
        self._period = (1 << width) - 1
        npolys = len(MAXIMAL_TAPS[width])
        self._npolys = npolys
        base = np.asarray(
            _derive(master_seed, np.arange(npolys), _SALT_PHASE))
        self._phase0 = (base % _U64(self._period)).astype(np.int64)
        self._step = np.empty(npolys, dtype=np.int64)
        raw = np.asarray(_derive(master_seed, np.arange(npolys), _SALT_STEP))
        for k in range(npolys):
            s = int(raw[k]) % self._period
            while s == 0 or math.gcd(s, self._period) != 1:
                s = (s + 1) % self._period
            self._step[k] = s

    def _placement(self, indices: np.ndarray):
        """(poly, phase, xor, mul, add) for an array of stream indices."""
        poly = indices % self._npolys
        slot = indices // self._npolys
        phase = (self._phase0[poly] + (slot % self._period)
                 * self._step[poly]) % self._period
        wmask = _U64((1 << self.width) - 1)
        xor = (np.asarray(_derive(self.master_seed, indices, _SALT_MASK))
               & wmask).astype(np.uint32)
        mul = (np.asarray(_derive(self.master_seed, indices, _SALT_MUL))
               | _U64(1)).astype(np.uint32)
        add = (np.asarray(_derive(self.master_seed, indices, _SALT_ADD))
               & wmask).astype(np.uint32)
        return poly, phase, xor, mul, add

    def stream(self, index: int) -> SngState:
        """Generator for stream `index`."""
        if self.mode == COUNTER_EXACT:
            return SngState._from_parts(self.width, self.mode, 0, 0, 0, 1, 0)
        idx = np.asarray([index], dtype=np.int64)
        poly, phase, xor, mul, add = self._placement(idx)
        return SngState._from_parts(
            self.width, self.mode, int(poly[0]), int(phase[0]),
            int(xor[0]), int(mul[0]), int(add[0]))

    def encode(self, values, encoding: str, length: int,
               first_index: int = 0) -> np.ndarray:
        """Bit matrix (n, length) encoding `values`, one stream per row.

        Row j uses stream index first_index + j.  Equivalent to calling
        generate_stream on self.stream(first_index + j) row by row, but
        batched by polynomial.
        """
        values = np.atleast_1d(np.asarray(values, dtype=np.float64))
        n = values.size
        probs = _probabilities(values, encoding)
        scale = 2.0 ** -self.width
        out = np.empty((n, length), dtype=np.uint8)
        if self.mode == COUNTER_EXACT:
            orbit = _counter_orbit(self.width)
            words = orbit[np.arange(length, dtype=np.int64) % orbit.size]
            np.less(words * scale, probs[:, None], out=out.view(bool))
            return out
        indices = first_index + np.arange(n, dtype=np.int64)
        poly, phase, xor, mul, add = self._placement(indices)
        offs = np.arange(length, dtype=np.int64)
        wmask = np.uint32((1 << self.width) - 1)
        for k in range(self._npolys):
            rows = np.nonzero(poly == k)[0]
            if rows.size == 0:
                continue
            orbit = _lfsr_orbit(self.width, MAXIMAL_TAPS[self.width][k])
            idx = (phase[rows][:, None] + offs[None, :]) % self._period
            words = ((orbit[idx] ^ xor[rows, None]) * mul[rows, None]
                     + add[rows, None]) & wmask
            out[rows] = (words * scale) < probs[rows, None]
        return out


def _probabilities(values: np.ndarray, encoding: str) -> np.ndarray:
    if encoding == UNIPOLAR:
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("unipolar value outside [0, 1]; prescale first")
        return values
    if encoding == BIPOLAR:
        if values.size and (values.min() < -1.0 or values.max() > 1.0):
            raise ValueError("bipolar value outside [-1, 1]; prescale first")
        return (values + 1.0) / 2.0
    raise ValueError(f"unknown encoding {encoding!r}")


def generate_stream(value: float, encoding: str, length: int,
                    gen: SngState) -> BitStream:
    """Encode `value` as a stochastic bit-stream of `length` bits.

    Bit i is 1 iff word_i / 2**width < p, where p is the encoded ones
    probability.  Advances `gen` by `length` words.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    p = probability(value, encoding)
    words = gen.words(length)
    bits = ((words * (2.0 ** -gen.width)) < p).astype(np.uint8)
    return BitStream(bits, encoding)


def decode_stream(s: BitStream) -> float:
    """Value carried by a stream: ones density, mapped per encoding."""
    ones = int(s.bits.sum())
    if s.encoding == UNIPOLAR:
        return ones / s.length
    return 2.0 * ones / s.length - 1.0


def decode_matrix(bits: np.ndarray, encoding: str, axis: int = -1) -> np.ndarray:
    """Vectorized decode over an axis of a 0/1 array."""
    dens = bits.mean(axis=axis, dtype=np.float64)
    if encoding == UNIPOLAR:
        return dens
    return 2.0 * dens - 1.0


def prescale(value: float, factor: float) -> float:
    """Divide a value into encoding range; callers record the factor
    and scale results back."""
    if factor <= 0:
        raise ValueError("prescale factor must be positive")
    out = value / factor
    if not -1.0 <= out <= 1.0:
        raise ValueError(
            f"{value} / {factor} = {out} still outside [-1, 1]")
    return out


def two_line_decode(t: TwoLineStream) -> float:
    """Exact decoded value (1/L) * sum((1 - 2*sign) * magnitude)."""
    mag = t.magnitude.astype(np.int64)
    sgn = t.sign.astype(np.int64)
    return float(((1 - 2 * sgn) * mag).sum() / t.length)
