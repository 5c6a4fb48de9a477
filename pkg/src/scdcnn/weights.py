"""Quantized weight storage: value codes, filter blocks, and file I/O.

Weights live in [-1, 1] and are stored as unsigned w-bit codes under the
mapping code = Int(((x+1)/2) * 2^w), truncating toward zero; x = 1 would
need 2^w and clamps to 2^w - 1.  Codes are grouped into per-filter
blocks so one block serves every receptive-field position of its
feature map; a layer shares one precision across its filters.

The on-disk format ("SCDW") is little-endian: magic "SCDW", version
u16, layer count u16; per layer a precision u8, filter count u32, a
(height, width, channels) shape triple u32 x 3, then all filter codes
in filter order, one u64 per code.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SCDW"
VERSION = 1
MAX_BITS = 64

_HEADER = struct.Struct("<4sHH")
_LAYER_HEADER = struct.Struct("<BIIII")


class WeightFormatError(ValueError):
    """Malformed weight file; `offset` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class QuantizedWeight:
    """One stored weight code at a given precision."""

    code: int
    bits: int

    def __post_init__(self):
        if not 1 <= self.bits <= MAX_BITS:
            raise ValueError(f"precision must be in [1, {MAX_BITS}]")
        if not 0 <= self.code < (1 << self.bits):
            raise ValueError(f"code {self.code} needs more than {self.bits} bits")


def quantize(x: float, bits: int) -> QuantizedWeight:
    """Code for `x`: integer part of ((x+1)/2) * 2^bits, clamped at the top.

    Exact integer arithmetic on the float's dyadic representation, so
    the truncation never suffers double rounding.
    """
    if not 1 <= bits <= MAX_BITS:
        raise ValueError(f"precision must be in [1, {MAX_BITS}]")
    if not -1.0 <= x <= 1.0:
        raise ValueError(f"weight {x} outside [-1, 1]; prescale first")
    num, den = float(x).as_integer_ratio()
    code = ((num + den) << (bits - 1)) // den
    top = (1 << bits) - 1
    return QuantizedWeight(min(code, top), bits)


def dequantize(q: QuantizedWeight) -> float:
    """Value of a code: 2 * code / 2^bits - 1, in [-1, 1)."""
    return float((q.code * 2 - (1 << q.bits)) / (1 << q.bits))


def quantize_array(values: np.ndarray, bits: int) -> np.ndarray:
    """Vectorized quantize over a float array, returns uint64 codes."""
    flat = np.asarray(values, dtype=np.float64).reshape(-1)
    if flat.size and (flat.min() < -1.0 or flat.max() > 1.0):
        raise ValueError("weight outside [-1, 1]; prescale first")
    out = np.fromiter(
        (quantize(float(v), bits).code for v in flat),
        dtype=np.uint64, count=flat.size)
    return out.reshape(np.shape(values))


def dequantize_array(codes: np.ndarray, bits: int) -> np.ndarray:
    """Vectorized dequantize of uint64 codes to float64 values."""
    scale = float(1 << bits)
    return codes.astype(np.float64) * (2.0 / scale) - 1.0


@dataclass(frozen=True, eq=False)
class FilterBlock:
    """One filter's codes; shape is (height, width, in_channels)."""

    filter_id: int
    shape: tuple[int, int, int]
    codes: np.ndarray

    def __post_init__(self):
        h, w, ch = self.shape
        if h * w * ch != self.codes.size:
            raise ValueError(
                f"filter {self.filter_id}: shape {self.shape} wants "
                f"{h * w * ch} codes, got {self.codes.size}")

    def __eq__(self, other):
        if not isinstance(other, FilterBlock):
            return NotImplemented
        return (self.filter_id == other.filter_id
                and self.shape == other.shape
                and np.array_equal(self.codes, other.codes))

    def values(self, bits: int) -> np.ndarray:
        return dequantize_array(self.codes, bits)


@dataclass(frozen=True)
class LayerWeights:
    """All filter blocks of one layer at a shared precision."""

    precision: int
    filters: tuple[FilterBlock, ...]

    def __post_init__(self):
        if not 1 <= self.precision <= MAX_BITS:
            raise ValueError(f"precision must be in [1, {MAX_BITS}]")
        top = 1 << self.precision
        for f in self.filters:
            if f.codes.size and int(f.codes.max()) >= top:
                raise ValueError(
                    f"filter {f.filter_id} holds codes beyond "
                    f"{self.precision} bits")


@dataclass(frozen=True)
class WeightSet:
    """Per-layer quantized weights, immutable once built."""

    layers: tuple[LayerWeights, ...]

    def layer_values(self, index: int) -> np.ndarray:
        """Dequantized (filters, h*w*ch) matrix for one layer."""
        layer = self.layers[index]
        return np.stack([f.values(layer.precision) for f in layer.filters])


def from_real_weights(layer_arrays, precisions) -> WeightSet:
    """Quantize per-layer (filters, h, w, ch) real arrays into a set."""
    if len(layer_arrays) != len(precisions):
        raise ValueError("one precision per layer required")
    layers = []
    for arr, bits in zip(layer_arrays, precisions):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 4:
            raise ValueError("layer array must be (filters, h, w, ch)")
        shape = arr.shape[1:]
        blocks = tuple(
            FilterBlock(i, shape, quantize_array(arr[i], bits).reshape(-1))
            for i in range(arr.shape[0]))
        layers.append(LayerWeights(bits, blocks))
    return WeightSet(tuple(layers))


def apply_layer_precisions(ws: WeightSet, precisions) -> WeightSet:
    """Re-quantize every layer to a new precision via its real values.

    Unchanged precision is a no-op for the stored codes (the mapping is
    idempotent); lowering and raising both go through the dequantized
    reals, so a down-up cycle loses information.
    """
    if len(precisions) != len(ws.layers):
        raise ValueError(
            f"got {len(precisions)} precisions for {len(ws.layers)} layers")
    layers = []
    for layer, bits in zip(ws.layers, precisions):
        blocks = tuple(
            FilterBlock(
                f.filter_id, f.shape,
                quantize_array(f.values(layer.precision), bits))
            for f in layer.filters)
        layers.append(LayerWeights(bits, blocks))
    return WeightSet(tuple(layers))


def save_weights(ws: WeightSet, path) -> None:
    """Write the SCDW binary file."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(ws.layers)))
        for layer in ws.layers:
            first = layer.filters[0] if layer.filters else None
            h, w, ch = first.shape if first else (0, 0, 0)
            fh.write(_LAYER_HEADER.pack(
                layer.precision, len(layer.filters), h, w, ch))
            for f in layer.filters:
                if f.shape != (h, w, ch):
                    raise ValueError(
                        f"filter {f.filter_id} shape {f.shape} differs "
                        f"from layer shape {(h, w, ch)}")
                fh.write(f.codes.astype("<u8").tobytes())


def load_weights(path) -> WeightSet:
    """Read an SCDW file back into a WeightSet."""
    with open(path, "rb") as fh:
        data = fh.read()
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(data):
            raise WeightFormatError(f"truncated {what}", off)
        chunk = data[off:off + n]
        off += n
        return chunk

    magic, version, nlayers = _HEADER.unpack(take(_HEADER.size, "header"))
    if magic != MAGIC:
        raise WeightFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise WeightFormatError(f"unsupported version {version}", 4)
    layers = []
    for li in range(nlayers):
        at = off
        bits, nfilt, h, w, ch = _LAYER_HEADER.unpack(
            take(_LAYER_HEADER.size, f"layer {li} header"))
        if not 1 <= bits <= MAX_BITS:
            raise WeightFormatError(f"layer {li} precision {bits}", at)
        count = h * w * ch
        blocks = []
        for fi in range(nfilt):
            raw = take(8 * count, f"layer {li} filter {fi} codes")
            codes = np.frombuffer(raw, dtype="<u8").astype(np.uint64)
            if count and int(codes.max()) >= (1 << bits):
                raise WeightFormatError(
                    f"layer {li} filter {fi} code exceeds {bits} bits",
                    off - 8 * count)
            blocks.append(FilterBlock(fi, (h, w, ch), codes))
        layers.append(LayerWeights(bits, tuple(blocks)))
    if off != len(data):
        raise WeightFormatError("trailing bytes after last layer", off)
    return WeightSet(tuple(layers))


def random_weight_set(shapes, precision: int, seed: int) -> WeightSet:
    """Uniform[-1, 1) weights quantized at one precision.

    `shapes` is a list of (filters, h, w, ch).  Stands in for trained
    weights in oracle tests and gated experiments.
    """
    rng = np.random.default_rng(seed)
    arrays = [rng.uniform(-1.0, 1.0, shape) for shape in shapes]
    return from_real_weights(arrays, [precision] * len(shapes))
