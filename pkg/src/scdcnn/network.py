"""LeNet-style network: float oracle and stream-level SC inference.

A network is a stack of convolution+pooling layers (each output cell is
one feature extraction block over a 2x2 group of 5x5 receptive fields),
hidden fully connected layers (inner product + activation, no pooling),
and a final output layer whose class scores are decoded sums without an
activation.  The float path is the software reference the SC path is
measured against.

Inputs and inter-layer activations are reals in [-1, 1]; the SC path
re-encodes them as fresh bipolar streams at every layer, which models
each hardware block owning its own SNGs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import (
    BIPOLAR,
    DEFAULT_WIDTH,
    LFSR,
    BitStream,
    SngFamily,
    decode_stream,
)
from .arith import BinaryStream, decode_binary_sum, mux_select
from .blocks import APC_ANY, HALF, MUX_AVG, optimal_states, stanh, btanh
from .feb import (
    APC,
    AVG,
    BTANH,
    MAX,
    MUX,
    STANH,
    STANH_FIFTH,
    FebConfig,
    feb_forward,
    streams_per_forward,
)

POOL = 2
KERNEL = 5

FLOAT_MODE = "float"
SC_MODE = "sc"


@dataclass(frozen=True)
class ConvPool:
    """Convolution (5x5, stride 1) followed by 2x2 pooling."""

    filters: int
    kernel: int = KERNEL


@dataclass(frozen=True)
class FullyConnected:
    out: int


@dataclass(frozen=True)
class Output:
    classes: int


@dataclass(frozen=True)
class NetworkSpec:
    """Layer stack plus input geometry."""

    layers: tuple
    input_side: int = 28
    input_channels: int = 1

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        if isinstance(self.layers[-1], ConvPool):
            raise ValueError(
                "the last layer must be fully connected or the output layer")
        for i, layer in enumerate(self.layers[:-1]):
            if isinstance(layer, Output):
                raise ValueError(f"layer {i}: output layer before the end")

    def shapes(self):
        """Per-layer (in_shape, out_shape) chain; raises on geometry
        that does not tile (conv output must be even for 2x2 pooling)."""
        side, ch = self.input_side, self.input_channels
        out = []
        flat = None
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ConvPool):
                if flat is not None:
                    raise ValueError(
                        f"layer {i}: convolution after a flat layer")
                conv = side - layer.kernel + 1
                if conv < 1 or conv % POOL:
                    raise ValueError(
                        f"layer {i}: conv output {conv}x{conv} does not "
                        f"pool by {POOL}")
                out.append(((ch, side, side),
                            (layer.filters, conv // POOL, conv // POOL)))
                side, ch = conv // POOL, layer.filters
            else:
                if flat is None:
                    flat = ch * side * side
                n_out = layer.out if isinstance(layer, FullyConnected) \
                    else layer.classes
                out.append(((flat,), (n_out,)))
                flat = n_out
        return out

    def neuron_counts(self):
        """Neuron totals along the stack, pre- and post-pooling for
        convolution layers (the LeNet5 default yields
        784-11520-2880-3200-800-500-10)."""
        counts = [self.input_channels * self.input_side ** 2]
        side = self.input_side
        for layer in self.layers:
            if isinstance(layer, ConvPool):
                conv = side - layer.kernel + 1
                counts.append(layer.filters * conv * conv)
                side = conv // POOL
                counts.append(layer.filters * side * side)
            elif isinstance(layer, FullyConnected):
                counts.append(layer.out)
            else:
                counts.append(layer.classes)
        return tuple(counts)


def lenet5_spec() -> NetworkSpec:
    return NetworkSpec((
        ConvPool(20),
        ConvPool(50),
        FullyConnected(500),
        Output(10),
    ))


_KINDS = {"conv_pool", "fully_connected", "output"}


def parse_network_config(text: str) -> NetworkSpec:
    """Parse the key=value layer listing.

    One layer per non-blank, non-comment line, e.g.:

        input side=28 channels=1
        conv_pool filters=20
        conv_pool filters=50
        fully_connected out=500
        output classes=10

    The optional `input` line must come first.
    """
    side, channels = 28, 1
    layers = []
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]

    def params(tokens, line_no, allowed):
        kv = {}
        for tok in tokens:
            if "=" not in tok:
                raise ValueError(
                    f"line {line_no}: expected key=value, got {tok!r}")
            key, _, val = tok.partition("=")
            if key not in allowed:
                raise ValueError(f"line {line_no}: unknown key {key!r}")
            try:
                kv[key] = int(val)
            except ValueError:
                raise ValueError(
                    f"line {line_no}: {key} wants an integer, got {val!r}")
        return kv

    start = 0
    if lines and lines[0].split()[0] == "input":
        kv = params(lines[0].split()[1:], 1, {"side", "channels"})
        side = kv.get("side", side)
        channels = kv.get("channels", channels)
        start = 1
    for i, line in enumerate(lines[start:]):
        tokens = line.split()
        kind = tokens[0]
        if kind not in _KINDS:
            raise ValueError(f"layer {i}: unknown kind {kind!r}")
        if kind == "conv_pool":
            kv = params(tokens[1:], i, {"filters", "kernel"})
            if "filters" not in kv:
                raise ValueError(f"layer {i}: conv_pool needs filters=")
            layers.append(ConvPool(kv["filters"], kv.get("kernel", KERNEL)))
        elif kind == "fully_connected":
            kv = params(tokens[1:], i, {"out"})
            if "out" not in kv:
                raise ValueError(f"layer {i}: fully_connected needs out=")
            layers.append(FullyConnected(kv["out"]))
        else:
            kv = params(tokens[1:], i, {"classes"})
            if "classes" not in kv:
                raise ValueError(f"layer {i}: output needs classes=")
            layers.append(Output(kv["classes"]))
    if not layers:
        raise ValueError("config describes no layers")
    return NetworkSpec(tuple(layers), side, channels)


@dataclass(frozen=True)
class Network:
    """Validated spec plus dequantized per-layer weight matrices.

    weight matrix i has shape (units, fan_in): conv layers use one row
    per filter over the flattened 5x5xch patch, flat layers one row per
    neuron.
    """

    spec: NetworkSpec
    matrices: tuple


def build_network(spec: NetworkSpec, ws) -> Network:
    """Check the weight set against the spec and cache real weights."""
    shapes = spec.shapes()
    if len(ws.layers) != len(spec.layers):
        raise ValueError(
            f"weight set has {len(ws.layers)} layers, spec wants "
            f"{len(spec.layers)}")
    matrices = []
    for i, (layer, (in_shape, out_shape)) in enumerate(zip(spec.layers, shapes)):
        lw = ws.layers[i]
        if isinstance(layer, ConvPool):
            units = layer.filters
            fan_in = layer.kernel * layer.kernel * in_shape[0]
            want_shape = (layer.kernel, layer.kernel, in_shape[0])
        else:
            units = out_shape[0]
            fan_in = in_shape[0]
            want_shape = (1, 1, fan_in)
        if len(lw.filters) != units:
            raise ValueError(
                f"layer {i}: expected {units} filter blocks, got "
                f"{len(lw.filters)}")
        for f in lw.filters:
            if f.shape != want_shape:
                raise ValueError(
                    f"layer {i}: filter {f.filter_id} shape {f.shape}, "
                    f"expected {want_shape}")
        mat = ws.layer_values(i)
        if mat.shape != (units, fan_in):
            raise ValueError(
                f"layer {i}: weight matrix {mat.shape}, expected "
                f"{(units, fan_in)}")
        matrices.append(mat)
    return Network(spec, tuple(matrices))


def weight_shapes(spec: NetworkSpec):
    """(filters, h, w, ch) per layer, the random_weight_set layout."""
    out = []
    for layer, (in_shape, out_shape) in zip(spec.layers, spec.shapes()):
        if isinstance(layer, ConvPool):
            out.append((layer.filters, layer.kernel, layer.kernel,
                        in_shape[0]))
        else:
            out.append((out_shape[0], 1, 1, in_shape[0]))
    return out


def _conv_patches(maps: np.ndarray, kernel: int) -> np.ndarray:
    """(positions_h, positions_w, kernel*kernel*ch) patch tensor from
    (ch, side, side) feature maps; patch layout matches the filter
    flattening (h, w, ch)."""
    windows = sliding_window_view(maps, (kernel, kernel), axis=(1, 2))
    # (ch, ph, pw, kh, kw) -> (ph, pw, kh, kw, ch)
    return np.ascontiguousarray(
        windows.transpose(1, 2, 3, 4, 0)).reshape(
        windows.shape[1], windows.shape[2], -1)


def forward_float(net: Network, pixels: np.ndarray, pooling: str = MAX,
                  noise_amp=None, noise_rng=None) -> np.ndarray:
    """Double-precision reference scores.

    conv -> true 2x2 max or mean pool -> tanh per layer; hidden FC is
    tanh of the weighted sum; the output layer emits raw sums.
    `noise_amp` maps layer index -> uniform noise amplitude added to
    that layer's block outputs (the sensitivity experiment hook).
    """
    if pooling not in (AVG, MAX):
        raise ValueError(f"unknown pooling {pooling!r}")
    act = np.asarray(pixels, dtype=np.float64).reshape(
        net.spec.input_channels, net.spec.input_side, net.spec.input_side)
    if np.abs(act).max(initial=0.0) > 1.0:
        raise ValueError("pixels outside [-1, 1]")
    flat = None
    for i, layer in enumerate(net.spec.layers):
        mat = net.matrices[i]
        if isinstance(layer, ConvPool):
            patches = _conv_patches(act, layer.kernel)
            conv = patches @ mat.T          # (ph, pw, filters)
            ph, pw, nf = conv.shape
            grouped = conv.reshape(ph // POOL, POOL, pw // POOL, POOL, nf)
            pooled = grouped.max(axis=(1, 3)) if pooling == MAX \
                else grouped.mean(axis=(1, 3))
            out = np.tanh(pooled)           # (ph/2, pw/2, filters)
            out = out.transpose(2, 0, 1)
        elif isinstance(layer, FullyConnected):
            if flat is None:
                flat = act.reshape(-1)
            out = np.tanh(mat @ flat)
        else:
            if flat is None:
                flat = act.reshape(-1)
            out = mat @ flat
        if noise_amp and i in noise_amp and noise_amp[i] > 0:
            out = out + noise_rng.uniform(-noise_amp[i], noise_amp[i],
                                          out.shape)
            if not isinstance(layer, Output):
                out = np.clip(out, -1.0, 1.0)
        if isinstance(layer, ConvPool):
            act, flat = out, None
        else:
            flat = out
    return flat


@dataclass(frozen=True)
class ScRunConfig:
    """How the SC path runs: stream length, generator family (seed,
    register width, sequence mode), pooling and adder variants, and
    optional per-layer FebConfig overrides (conv layers only).

    Wider registers cut the cross-stream correlation floor; length-
    scaling studies should run at width 16 so the floor sits below the
    sampling error at the longest stream."""

    length: int = 1024
    seed: int = 0
    pooling: str = MAX
    ip_variant: str = APC
    width: int = DEFAULT_WIDTH
    sng_mode: str = LFSR
    overrides: dict = field(default_factory=dict)

    def conv_config(self, layer_index: int, n: int) -> FebConfig:
        cfg = self.overrides.get(layer_index)
        if cfg is not None:
            return cfg
        if self.ip_variant == MUX:
            act = STANH if self.pooling == AVG else STANH_FIFTH
        else:
            act = BTANH
        return FebConfig(self.ip_variant, self.pooling, act,
                         n=n, length=self.length)


def _fc_sc(values, weights, fam, first_index, length, ip_variant,
           activation_states=None):
    """One hidden-FC neuron: inner product + tanh-approximating
    activation, returns (real, streams consumed)."""
    n = values.size
    flat = np.empty(2 * n)
    flat[0::2] = weights
    flat[1::2] = values
    bits = fam.encode(flat, BIPOLAR, length, first_index=first_index)
    used = 2 * n
    products = 1 - (bits[0::2] ^ bits[1::2])
    if ip_variant == APC:
        k = activation_states or optimal_states(APC_ANY, n, length)
        counts = BinaryStream(products.sum(axis=0, dtype=np.int32), n)
        return decode_stream(btanh(counts, k)), used
    sel = mux_select(fam.stream(first_index + used), n, length)
    used += 1
    summed = BitStream(products[sel, np.arange(length)], BIPOLAR)
    k = activation_states or optimal_states(MUX_AVG, n, length)
    return decode_stream(stanh(summed, k, HALF)), used


def _output_sc(values, weights, fam, first_index, length, ip_variant):
    """Output-layer score: decoded sum estimate, no activation."""
    n = values.size
    flat = np.empty(2 * n)
    flat[0::2] = weights
    flat[1::2] = values
    bits = fam.encode(flat, BIPOLAR, length, first_index=first_index)
    used = 2 * n
    products = 1 - (bits[0::2] ^ bits[1::2])
    if ip_variant == APC:
        counts = BinaryStream(products.sum(axis=0, dtype=np.int32), n)
        return decode_binary_sum(counts, BIPOLAR), used
    sel = mux_select(fam.stream(first_index + used), n, length)
    used += 1
    dens = products[sel, np.arange(length)].mean()
    return n * (2.0 * dens - 1.0), used


def forward_sc(net: Network, pixels: np.ndarray,
               run: ScRunConfig) -> np.ndarray:
    """Stream-level inference; deterministic given run.seed."""
    fam = SngFamily(run.seed, width=run.width, mode=run.sng_mode)
    idx = 0
    act = np.asarray(pixels, dtype=np.float64).reshape(
        net.spec.input_channels, net.spec.input_side, net.spec.input_side)
    if np.abs(act).max(initial=0.0) > 1.0:
        raise ValueError("pixels outside [-1, 1]")
    flat = None
    for i, layer in enumerate(net.spec.layers):
        mat = net.matrices[i]
        if isinstance(layer, ConvPool):
            patches = _conv_patches(act, layer.kernel)
            ph, pw = patches.shape[:2]
            cfg = run.conv_config(i, patches.shape[2])
            stride = streams_per_forward(cfg)
            out = np.empty((layer.filters, ph // POOL, pw // POOL))
            for f in range(layer.filters):
                w = mat[f]
                for r in range(ph // POOL):
                    for c in range(pw // POOL):
                        rfs = patches[POOL * r: POOL * r + POOL,
                                      POOL * c: POOL * c + POOL].reshape(
                            POOL * POOL, -1)
                        out[f, r, c] = feb_forward(cfg, rfs, w, fam,
                                                   first_index=idx)
                        idx += stride
            act, flat = out, None
        elif isinstance(layer, FullyConnected):
            if flat is None:
                flat = act.reshape(-1)
            out = np.empty(layer.out)
            for u in range(layer.out):
                out[u], used = _fc_sc(flat, mat[u], fam, idx, run.length,
                                      run.ip_variant)
                idx += used
            flat = out
        else:
            if flat is None:
                flat = act.reshape(-1)
            out = np.empty(layer.classes)
            for u in range(layer.classes):
                out[u], used = _output_sc(flat, mat[u], fam, idx,
                                          run.length, run.ip_variant)
                idx += used
            flat = out
    return flat


def evaluate(net: Network, images, labels, mode: str = FLOAT_MODE,
             run: ScRunConfig | None = None, pooling: str = MAX) -> float:
    """Fraction misclassified by argmax (ties to the lowest class)."""
    if len(images) == 0:
        raise ValueError("dataset is empty")
    if len(images) != len(labels):
        raise ValueError(
            f"{len(images)} images vs {len(labels)} labels")
    wrong = 0
    for img, label in zip(images, labels):
        if mode == FLOAT_MODE:
            scores = forward_float(net, img, pooling)
        elif mode == SC_MODE:
            if run is None:
                raise ValueError("sc mode needs a run config")
            scores = forward_sc(net, img, run)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        if int(np.argmax(scores)) != int(label):
            wrong += 1
    return wrong / len(images)


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file; `offset` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def load_idx(path):
    """Read one IDX file: images -> (n, rows, cols) float array mapped
    to [-1, 1] via 2*(v/255) - 1, labels -> (n,) uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise IdxFormatError("truncated magic", 0)
    magic = struct.unpack(">I", data[:4])[0]
    if magic == IDX_LABELS_MAGIC:
        if len(data) < 8:
            raise IdxFormatError("truncated label count", 4)
        n = struct.unpack(">I", data[4:8])[0]
        if len(data) != 8 + n:
            raise IdxFormatError(
                f"label payload wants {n} bytes, file holds "
                f"{len(data) - 8}", 8)
        return np.frombuffer(data, dtype=np.uint8, offset=8).copy()
    if magic == IDX_IMAGES_MAGIC:
        if len(data) < 16:
            raise IdxFormatError("truncated image header", 4)
        n, rows, cols = struct.unpack(">III", data[4:16])
        want = n * rows * cols
        if len(data) != 16 + want:
            raise IdxFormatError(
                f"image payload wants {want} bytes, file holds "
                f"{len(data) - 16}", 16)
        raw = np.frombuffer(data, dtype=np.uint8, offset=16)
        pixels = raw.reshape(n, rows, cols).astype(np.float64)
        return 2.0 * (pixels / 255.0) - 1.0
    raise IdxFormatError(f"unrecognized magic 0x{magic:08x}", 0)


def load_mnist(images_path, labels_path):
    """Load a paired IDX image/label set; counts must agree."""
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 3:
        raise IdxFormatError(f"{images_path} is not an image file", 0)
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path} is not a label file", 0)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"{images.shape[0]} images vs {labels.shape[0]} labels", 0)
    return images, labels
