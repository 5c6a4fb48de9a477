"""Named, seeded benchmark sweeps and their machine-readable reports.

Every experiment is a pure function of (config, seed): reruns produce
byte-identical CSV/JSON.  Wall time is measured for the in-memory
report but never serialized.  Grid cells run in a thread pool capped by
SCDCNN_THREADS; assembly is single-threaded and order-deterministic.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .core import (
    BIPOLAR,
    UNIPOLAR,
    BitStream,
    SngFamily,
    decode_stream,
)
from .arith import apc_counts_approx, apc_counts_exact, mux_select
from .blocks import HALF, STOCHASTIC, max_pool_hw, stanh
from .feb import APC, AVG, BTANH, MAX, MUX, STANH, STANH_FIFTH, FebConfig, feb_inaccuracy
from .network import (
    ConvPool,
    FullyConnected,
    NetworkSpec,
    Output,
    ScRunConfig,
    build_network,
    evaluate,
    forward_float,
    load_mnist,
    weight_shapes,
)
from .weights import (
    apply_layer_precisions,
    from_real_weights,
    load_weights,
)

EXPERIMENT_IDS = (
    "table1", "table2", "table3", "table4", "table5",
    "fig9", "fig10", "fig11", "table6",
)

CSV_FORMAT = "csv"
JSON_FORMAT = "json"

DEFAULT_TRIALS = 500
QUICK_FACTOR = 0.1

# Register width for every stream the harness generates.  Narrow LFSRs
# share enough orbit structure that cross-stream correlation bottoms
# out near 0.05 regardless of stream length; at 16 bits the floor sits
# below the sampling error of every sweep here.
_HARNESS_WIDTH = 16


class ExternalDataError(RuntimeError):
    """Run needs externally trained weights / dataset files."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep request; unset lists fall back per experiment."""

    experiment: str
    trials: int = DEFAULT_TRIALS
    seed: int = 0
    lengths: tuple[int, ...] | None = None
    ns: tuple[int, ...] | None = None
    precisions: tuple[int, ...] | None = None
    segment: int | None = None
    weights_path: str | None = None
    mnist_dir: str | None = None
    quick: bool = False

    def __post_init__(self):
        if self.experiment not in EXPERIMENT_IDS:
            raise ValueError(
                f"unknown experiment {self.experiment!r}; pick one of "
                f"{', '.join(EXPERIMENT_IDS)}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    def effective_trials(self) -> int:
        if self.quick:
            return max(1, round(self.trials * QUICK_FACTOR))
        return self.trials


@dataclass(frozen=True)
class Cell:
    """One grid point: ordered key pairs plus its statistic."""

    key: tuple[tuple[str, object], ...]
    mean: float
    std: float
    trials: int


@dataclass(frozen=True)
class Report:
    experiment: str
    key_names: tuple[str, ...]
    grid: dict
    cells: tuple[Cell, ...]
    seed: int
    version: str
    notes: tuple[str, ...] = ()
    wall_time: float = 0.0

    def sorted_cells(self) -> list[Cell]:
        return sorted(self.cells,
                      key=lambda c: tuple(str(v) for _, v in c.key))


def _cell_seed(master: int, experiment: str, key) -> int:
    """Stable per-cell seed: nothing about pool scheduling leaks in."""
    tag = f"{master}|{experiment}|{key!r}".encode()
    return int.from_bytes(hashlib.blake2s(tag, digest_size=8).digest(),
                          "big") >> 1


def _pool_size() -> int:
    env = os.environ.get("SCDCNN_THREADS")
    if env:
        try:
            workers = int(env)
        except ValueError:
            raise ValueError(f"SCDCNN_THREADS must be an integer, got {env!r}")
        if workers < 1:
            raise ValueError("SCDCNN_THREADS must be >= 1")
        return workers
    return min(8, os.cpu_count() or 1)


def _run_cells(tasks):
    """tasks: list of (key, fn) -> list of Cells in task order."""
    with ThreadPoolExecutor(max_workers=_pool_size()) as pool:
        stats = list(pool.map(lambda kv: kv[1](), tasks))
    return tuple(Cell(key, *stat) for (key, _), stat in zip(tasks, stats))


def _stat(errors: np.ndarray):
    return float(errors.mean()), float(errors.std()), int(errors.size)


# --- table1: OR-gate inner product, both encodings, prescale grid ----------

_TABLE1_NS = (16, 32, 64)


def _prescale_grid(n: int) -> tuple[int, ...]:
    out = []
    s = 1
    while s <= n:
        out.append(s)
        s *= 2
    return tuple(out)


def _or_ip_errors(encoding, n, s, length, trials, seed):
    fam = SngFamily(seed, width=_HARNESS_WIDTH)
    rng = np.random.default_rng(seed)
    lo = 0.0 if encoding == UNIPOLAR else -1.0
    errs = np.empty(trials)
    for t in range(trials):
        xs = rng.uniform(lo, 1.0, n)
        ws = rng.uniform(lo, 1.0, n)
        target = float(xs @ ws)
        flat = np.empty(2 * n)
        flat[0::2] = xs / s
        flat[1::2] = ws
        bits = fam.encode(flat, encoding, length, first_index=t * 2 * n)
        if encoding == UNIPOLAR:
            products = bits[0::2] & bits[1::2]
        else:
            products = 1 - (bits[0::2] ^ bits[1::2])
        ones = np.bitwise_or.reduce(products, axis=0)
        dens = ones.mean()
        estimate = s * dens if encoding == UNIPOLAR else s * (2.0 * dens - 1.0)
        errs[t] = abs(estimate - target)
    return _stat(errs)


def _run_table1(cfg: ExperimentConfig):
    ns = cfg.ns or _TABLE1_NS
    length = (cfg.lengths or (1024,))[0]
    trials = cfg.effective_trials()
    key_names = ("encoding", "n", "prescale")
    tasks = []
    for encoding in (BIPOLAR, UNIPOLAR):
        for n in ns:
            for s in _prescale_grid(n):
                key = (("encoding", encoding), ("n", n), ("prescale", s))
                seed = _cell_seed(cfg.seed, cfg.experiment, key)
                tasks.append((key, lambda e=encoding, nn=n, ss=s, sd=seed:
                              _or_ip_errors(e, nn, ss, length, trials, sd)))
    grid = {"encoding": [BIPOLAR, UNIPOLAR], "n": list(ns),
            "prescale": ["powers of two up to n"], "length": [length]}
    notes = ("compare min mean over the prescale column per (encoding, n) "
             "against published values",)
    return key_names, grid, _run_cells(tasks), notes


# --- table2: MUX inner product over the N x L grid --------------------------

_TABLE2_NS = (16, 32, 64)
_TABLE2_LENGTHS = (512, 1024, 2048, 4096)


def _mux_ip_errors(n, length, trials, seed):
    fam = SngFamily(seed, width=_HARNESS_WIDTH)
    rng = np.random.default_rng(seed)
    cols = np.arange(length)
    errs = np.empty(trials)
    stride = 2 * n + 1
    for t in range(trials):
        xs = rng.uniform(-1.0, 1.0, n)
        ws = rng.uniform(-1.0, 1.0, n)
        flat = np.empty(2 * n)
        flat[0::2] = xs
        flat[1::2] = ws
        bits = fam.encode(flat, BIPOLAR, length, first_index=t * stride)
        products = 1 - (bits[0::2] ^ bits[1::2])
        sel = mux_select(fam.stream(t * stride + 2 * n), n, length)
        dens = products[sel, cols].mean()
        errs[t] = abs(n * (2.0 * dens - 1.0) - float(xs @ ws))
    return _stat(errs)


def _run_table2(cfg: ExperimentConfig):
    ns = cfg.ns or _TABLE2_NS
    lengths = cfg.lengths or _TABLE2_LENGTHS
    trials = cfg.effective_trials()
    tasks = []
    for n in ns:
        for length in lengths:
            key = (("n", n), ("length", length))
            seed = _cell_seed(cfg.seed, cfg.experiment, key)
            tasks.append((key, lambda nn=n, ll=length, sd=seed:
                          _mux_ip_errors(nn, ll, trials, sd)))
    grid = {"n": list(ns), "length": list(lengths)}
    return ("n", "length"), grid, _run_cells(tasks), ()


# --- table3: approximate vs exact parallel counter --------------------------

_TABLE3_NS = (16, 32, 64)
_TABLE3_LENGTHS = (128, 256, 384, 512)


def _apc_rel_errors(n, length, trials, seed):
    fam = SngFamily(seed, width=_HARNESS_WIDTH)
    rng = np.random.default_rng(seed)
    units = n // 16
    half = 1 << (fam.width - 1)
    errs = np.empty(trials)
    stride = 2 * n + 1
    for t in range(trials):
        xs = rng.uniform(-1.0, 1.0, n)
        ws = rng.uniform(-1.0, 1.0, n)
        flat = np.empty(2 * n)
        flat[0::2] = xs
        flat[1::2] = ws
        bits = fam.encode(flat, BIPOLAR, length, first_index=t * stride)
        products = 1 - (bits[0::2] ^ bits[1::2])
        words = fam.stream(t * stride + 2 * n).words(units * length)
        dither = (words < half).astype(np.int32).reshape(units, length)
        exact = int(apc_counts_exact(products).sum())
        approx = int(apc_counts_approx(products, dither).sum())
        errs[t] = 100.0 * abs(approx - exact) / max(exact, 1)
    return _stat(errs)


def _run_table3(cfg: ExperimentConfig):
    ns = cfg.ns or _TABLE3_NS
    lengths = cfg.lengths or _TABLE3_LENGTHS
    trials = cfg.effective_trials()
    for n in ns:
        if n % 16:
            raise ValueError(f"table3 input sizes must be multiples of 16, got {n}")
    tasks = []
    for n in ns:
        for length in lengths:
            key = (("n", n), ("length", length))
            seed = _cell_seed(cfg.seed, cfg.experiment, key)
            tasks.append((key, lambda nn=n, ll=length, sd=seed:
                          _apc_rel_errors(nn, ll, trials, sd)))
    grid = {"n": list(ns), "length": list(lengths)}
    notes = ("statistic is percent relative deviation of the approximate "
             "counter's total ones from the exact counter's, per trial",)
    return ("n", "length"), grid, _run_cells(tasks), notes


# --- table4: hardware max pooling vs software max ---------------------------

_TABLE4_NS = (4, 9, 16)
_TABLE4_LENGTHS = (128, 256, 384, 512)


def _maxpool_errors(n, length, segment, trials, seed):
    fam = SngFamily(seed, width=_HARNESS_WIDTH)
    rng = np.random.default_rng(seed)
    errs = np.empty(trials)
    stride = n + 1
    for t in range(trials):
        values = rng.uniform(-1.0, 1.0, n)
        bits = fam.encode(values, BIPOLAR, length, first_index=t * stride)
        streams = [BitStream(bits[i], BIPOLAR) for i in range(n)]
        picker = fam.stream(t * stride + n)
        out = max_pool_hw(streams, c=segment, domain=STOCHASTIC,
                          first_pick=picker)
        errs[t] = abs(decode_stream(out) - float(values.max()))
    return _stat(errs)


def _run_table4(cfg: ExperimentConfig):
    ns = cfg.ns or _TABLE4_NS
    lengths = cfg.lengths or _TABLE4_LENGTHS
    segment = cfg.segment or 16
    trials = cfg.effective_trials()
    tasks = []
    for n in ns:
        for length in lengths:
            key = (("n", n), ("length", length))
            seed = _cell_seed(cfg.seed, cfg.experiment, key)
            tasks.append((key, lambda nn=n, ll=length, sd=seed:
                          _maxpool_errors(nn, ll, segment, trials, sd)))
    grid = {"n": list(ns), "length": list(lengths), "segment": [segment]}
    return ("n", "length"), grid, _run_cells(tasks), ()


# --- table5: FSM tanh inaccuracy over the state count -----------------------

_TABLE5_STATES = (8, 10, 12, 14, 16, 18, 20)
_TABLE5_LENGTH = 8192
_TABLE5_POINTS = 201


def _stanh_rel_inaccuracy(k, length, trials, seed):
    fam = SngFamily(seed, width=_HARNESS_WIDTH)
    xgrid = np.linspace(-1.0, 1.0, _TABLE5_POINTS)
    ref = np.tanh(0.5 * k * xgrid)
    denom = np.abs(ref).mean()
    ratios = np.empty(trials)
    for t in range(trials):
        bits = fam.encode(xgrid, BIPOLAR, length,
                          first_index=t * _TABLE5_POINTS)
        outs = np.empty(_TABLE5_POINTS)
        for i in range(_TABLE5_POINTS):
            outs[i] = decode_stream(stanh(BitStream(bits[i], BIPOLAR), k, HALF))
        ratios[t] = 100.0 * np.abs(outs - ref).mean() / denom
    return _stat(ratios)


def _run_table5(cfg: ExperimentConfig):
    states = cfg.ns or _TABLE5_STATES
    length = (cfg.lengths or (_TABLE5_LENGTH,))[0]
    trials = cfg.effective_trials()
    for k in states:
        if k < 2 or k % 2:
            raise ValueError(f"state counts must be even and >= 2, got {k}")
    tasks = []
    for k in states:
        key = (("states", k),)
        seed = _cell_seed(cfg.seed, cfg.experiment, key)
        tasks.append((key, lambda kk=k, sd=seed:
                      _stanh_rel_inaccuracy(kk, length, trials, sd)))
    grid = {"states": list(states), "length": [length],
            "points": [_TABLE5_POINTS]}
    notes = ("statistic is percent normalized deviation from "
             "tanh(states/2 * x): mean |out - ref| over a uniform x grid "
             "divided by mean |ref|",)
    return ("states",), grid, _run_cells(tasks), notes


# --- fig9: feature extraction block inaccuracy grid -------------------------

_FIG9_NS = (16, 32, 64, 128, 256)
_FIG9_VARIANTS = (
    (MUX, AVG, STANH),
    (MUX, MAX, STANH_FIFTH),
    (APC, AVG, BTANH),
    (APC, MAX, BTANH),
)


def _run_fig9(cfg: ExperimentConfig):
    ns = cfg.ns or _FIG9_NS
    length = (cfg.lengths or (1024,))[0]
    trials = cfg.effective_trials()
    tasks = []
    for ip, pool, act in _FIG9_VARIANTS:
        for n in ns:
            key = (("ip", ip), ("pool", pool), ("n", n))
            seed = _cell_seed(cfg.seed, cfg.experiment, key)
            feb = FebConfig(ip, pool, act, n=n, length=length,
                            segment=cfg.segment)

            def run(feb=feb, sd=seed):
                stats = feb_inaccuracy(feb, trials, seed=sd,
                                       width=_HARNESS_WIDTH)
                return stats.mean_abs_error, stats.std_dev, stats.trials

            tasks.append((key, run))
    grid = {"ip": [ip for ip, _, _ in _FIG9_VARIANTS],
            "pool": [pool for _, pool, _ in _FIG9_VARIANTS],
            "n": list(ns), "length": [length]}
    return ("ip", "pool", "n"), grid, _run_cells(tasks), ()


# --- fig10: weight precision sweep -------------------------------------------

_FIG10_PRECISIONS = tuple(range(2, 13))

_TOY_SPEC = NetworkSpec(
    (ConvPool(3), ConvPool(4), FullyConnected(6), Output(3)),
    input_side=16, input_channels=1)


def _toy_net(precision: int, seed: int):
    rng = np.random.default_rng(seed)
    reals = [rng.uniform(-1.0, 1.0, shape)
             for shape in weight_shapes(_TOY_SPEC)]
    precisions = [precision] * len(reals)
    return build_network(_TOY_SPEC, from_real_weights(reals, precisions))


def _precision_proxy_errors(precision, trials, seed):
    errs = np.empty(trials)
    for t in range(trials):
        base = _toy_net(64, seed + t)
        coarse = _toy_net(precision, seed + t)
        rng = np.random.default_rng((seed + t) ^ 0x5F5F)
        img = rng.uniform(-1.0, 1.0, (16, 16))
        errs[t] = float(np.abs(forward_float(coarse, img)
                               - forward_float(base, img)).mean())
    return _stat(errs)


def _precision_accuracy(precision, ws, images, labels):
    narrowed = apply_layer_precisions(ws, [precision] * len(ws.layers))
    from .network import lenet5_spec
    net = build_network(lenet5_spec(), narrowed)
    rate = evaluate(net, images, labels, mode="float")
    return rate, 0.0, len(images)


def _run_fig10(cfg: ExperimentConfig):
    precisions = cfg.precisions or _FIG10_PRECISIONS
    trials = cfg.effective_trials()
    accuracy_mode = cfg.weights_path is not None and cfg.mnist_dir is not None
    tasks = []
    if accuracy_mode:
        ws = load_weights(cfg.weights_path)
        images, labels = _mnist_subset(cfg.mnist_dir, trials)
        for w in precisions:
            key = (("precision", w),)
            tasks.append((key, lambda ww=w: _precision_accuracy(
                ww, ws, images, labels)))
        notes = ("statistic is the misclassification rate at each weight "
                 "precision",)
    else:
        for w in precisions:
            key = (("precision", w),)
            seed = _cell_seed(cfg.seed, cfg.experiment, key)
            tasks.append((key, lambda ww=w, sd=seed:
                          _precision_proxy_errors(ww, trials, sd)))
        notes = ("no external weights given: sweep ran on random-weight toy "
                 "networks; statistic is mean |scores(w-bit) - scores(64-bit)|; "
                 "pass --weights and --mnist for the accuracy sweep",)
    grid = {"precision": list(precisions)}
    return ("precision",), grid, _run_cells(tasks), notes


# --- fig11: layer-wise noise sensitivity -------------------------------------

_FIG11_LAYERS = (0, 1, 2)
_FIG11_AMPLITUDE = 0.1


def _noise_sensitivity(layer, trials, seed):
    devs = np.empty(trials)
    for t in range(trials):
        net = _toy_net(16, seed + t)
        rng = np.random.default_rng((seed + t) ^ 0xA5A5)
        img = rng.uniform(-1.0, 1.0, (16, 16))
        clean = forward_float(net, img)
        noisy = forward_float(
            net, img, noise_amp={layer: _FIG11_AMPLITUDE},
            noise_rng=np.random.default_rng((seed + t) ^ 0x3C3C))
        devs[t] = float(np.abs(noisy - clean).mean())
    return _stat(devs)


def _run_fig11(cfg: ExperimentConfig):
    trials = cfg.effective_trials()
    tasks = []
    for layer in _FIG11_LAYERS:
        key = (("layer", layer),)
        seed = _cell_seed(cfg.seed, cfg.experiment, key)
        tasks.append((key, lambda ll=layer, sd=seed:
                      _noise_sensitivity(ll, trials, sd)))
    grid = {"layer": list(_FIG11_LAYERS), "amplitude": [_FIG11_AMPLITUDE]}
    notes = ("statistic is mean |noisy - clean| score deviation when uniform "
             "noise of amplitude 0.1 is injected into one layer's outputs",)
    return ("layer",), grid, _run_cells(tasks), notes


# --- table6: trained-network inaccuracy (external data) ----------------------


def _mnist_subset(mnist_dir: str, limit: int):
    images_path = os.path.join(mnist_dir, "t10k-images-idx3-ubyte")
    labels_path = os.path.join(mnist_dir, "t10k-labels-idx1-ubyte")
    if not (os.path.exists(images_path) and os.path.exists(labels_path)):
        raise ExternalDataError(
            f"external data required: expected {images_path} and "
            f"{labels_path}")
    images, labels = load_mnist(images_path, labels_path)
    return images[:limit], labels[:limit]


def _run_table6(cfg: ExperimentConfig):
    if cfg.weights_path is None or cfg.mnist_dir is None:
        raise ExternalDataError(
            "external data required: table6 needs --weights (trained SCDW "
            "file) and --mnist (IDX directory)")
    ws = load_weights(cfg.weights_path)
    from .network import lenet5_spec
    net = build_network(lenet5_spec(), ws)
    images, labels = _mnist_subset(cfg.mnist_dir, cfg.effective_trials())
    length = (cfg.lengths or (1024,))[0]
    modes = (
        ("float_max", lambda: evaluate(net, images, labels, mode="float",
                                       pooling=MAX)),
        ("float_avg", lambda: evaluate(net, images, labels, mode="float",
                                       pooling=AVG)),
        ("sc_max", lambda: evaluate(net, images, labels, mode="sc",
                                    run=ScRunConfig(length=length,
                                                    seed=cfg.seed,
                                                    width=_HARNESS_WIDTH))),
    )
    tasks = [((("mode", name),),
              lambda fn=fn, n_img=len(images): (fn(), 0.0, n_img))
             for name, fn in modes]
    grid = {"mode": [name for name, _ in modes], "length": [length]}
    notes = ("statistic is the misclassification rate over the first "
             f"{len(images)} test images",)
    return ("mode",), grid, _run_cells(tasks), notes


_RUNNERS = {
    "table1": _run_table1,
    "table2": _run_table2,
    "table3": _run_table3,
    "table4": _run_table4,
    "table5": _run_table5,
    "fig9": _run_fig9,
    "fig10": _run_fig10,
    "fig11": _run_fig11,
    "table6": _run_table6,
}


def run_experiment(cfg: ExperimentConfig) -> Report:
    start = time.perf_counter()
    key_names, grid, cells, notes = _RUNNERS[cfg.experiment](cfg)
    return Report(
        experiment=cfg.experiment,
        key_names=key_names,
        grid=grid,
        cells=cells,
        seed=cfg.seed,
        version=__version__,
        notes=notes + ("statistics average per-trial absolute error",),
        wall_time=time.perf_counter() - start,
    )


# --- report serialization -----------------------------------------------------


def report_csv(report: Report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(report.key_names) + ["mean", "std", "trials"])
    for cell in report.sorted_cells():
        row = [str(v) for _, v in cell.key]
        row += [repr(cell.mean), repr(cell.std), str(cell.trials)]
        writer.writerow(row)
    return buf.getvalue()


def report_json(report: Report) -> str:
    doc = {
        "meta": {
            "experiment": report.experiment,
            "seed": report.seed,
            "version": report.version,
            "notes": list(report.notes),
        },
        "grid": report.grid,
        "cells": [
            {
                "key": {name: value for name, value in cell.key},
                "mean": cell.mean,
                "std": cell.std,
                "trials": cell.trials,
            }
            for cell in report.sorted_cells()
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def emit_report(report: Report, path: str, fmt: str = CSV_FORMAT) -> None:
    if fmt == CSV_FORMAT:
        text = report_csv(report)
    elif fmt == JSON_FORMAT:
        text = report_json(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
