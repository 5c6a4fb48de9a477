"""Bit-exact simulator of stochastic-computing DCNN hardware.

Layered bottom-up: core (streams and generators), arith (gate-level
arithmetic), blocks (inner product, pooling, activation FSMs), feb
(feature-extraction-block compositions), weights (quantized storage),
network (LeNet-style inference vs a float oracle), experiments and cli
(the reproduction harness).
"""

__version__ = "0.1.0"

from .core import (
    BIPOLAR,
    COUNTER_EXACT,
    LFSR,
    UNIPOLAR,
    BitStream,
    SngFamily,
    SngState,
    TwoLineStream,
    decode_stream,
    generate_stream,
    prescale,
    two_line_decode,
)
from .arith import BinaryStream
from .feb import ErrorStats, FebConfig, feb_forward, feb_inaccuracy, feb_reference
from .weights import (
    QuantizedWeight,
    WeightSet,
    dequantize,
    load_weights,
    quantize,
    save_weights,
)
from .network import (
    Network,
    NetworkSpec,
    ScRunConfig,
    build_network,
    evaluate,
    forward_float,
    forward_sc,
    lenet5_spec,
    load_idx,
    parse_network_config,
)
from .experiments import (
    ExperimentConfig,
    Report,
    emit_report,
    run_experiment,
)

__all__ = [
    "BIPOLAR",
    "COUNTER_EXACT",
    "LFSR",
    "UNIPOLAR",
    "BinaryStream",
    "BitStream",
    "ErrorStats",
    "ExperimentConfig",
    "FebConfig",
    "Network",
    "NetworkSpec",
    "QuantizedWeight",
    "Report",
    "ScRunConfig",
    "SngFamily",
    "SngState",
    "TwoLineStream",
    "WeightSet",
    "build_network",
    "decode_stream",
    "dequantize",
    "emit_report",
    "evaluate",
    "feb_forward",
    "feb_inaccuracy",
    "feb_reference",
    "forward_float",
    "forward_sc",
    "generate_stream",
    "lenet5_spec",
    "load_idx",
    "load_weights",
    "parse_network_config",
    "prescale",
    "quantize",
    "run_experiment",
    "save_weights",
    "two_line_decode",
    "__version__",
]
