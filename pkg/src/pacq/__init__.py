"""Packed FP16 x low-bit integer GEMM: arithmetic units, dataflow simulator, cost model."""

from .costmodel import CostParams, EdpReport, energy, flow_reports, load_params
from .dataflow import (FlowCounters, FlowKind, GemmShape, HwConfig, compare_flows, map_warp,
                       simulate, simulate_counters)
from .estimators import PackedGEMM, RTNQuantizer
from .halffloat import ArithFlags, fp16_add, fp16_decode, fp16_encode, fp16_mul
from .pmul import (AccumulatorPolicy, DpConfig, dp_cycles, fused_correct, parallel_dp,
                   parallel_fpint_mul, verify_lanes)
from .quantpack import (GroupSpec, PackedWeights, PackSpec, QuantizedWeights, load_weights, pack,
                        rtn_quantize, save_weights)

__version__ = "0.1.0"

__all__ = [
    "AccumulatorPolicy", "ArithFlags", "CostParams", "DpConfig", "EdpReport", "FlowCounters",
    "FlowKind", "GemmShape", "GroupSpec", "HwConfig", "PackSpec", "PackedGEMM", "PackedWeights",
    "QuantizedWeights", "RTNQuantizer", "compare_flows", "dp_cycles", "energy", "flow_reports",
    "fp16_add", "fp16_decode", "fp16_encode", "fp16_mul", "fused_correct", "load_params",
    "load_weights", "map_warp", "pack", "parallel_dp", "parallel_fpint_mul", "rtn_quantize",
    "save_weights", "simulate", "simulate_counters", "verify_lanes",
]
