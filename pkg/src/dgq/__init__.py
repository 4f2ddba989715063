"""Dual-grained A8W4 post-training quantization for linear layers.

4-bit group-wise weights are expanded through an int8 group scale into a
channel-scaled int8 domain, so inference runs one int8 x int8 GEMM with a
float epilogue.
"""

from .kernel import GemmResult, epilogue, int8_gemm, quantize_activations, run_gemm, segmented_gemm_reference
from .layer import (
    DgqLayer,
    Int8OverflowError,
    LayerValidationError,
    byte_accounting,
    dequantize_to_f32,
    dequantize_to_s8,
    pack_layer,
    read_dgq,
    write_dgq,
)
from .pipeline import LayerReport, PipelineConfig, Scheme, quantize_layer, run_layer, run_suite
from .quant import Granularity, QuantParams, compute_params, dequantize, fake_quantize, quantize
from .search import (
    DualParams,
    GroupParams,
    SearchConfig,
    clip_interval,
    fused_interval_oracle,
    phase1_search,
    phase2_search,
    rtn_dgq,
)
from .smoothing import SmoothScale, apply_smooth, compute_smooth
from .tensor import DType, Tensor, gen_synthetic, read_tensor, write_tensor

__version__ = "0.1.0"

__all__ = [
    "DType", "Tensor", "gen_synthetic", "read_tensor", "write_tensor",
    "Granularity", "QuantParams", "compute_params", "quantize", "dequantize", "fake_quantize",
    "SmoothScale", "compute_smooth", "apply_smooth",
    "SearchConfig", "GroupParams", "DualParams", "clip_interval", "fused_interval_oracle",
    "phase1_search", "phase2_search", "rtn_dgq",
    "DgqLayer", "LayerValidationError", "Int8OverflowError", "pack_layer", "read_dgq", "write_dgq",
    "dequantize_to_s8", "dequantize_to_f32", "byte_accounting",
    "GemmResult", "quantize_activations", "int8_gemm", "epilogue", "run_gemm", "segmented_gemm_reference",
    "Scheme", "PipelineConfig", "LayerReport", "run_layer", "quantize_layer", "run_suite",
]
