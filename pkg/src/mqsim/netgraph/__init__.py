from .efficientvit import SUPPORTED, VARIANTS, HybridConfig, build_efficientvit, build_hybrid
from .layers import (
    Activation,
    ConfigError,
    LayerCategory,
    LayerKind,
    LayerSpec,
    NetworkGraph,
    NotQuantizableError,
    layer_category,
    layer_macs,
    output_shape,
    weight_shape,
)
from .validate import Violation, validate_graph

__all__ = [
    "Activation",
    "ConfigError",
    "HybridConfig",
    "LayerCategory",
    "LayerKind",
    "LayerSpec",
    "NetworkGraph",
    "NotQuantizableError",
    "SUPPORTED",
    "VARIANTS",
    "Violation",
    "build_efficientvit",
    "build_hybrid",
    "layer_category",
    "layer_macs",
    "output_shape",
    "validate_graph",
    "weight_shape",
]
