"""Layer IR for Convolution-Transformer hybrid networks.

Tensor layouts are fixed per kind. Convolutional tensors are ``(C, H, W)``.
Token tensors used by matrix multiplications are ``(G, rows, cols)`` where
``G`` is the head count. A MatMul layer stores its per-head operand shape in
``input_shape`` as ``(rows, cols)`` and its head count in ``groups``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping


class ConfigError(ValueError):
    """Invalid builder/variant/plan configuration."""


class NotQuantizableError(ValueError):
    """Raised for layers that carry no quantization-scheme choice."""


class LayerKind(str, enum.Enum):
    DWCONV = "DWConv"
    PWCONV = "PWConv"
    MATMUL = "MatMul"
    ELEMENTWISE = "Elementwise"


class Activation(str, enum.Enum):
    NONE = "none"
    RELU = "ReLU"


class LayerCategory(str, enum.Enum):
    COMPUTATION_INTENSIVE = "ComputationIntensive"
    MEMORY_INTENSIVE = "MemoryIntensive"


# Elementwise ops understood by shape inference and the float reference.
ELEMENTWISE_OPS = ("add", "concat", "tokens", "spatial", "normalize", "pool", "im2col")


def _frozen(attrs) -> Mapping:
    return MappingProxyType(dict(attrs or {}))


@dataclass(frozen=True)
class LayerSpec:
    id: int
    kind: LayerKind
    input_shape: tuple
    kernel: tuple = (1, 1)
    filters: int = 0
    stride: int = 1
    producer_ids: tuple = ()
    activation: Activation = Activation.NONE
    groups: int = 1
    op: str = ""
    attrs: Mapping = field(default_factory=dict)
    quantized: bool = True
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "kernel", tuple(int(v) for v in self.kernel))
        object.__setattr__(self, "producer_ids", tuple(int(v) for v in self.producer_ids))
        object.__setattr__(self, "attrs", _frozen(self.attrs))

    def __hash__(self):
        return hash((self.id, self.kind, self.input_shape, self.producer_ids))

    @property
    def padding(self) -> tuple:
        if self.kind is LayerKind.DWCONV:
            return (self.kernel[0] // 2, self.kernel[1] // 2)
        return (0, 0)

    @property
    def tensor_shape(self) -> tuple:
        """Shape of the primary input tensor as it flows between layers."""
        if self.kind is LayerKind.MATMUL:
            return (self.groups,) + self.input_shape
        return self.input_shape

    @property
    def weight_operand_shape(self) -> tuple:
        """Per-group shape of the second MatMul operand, (cols, filters)."""
        if self.kind is not LayerKind.MATMUL:
            raise ValueError("only MatMul layers take a second operand")
        return (self.input_shape[1], self.filters)

    @property
    def spatial_out(self) -> tuple:
        _, h, w = self.input_shape
        kh, kw = self.kernel
        ph, pw = self.padding
        return ((h + 2 * ph - kh) // self.stride + 1, (w + 2 * pw - kw) // self.stride + 1)

    @property
    def output_shape(self) -> tuple:
        return output_shape(self)

    @property
    def out_pixels(self) -> int:
        """Output positions per group: pixels for convs, rows for MatMul."""
        if self.kind is LayerKind.MATMUL:
            return self.input_shape[0]
        if self.kind in (LayerKind.DWCONV, LayerKind.PWCONV):
            ho, wo = self.spatial_out
            return ho * wo
        return 0

    @property
    def in_channels(self) -> int:
        """Reduction length feeding each output (per group)."""
        if self.kind is LayerKind.MATMUL:
            return self.input_shape[1]
        if self.kind is LayerKind.PWCONV:
            return self.input_shape[0] // self.groups
        if self.kind is LayerKind.DWCONV:
            return 1
        return 0

    @property
    def total_filters(self) -> int:
        """Filters across all groups (MatMul filters are per head)."""
        if self.kind is LayerKind.MATMUL:
            return self.filters * self.groups
        return self.filters

    @property
    def macs(self) -> int:
        return layer_macs(self)


def output_shape(layer: LayerSpec) -> tuple:
    kind = layer.kind
    if kind is LayerKind.PWCONV:
        ho, wo = layer.spatial_out
        return (layer.filters, ho, wo)
    if kind is LayerKind.DWCONV:
        ho, wo = layer.spatial_out
        return (layer.input_shape[0], ho, wo)
    if kind is LayerKind.MATMUL:
        return (layer.groups, layer.input_shape[0], layer.filters)
    return _elementwise_shape(layer)


def _elementwise_shape(layer: LayerSpec) -> tuple:
    op, a, shp = layer.op, layer.attrs, layer.input_shape
    if op in ("add", "normalize"):
        return shp
    if op == "concat":
        return (int(a["channels"]),) + shp[1:]
    if op == "tokens":
        c, h, w = shp
        dim = int(a["dim"])
        heads = c // (3 * dim)
        return (heads, dim, h * w) if a.get("transpose") else (heads, h * w, dim)
    if op == "spatial":
        g, n, d = shp
        return (g * d, int(a["height"]), int(a["width"]))
    if op == "pool":
        return (shp[0], 1, 1)
    if op == "im2col":
        c, h, w = shp
        kh, kw = layer.kernel
        ph, pw = kh // 2, kw // 2
        ho = (h + 2 * ph - kh) // layer.stride + 1
        wo = (w + 2 * pw - kw) // layer.stride + 1
        return (c * kh * kw, ho, wo)
    raise ConfigError(f"unknown elementwise op {op!r}")


def layer_macs(layer: LayerSpec) -> int:
    """Multiply-accumulate count from shapes alone."""
    kind = layer.kind
    if kind is LayerKind.PWCONV:
        ho, wo = layer.spatial_out
        return (layer.input_shape[0] // layer.groups) * layer.filters * ho * wo
    if kind is LayerKind.DWCONV:
        ho, wo = layer.spatial_out
        kh, kw = layer.kernel
        return layer.input_shape[0] * kh * kw * ho * wo
    if kind is LayerKind.MATMUL:
        rows, cols = layer.input_shape
        return layer.groups * rows * cols * layer.filters
    return 0


def layer_category(layer: LayerSpec) -> LayerCategory:
    if layer.kind is LayerKind.DWCONV:
        return LayerCategory.MEMORY_INTENSIVE
    if layer.kind in (LayerKind.PWCONV, LayerKind.MATMUL):
        return LayerCategory.COMPUTATION_INTENSIVE
    raise NotQuantizableError(f"layer {layer.id} ({layer.kind.value}) is not quantizable")


def weight_shape(layer: LayerSpec):
    """Static weight tensor shape, or None for layers without static weights."""
    if layer.kind is LayerKind.PWCONV:
        return (layer.filters, layer.input_shape[0] // layer.groups)
    if layer.kind is LayerKind.DWCONV:
        return (layer.input_shape[0],) + layer.kernel
    return None


@dataclass(frozen=True)
class NetworkGraph:
    name: str
    input_resolution: tuple
    input_shape: tuple
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_resolution", tuple(self.input_resolution))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def layer(self, layer_id: int) -> LayerSpec:
        return self.by_id[layer_id]

    @property
    def by_id(self) -> dict:
        return {l.id: l for l in self.layers}

    @property
    def total_macs(self) -> int:
        return sum(l.macs for l in self.layers)

    def consumers(self) -> dict:
        out = {l.id: [] for l in self.layers}
        for l in self.layers:
            for p in l.producer_ids:
                if p in out:
                    out[p].append(l.id)
        return out

    def quantizable(self):
        return [l for l in self.layers if l.kind is not LayerKind.ELEMENTWISE and l.quantized]
