"""EfficientViT-style graph builders.

The stage tables below are a reconstruction (widths, depths, head sizes and
attention head dimension per variant), not a copy of any released checkpoint.
Non-linearities other than ReLU are represented as ReLU; normalization layers
are assumed folded into the adjacent convolutions.
"""
from __future__ import annotations

from dataclasses import dataclass

from .layers import Activation, ConfigError, LayerKind, LayerSpec, NetworkGraph


@dataclass(frozen=True)
class HybridConfig:
    widths: tuple
    depths: tuple
    head_dim: int
    expand: int = 4
    head_widths: tuple = ()
    num_classes: int = 1000
    attn_kernel: int = 5
    stem_kernel: int = 3


VARIANTS = {
    "B1": HybridConfig(widths=(16, 32, 64, 128, 256), depths=(1, 2, 3, 3, 4), head_dim=16, head_widths=(1536, 1600)),
    "B2": HybridConfig(widths=(24, 48, 96, 192, 384), depths=(1, 3, 4, 4, 6), head_dim=32, head_widths=(2304, 2560)),
}

# variant/resolution pairs evaluated in the reference comparison tables
SUPPORTED = {("B1", 224), ("B1", 256), ("B1", 288), ("B2", 224)}


class _Builder:
    def __init__(self, input_shape):
        self.layers = []
        self.input_shape = tuple(input_shape)

    def shape(self, lid):
        if lid is None:
            return self.input_shape
        return self.layers[lid].output_shape

    def add(self, kind, producers, name, **kw):
        producers = tuple(p for p in producers if p is not None)
        src = producers[0] if producers else None
        shape = self.shape(src)
        if kind is LayerKind.MATMUL:
            shape = shape[1:]
            kw.setdefault("groups", self.shape(src)[0])
        layer = LayerSpec(id=len(self.layers), kind=kind, input_shape=shape, producer_ids=producers, name=name, **kw)
        self.layers.append(layer)
        return layer.id

    def pw(self, x, out, name, act=Activation.NONE, groups=1):
        return self.add(LayerKind.PWCONV, (x,), name, filters=out, activation=act, groups=groups)

    def dw(self, x, name, kernel=3, stride=1, act=Activation.NONE):
        c = self.shape(x)[0]
        return self.add(LayerKind.DWCONV, (x,), name, kernel=(kernel, kernel), filters=c, stride=stride, activation=act)

    def ew(self, op, producers, name, act=Activation.NONE, **attrs):
        kw = {}
        if op == "im2col":
            kw = {"kernel": (attrs.pop("kernel"),) * 2, "stride": attrs.pop("stride")}
        return self.add(LayerKind.ELEMENTWISE, producers, name, op=op, attrs=attrs, activation=act, **kw)

    def matmul(self, a, b, filters, name, quantized=True, act=Activation.NONE, **attrs):
        return self.add(LayerKind.MATMUL, (a, b), name, filters=filters, quantized=quantized, attrs=attrs, activation=act)


def _mbconv(b, x, out, stride, expand, name, residual):
    c = b.shape(x)[0]
    h = b.pw(x, c * expand, f"{name}.inverted", act=Activation.RELU)
    h = b.dw(h, f"{name}.depth", stride=stride, act=Activation.RELU)
    h = b.pw(h, out, f"{name}.point")
    if residual:
        h = b.ew("add", (h, x), f"{name}.add")
    return h


def _dsconv(b, x, out, name):
    h = b.dw(x, f"{name}.depth", act=Activation.RELU)
    h = b.pw(h, out, f"{name}.point")
    return b.ew("add", (h, x), f"{name}.add")


def _lite_attention(b, x, dim, kernel, name):
    """ReLU linear attention split into projections and per-head MatMuls."""
    c, hgt, wid = b.shape(x)
    qkv = b.pw(x, 3 * c, f"{name}.qkv")
    agg = b.dw(qkv, f"{name}.aggreg.depth", kernel=kernel)
    agg = b.pw(agg, 3 * c, f"{name}.aggreg.point", groups=3 * c // dim)
    cat = b.ew("concat", (qkv, agg), f"{name}.concat", channels=6 * c)
    q = b.ew("tokens", (cat,), f"{name}.q", act=Activation.RELU, part=0, dim=dim, transpose=False)
    kt = b.ew("tokens", (cat,), f"{name}.kT", act=Activation.RELU, part=1, dim=dim, transpose=True)
    v = b.ew("tokens", (cat,), f"{name}.v", part=2, dim=dim, transpose=False)
    kv = b.matmul(kt, v, dim, f"{name}.kv")
    ksum = b.matmul(kt, None, 1, f"{name}.ksum", quantized=False, operand="ones")
    num = b.matmul(q, kv, dim, f"{name}.qkv_out")
    den = b.matmul(q, ksum, 1, f"{name}.denom", quantized=False)
    out = b.ew("normalize", (num, den), f"{name}.normalize", eps=1.0e-15)
    out = b.ew("spatial", (out,), f"{name}.spatial", height=hgt, width=wid)
    out = b.pw(out, c, f"{name}.proj")
    return b.ew("add", (out, x), f"{name}.add")


def build_hybrid(cfg: HybridConfig, resolution: int, name: str = "hybrid") -> NetworkGraph:
    """Build a hybrid network graph from a stage table at a square resolution."""
    if resolution < 32 or resolution % 32:
        raise ConfigError(f"resolution must be a positive multiple of 32, got {resolution}")
    if len(cfg.widths) != 5 or len(cfg.depths) != 5:
        raise ConfigError("stage tables need five widths and five depths")
    b = _Builder((3, resolution, resolution))
    w0 = cfg.widths[0]

    x = b.ew("im2col", (None,), "stem.im2col", kernel=cfg.stem_kernel, stride=2)
    x = b.pw(x, w0, "stem.conv", act=Activation.RELU)
    for i in range(cfg.depths[0]):
        x = _dsconv(b, x, w0, f"stem.ds{i}")

    for s in (1, 2):
        for i in range(cfg.depths[s]):
            stride = 2 if i == 0 else 1
            x = _mbconv(b, x, cfg.widths[s], stride, cfg.expand, f"stage{s}.mb{i}", residual=stride == 1)

    for s in (3, 4):
        x = _mbconv(b, x, cfg.widths[s], 2, cfg.expand, f"stage{s}.down", residual=False)
        for i in range(cfg.depths[s]):
            x = _lite_attention(b, x, cfg.head_dim, cfg.attn_kernel, f"stage{s}.vit{i}.context")
            x = _mbconv(b, x, cfg.widths[s], 1, cfg.expand, f"stage{s}.vit{i}.local", residual=True)

    if cfg.head_widths:
        x = b.pw(x, cfg.head_widths[0], "head.conv", act=Activation.RELU)
        x = b.ew("pool", (x,), "head.pool")
        for j, width in enumerate(cfg.head_widths[1:]):
            x = b.pw(x, width, f"head.fc{j}", act=Activation.RELU)
        b.pw(x, cfg.num_classes, "head.classifier")

    return NetworkGraph(name=name, input_resolution=(resolution, resolution), input_shape=(3, resolution, resolution), layers=b.layers)


def build_efficientvit(variant: str, resolution: int) -> NetworkGraph:
    variant = str(variant).upper()
    if (variant, int(resolution)) not in SUPPORTED:
        raise ConfigError(f"unsupported variant/resolution {variant}-R{resolution}; choose from {sorted(SUPPORTED)}")
    return build_hybrid(VARIANTS[variant], int(resolution), name=f"EfficientViT-{variant}-R{resolution}")
