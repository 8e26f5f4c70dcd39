"""Closed-form cycle and access counts for the MPMA and SAT engines.

Loop orders fixed by the model:

* DWConv (MPMA single mode): pixel groups of ``T`` output pixels outermost,
  then channel groups of ``M``, kernel row groups of ``R``, kernel columns.
  With weights wider than 4 bits the layer runs in merged mode and a pixel
  group holds ``T/2`` pixels.
* PWConv (MPMA merged / SAT): output pixels outermost, then conv groups,
  filter groups of ``T/2`` (MPMA) or ``S_tiles`` (SAT), channel groups of
  ``R*M`` (MPMA) or ``N`` (SAT).
* MatMul: heads outermost, then output rows, then the PWConv inner loops.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..netgraph.layers import ConfigError, LayerKind, LayerSpec
from .config import HardwareConfig

SINGLE_MODE_MAX_BITS = 4


class Engine(str, enum.Enum):
    MPMA_SINGLE = "MPMA_single"
    MPMA_MERGED = "MPMA_merged"
    SAT = "SAT"

    @property
    def unit(self) -> str:
        """Physical engine the mode runs on."""
        return "SAT" if self is Engine.SAT else "MPMA"


def ceil_div(a, b):
    return -(-a // b)


@dataclass(frozen=True)
class EngineWork:
    """Cycles, op counts and buffer traffic of one layer portion on one engine.

    The portion runs as ``len(tile_cycles)`` consecutive tiles. ``tile_pixels``
    is the number of output pixels per tile for pixel tiling (0 for head tiling).
    """

    engine: Engine
    cycles: int
    macs: int
    shift_ops: int
    weight_bits: int
    weight_reads: int
    act_reads: int
    out_writes: int
    filters: int
    tile_cycles: np.ndarray = field(repr=False)
    tile_pixels: int = 0

    @property
    def n_tiles(self) -> int:
        return int(self.tile_cycles.size)


def _empty(engine, weight_bits):
    return EngineWork(engine, 0, 0, 0, weight_bits, 0, 0, 0, 0, np.zeros(0, dtype=np.int64), 0)


def dw_act_reads(layer: LayerSpec, pixels_per_group: int, rows_per_group: int) -> int:
    """Distinct in-bounds input elements read per (pixel group, kernel row group), summed, times channels."""
    c, h, w = layer.input_shape
    kh, kw = layer.kernel
    ph, pw = layer.padding
    ho, wo = layer.spatial_out
    s = layer.stride
    pix = np.arange(ho * wo)
    oy, ox = pix // wo, pix % wo
    grp = pix // pixels_per_group
    total = 0
    for r0 in range(0, kh, rows_per_group):
        ki = np.arange(r0, min(kh, r0 + rows_per_group))
        kj = np.arange(kw)
        iy = oy[:, None, None] * s + ki[None, :, None] - ph
        ix = ox[:, None, None] * s + kj[None, None, :] - pw
        iy, ix = np.broadcast_arrays(iy, ix)
        ok = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
        g = np.broadcast_to(grp[:, None, None], ok.shape)[ok]
        key = g.astype(np.int64) * (h * w) + (iy[ok] * w + ix[ok])
        total += np.unique(key).size
    return int(total) * c


def cycles_mpma_single(layer: LayerSpec, cfg: HardwareConfig, bits: int = SINGLE_MODE_MAX_BITS) -> EngineWork:
    """DWConv on the MPMA (single mode at <= 4-bit weights, merged mode above)."""
    if layer.kind is not LayerKind.DWCONV:
        raise ConfigError(f"layer {layer.id}: MPMA single mode runs DWConv only, got {layer.kind.value}")
    merged = bits > SINGLE_MODE_MAX_BITS
    lanes = cfg.T // 2 if merged else cfg.T
    c = layer.filters
    kh, kw = layer.kernel
    p = layer.out_pixels
    per_group = ceil_div(c, cfg.M) * ceil_div(kh, cfg.R) * kw
    n = ceil_div(p, lanes)
    return EngineWork(
        engine=Engine.MPMA_MERGED if merged else Engine.MPMA_SINGLE,
        cycles=n * per_group,
        macs=layer.macs,
        shift_ops=0,
        weight_bits=bits,
        weight_reads=c * kh * kw,
        act_reads=dw_act_reads(layer, lanes, cfg.R),
        out_writes=c * p,
        filters=c,
        tile_cycles=np.full(n, per_group, dtype=np.int64),
        tile_pixels=lanes,
    )


def matmul_dims(layer: LayerSpec):
    """(groups, contraction length per group, output pixels or rows per group)."""
    if layer.kind is LayerKind.PWCONV:
        return layer.groups, layer.in_channels, layer.out_pixels
    if layer.kind is LayerKind.MATMUL:
        g, rows, cols = layer.tensor_shape
        return g, cols, rows
    raise ConfigError(f"layer {layer.id}: expected PWConv or MatMul, got {layer.kind.value}")


def split_filters(total: int, groups: int) -> np.ndarray:
    """Spread ``total`` filters over groups; earlier groups take the remainder."""
    base = np.full(groups, total // groups, dtype=np.int64)
    base[: total % groups] += 1
    return base


def _per_group(layer, filters):
    g, _, _ = matmul_dims(layer)
    if np.ndim(filters) == 0:
        counts = split_filters(int(filters), g)
    else:
        counts = np.asarray(filters, dtype=np.int64)
        if counts.shape != (g,):
            raise ConfigError(f"layer {layer.id}: need {g} per-group filter counts, got {counts.shape}")
    per = layer.filters if layer.kind is LayerKind.MATMUL else layer.filters // g
    if np.any(counts < 0) or np.any(counts > per):
        raise ConfigError(f"layer {layer.id}: per-group filter counts outside [0, {per}]")
    return counts


def _filter_parallel(layer, counts, cfg, engine, lanes_c, lanes_f, weight_bits):
    g, cg, p = matmul_dims(layer)
    total = int(counts.sum())
    if total == 0:
        return _empty(engine, weight_bits)
    fgroups = ceil_div(counts, lanes_f)
    group_cycles = ceil_div(cg, lanes_c) * fgroups
    macs = total * cg * p
    if layer.kind is LayerKind.MATMUL:
        tiles = group_cycles * p
        tile_pixels = 0
    else:
        tiles = np.full(p, int(group_cycles.sum()), dtype=np.int64)
        tile_pixels = 1
    return EngineWork(
        engine=engine,
        cycles=int(group_cycles.sum()) * p,
        macs=macs,
        shift_ops=macs if engine is Engine.SAT else 0,
        weight_bits=weight_bits,
        weight_reads=macs,
        act_reads=int((cg * fgroups).sum()) * p,
        out_writes=total * p,
        filters=total,
        tile_cycles=np.asarray(tiles, dtype=np.int64),
        tile_pixels=tile_pixels,
    )


def cycles_mpma_merged(layer: LayerSpec, filters_uniform, cfg: HardwareConfig) -> EngineWork:
    """Uniform 8-bit filters of a PWConv/MatMul on MPMA merged mode.

    ``filters_uniform`` is a total (spread over groups) or one count per group.
    """
    if cfg.T % 2:
        raise ConfigError(f"merged mode needs an even tile count, got T={cfg.T}")
    counts = _per_group(layer, filters_uniform)
    return _filter_parallel(layer, counts, cfg, Engine.MPMA_MERGED, cfg.R * cfg.M, cfg.T // 2, 8)


def cycles_sat(layer: LayerSpec, filters_apot, cfg: HardwareConfig) -> EngineWork:
    """APoT filters of a PWConv/MatMul on the shifter/adder-tree engine."""
    counts = _per_group(layer, filters_apot)
    return _filter_parallel(layer, counts, cfg, Engine.SAT, cfg.N, cfg.S_tiles, 0)
