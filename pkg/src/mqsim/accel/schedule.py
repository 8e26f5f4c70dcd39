"""Engine assignment and pipelined scheduling of a quantized network.

Each compute layer becomes one or two portions (MPMA and/or SAT). Portions run
tile by tile; the MPMA and the SAT each execute their portions in graph order.
A tile starts once its engine is free and the producer tiles it reads are done:

* pixel streaming: a PWConv/DWConv reading a conv-layout producer (possibly
  through ``add``/``concat``) needs only the producer pixels its tile touches;
* head streaming: a MatMul whose second operand comes straight from another
  MatMul needs only the same head of that producer;
* every other edge is a barrier on the whole producer portion.

Elementwise layers cost nothing and are looked through. With pipelining off
the layers run back to back and a layer takes as long as its slowest portion.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..netgraph.layers import ConfigError, LayerKind, LayerSpec, NetworkGraph
from ..quant.plan import QuantPlan
from .config import HardwareConfig
from .cycles import Engine, EngineWork, cycles_mpma_merged, cycles_mpma_single, cycles_sat, matmul_dims

STREAM_OPS = ("add", "concat")
UNITS = ("MPMA", "SAT")


@dataclass(frozen=True)
class EngineAssignment:
    """Engine mapping of one compute layer; counts are per group (conv group or head)."""

    layer_id: int
    engine: str
    uniform_filters: tuple = ()
    apot_filters: tuple = ()
    dw_bits: int = 0

    @property
    def n_uniform(self) -> int:
        return int(sum(self.uniform_filters))

    @property
    def n_apot(self) -> int:
        return int(sum(self.apot_filters))


def assign_engines(graph: NetworkGraph, plan: QuantPlan | None) -> dict:
    """EngineAssignment for every DWConv/PWConv/MatMul of ``graph``.

    DWConvs go to MPMA single mode (merged mode when wider than 4 bits),
    uniform filters to MPMA merged mode and APoT filters to the SAT. The
    unquantized normalizer MatMuls run on MPMA merged mode.
    """
    out = {}
    for layer in graph.layers:
        if layer.kind is LayerKind.ELEMENTWISE:
            continue
        entry = plan.layers.get(layer.id) if plan is not None else None
        if layer.kind is LayerKind.DWCONV:
            if entry is None:
                raise ConfigError(f"layer {layer.id}: plan has no entry for this DWConv")
            engine = Engine.MPMA_SINGLE if entry.weight_bits <= 4 else Engine.MPMA_MERGED
            out[layer.id] = EngineAssignment(layer.id, engine.value, dw_bits=entry.weight_bits)
            continue
        g = matmul_dims(layer)[0]
        per = layer.filters if layer.kind is LayerKind.MATMUL else layer.filters // g
        if not layer.quantized:
            out[layer.id] = EngineAssignment(layer.id, Engine.MPMA_MERGED.value, (per,) * g, (0,) * g)
            continue
        if entry is None:
            raise ConfigError(f"layer {layer.id}: plan has no entry for this layer")
        if entry.n_filters != g * per:
            raise ConfigError(f"layer {layer.id}: plan covers {entry.n_filters} filters, layer has {g * per}")
        apot = entry.apot_mask.reshape(g, per).sum(axis=1)
        uni = per - apot
        if apot.sum() == 0:
            engine = Engine.MPMA_MERGED.value
        elif uni.sum() == 0:
            engine = Engine.SAT.value
        else:
            engine = "split"
        out[layer.id] = EngineAssignment(layer.id, engine, tuple(int(v) for v in uni), tuple(int(v) for v in apot))
    return out


def layer_work(layer: LayerSpec, assignment: EngineAssignment, cfg: HardwareConfig) -> list:
    """Non-empty engine portions of one layer."""
    if layer.kind is LayerKind.DWCONV:
        return [cycles_mpma_single(layer, cfg, assignment.dw_bits)]
    parts = []
    if assignment.n_uniform:
        parts.append(cycles_mpma_merged(layer, np.array(assignment.uniform_filters), cfg))
    if assignment.n_apot:
        parts.append(cycles_sat(layer, np.array(assignment.apot_filters), cfg))
    return parts


@dataclass(frozen=True)
class TraceRecord:
    layer_id: int
    engine: Engine
    start_cycle: int
    end_cycle: int
    work: EngineWork

    @property
    def unit(self) -> str:
        return self.engine.unit

    def row(self) -> dict:
        w = self.work
        reads = {"4bit": 0, "8bit": 0, "apot": 0, "other": 0}
        if w.engine is Engine.SAT:
            reads["apot"] = w.weight_reads
        elif w.weight_bits in (4, 8):
            reads[f"{w.weight_bits}bit"] = w.weight_reads
        else:
            reads["other"] = w.weight_reads
        return {
            "layer_id": self.layer_id,
            "engine": self.engine.value,
            "start_cycle": self.start_cycle,
            "end_cycle": self.end_cycle,
            "busy_cycles": w.cycles,
            "mac_count": w.macs,
            "shift_op_count": w.shift_ops,
            "weight_bits": w.weight_bits,
            "weight_reads_4bit": reads["4bit"],
            "weight_reads_8bit": reads["8bit"],
            "weight_reads_apot": reads["apot"],
            "weight_reads_other": reads["other"],
            "act_reads": w.act_reads,
            "out_writes": w.out_writes,
        }


@dataclass(frozen=True)
class ScheduleTrace:
    network: str
    records: tuple
    makespan: int
    pipelined: bool = True

    def busy(self, unit: str) -> int:
        return sum(r.work.cycles for r in self.records if r.unit == unit)

    @property
    def total_macs(self) -> int:
        return sum(r.work.macs for r in self.records)

    @property
    def layer_cycles(self) -> dict:
        """Per-layer stage latency: the slowest portion of each layer."""
        out = {}
        for r in self.records:
            out[r.layer_id] = max(out.get(r.layer_id, 0), r.work.cycles)
        return out

    def rows(self) -> list:
        return [r.row() for r in self.records]


def _compute_sources(graph: NetworkGraph, layer_id: int) -> list:
    """(compute producer id, streams) pairs reached through elementwise layers."""
    by_id = graph.by_id
    out = []
    stack = [(layer_id, True)]
    seen = set()
    while stack:
        lid, streams = stack.pop()
        layer = by_id[lid]
        if layer.kind is not LayerKind.ELEMENTWISE:
            out.append((lid, streams))
            continue
        keep = streams and layer.op in STREAM_OPS
        for p in layer.producer_ids:
            if (p, keep) not in seen:
                seen.add((p, keep))
                stack.append((p, keep))
    return out


def dependencies(graph: NetworkGraph, layer: LayerSpec) -> list:
    """(producer id, kind) for a compute layer; kind is 'pixel', 'head' or 'barrier'."""
    by_id = graph.by_id
    deps = {}

    def add(pid, kind):
        # a producer reached both ways keeps the stricter constraint
        if deps.get(pid) == "barrier":
            return
        deps[pid] = "barrier" if pid in deps and deps[pid] != kind else kind

    for slot, p in enumerate(layer.producer_ids):
        src = by_id[p]
        if layer.kind is LayerKind.MATMUL:
            if slot == 1 and src.kind is LayerKind.MATMUL and src.groups == layer.groups:
                add(p, "head")
                continue
            for pid, _ in _compute_sources(graph, p):
                add(pid, "barrier")
            continue
        for pid, streams in _compute_sources(graph, p):
            prod = by_id[pid]
            ok = streams and prod.kind in (LayerKind.PWCONV, LayerKind.DWCONV)
            ok = ok and tuple(prod.output_shape[1:]) == tuple(layer.input_shape[1:])
            add(pid, "pixel" if ok else "barrier")
    return sorted(deps.items())


def pixel_needs(layer: LayerSpec, tile_pixels: int) -> np.ndarray:
    """Largest producer raster index read by each consumer tile of ``tile_pixels`` output pixels."""
    _, h, w = layer.input_shape
    ho, wo = layer.spatial_out
    s = layer.stride
    pix = np.arange(ho * wo)
    oy, ox = pix // wo, pix % wo
    if layer.kind is LayerKind.DWCONV:
        ph, pw = layer.padding
        iy = np.minimum(oy * s + ph, h - 1)
        ix = np.minimum(ox * s + pw, w - 1)
    else:
        iy, ix = oy * s, ox * s
    need = iy * w + ix
    n = -(-need.size // tile_pixels)
    padded = np.full(n * tile_pixels, -1, dtype=np.int64)
    padded[: need.size] = need
    return padded.reshape(n, tile_pixels).max(axis=1)


def _ready(layer, work, deps, finished):
    n = work.n_tiles
    ready = np.zeros(n, dtype=np.int64)
    for pid, kind in deps:
        for pw in finished.get(pid, ()):
            fin = pw[1]
            if fin.size == 0:
                continue
            if kind == "barrier":
                ready = np.maximum(ready, fin[-1])
            elif kind == "head":
                ready = np.maximum(ready, fin)
            else:
                need = pixel_needs(layer, work.tile_pixels)
                ready = np.maximum(ready, fin[need // pw[0].tile_pixels])
    return ready


def tile_finish_times(free: int, ready, tile_cycles) -> np.ndarray:
    """Finish time of every tile: ``e_j = max(e_{j-1}, ready_j) + tau_j`` with ``e_{-1} = free``."""
    tau = np.asarray(tile_cycles, dtype=np.int64)
    c = np.cumsum(tau)
    slack = np.maximum.accumulate(np.asarray(ready, dtype=np.int64) - (c - tau))
    return c + np.maximum(free, slack)


def schedule_pipeline(graph: NetworkGraph, plan: QuantPlan | None, cfg: HardwareConfig, *, pipeline: bool = True,
                      assignments: dict | None = None) -> ScheduleTrace:
    """Schedule every compute layer of ``graph`` on one core."""
    if plan is not None and plan.network != graph.name:
        raise ConfigError(f"plan is for {plan.network!r}, graph is {graph.name!r}")
    if assignments is None:
        assignments = assign_engines(graph, plan)
    records = []
    if not pipeline:
        t = 0
        for layer in graph.layers:
            if layer.id not in assignments:
                continue
            works = layer_work(layer, assignments[layer.id], cfg)
            for w in works:
                records.append(TraceRecord(layer.id, w.engine, t, t + w.cycles, w))
            t += max((w.cycles for w in works), default=0)
        return ScheduleTrace(graph.name, tuple(records), t, pipelined=False)

    free = {u: 0 for u in UNITS}
    finished = {}
    for layer in graph.layers:
        if layer.id not in assignments:
            continue
        deps = dependencies(graph, layer)
        done = []
        for w in layer_work(layer, assignments[layer.id], cfg):
            unit = w.engine.unit
            if w.n_tiles == 0:
                continue
            ready = _ready(layer, w, deps, finished)
            fin = tile_finish_times(free[unit], ready, w.tile_cycles)
            start = int(fin[0] - w.tile_cycles[0])
            end = int(fin[-1])
            assert start >= free[unit] and end - start >= w.cycles, "dependence or engine overlap"
            free[unit] = end
            records.append(TraceRecord(layer.id, w.engine, start, end, w))
            done.append((w, fin))
        finished[layer.id] = done
    makespan = max((r.end_cycle for r in records), default=0)
    return ScheduleTrace(graph.name, tuple(records), int(makespan), pipelined=True)


TRACE_FIELDS = (
    "layer_id", "engine", "start_cycle", "end_cycle", "busy_cycles", "mac_count", "shift_op_count",
    "weight_bits", "weight_reads_4bit", "weight_reads_8bit", "weight_reads_apot", "weight_reads_other",
    "act_reads", "out_writes",
)


def trace_to_json(trace: ScheduleTrace) -> dict:
    return {
        "format": "mqsim-trace/1",
        "network": trace.network,
        "pipelined": trace.pipelined,
        "makespan_cycles": trace.makespan,
        "records": trace.rows(),
    }


def trace_to_csv(trace: ScheduleTrace) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=TRACE_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(trace.rows())
    return buf.getvalue()


def write_trace(trace: ScheduleTrace, path, fmt: str = "json") -> Path:
    path = Path(path)
    if fmt == "csv":
        path.write_text(trace_to_csv(trace))
    else:
        path.write_text(json.dumps(trace_to_json(trace), indent=1) + "\n")
    return path
