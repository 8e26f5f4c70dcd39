"""Latency, energy, throughput and EDP from a schedule trace.

The ``L`` cores process different images of a batch, so one core's makespan
is the time to finish ``L`` images. Reported latency is the per-image share
of that batch time (``makespan / frequency / L``), which keeps
``throughput == 2 * MACs / latency``; ``frame_latency`` is the time one image
spends on its core. Energy is per image.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from ..netgraph.layers import NetworkGraph
from .config import HardwareConfig
from .cycles import Engine
from .schedule import ScheduleTrace

# row labels of the summary table
SUMMARY_ROWS = (
    ("GFLOPs", "gflops", "{:.3f}"),
    ("Throughput (GOPS)", "throughput_gops", "{:.1f}"),
    ("Energy Efficiency (GOPS/W)", "energy_efficiency_gops_w", "{:.1f}"),
    ("Latency (ms)", "latency_ms", "{:.4f}"),
    ("Energy (mJ)", "energy_mj", "{:.6f}"),
    ("EDP (mJ·ms)", "edp_mj_ms", "{:.6g}"),
)


@dataclass(frozen=True)
class EnergyBreakdown:
    mul_8x8: float = 0.0
    mul_4x8: float = 0.0
    shift: float = 0.0
    weight_buffer: float = 0.0
    weight_buffer_dw: float = 0.0
    act_buffer: float = 0.0

    @property
    def compute(self) -> float:
        return self.mul_8x8 + self.mul_4x8 + self.shift

    @property
    def total(self) -> float:
        return self.compute + self.weight_buffer + self.act_buffer


@dataclass(frozen=True)
class CostReport:
    network: str
    macs: int
    makespan_cycles: int
    latency: float
    frame_latency: float
    energy: float
    compute_energy: float
    throughput: float
    energy_efficiency: float
    edp: float
    utilization: float
    breakdown: EnergyBreakdown

    @property
    def ops(self) -> int:
        return 2 * self.macs

    def summary(self) -> dict:
        return {
            "gflops": self.ops / 1e9,
            "throughput_gops": self.throughput / 1e9,
            "energy_efficiency_gops_w": self.energy_efficiency / 1e9,
            "latency_ms": self.latency * 1e3,
            "energy_mj": self.energy * 1e3,
            "edp_mj_ms": self.edp * 1e6,
        }


def energy_breakdown(trace: ScheduleTrace, graph: NetworkGraph, cfg: HardwareConfig) -> EnergyBreakdown:
    ue = cfg.unit_energy
    by_id = graph.by_id
    acc = {f.name: 0.0 for f in fields(EnergyBreakdown)}
    for r in trace.records:
        w = r.work
        if w.engine is Engine.MPMA_SINGLE:
            acc["mul_4x8"] += w.macs * ue.e_mul_4x8
        elif w.engine is Engine.MPMA_MERGED:
            acc["mul_8x8"] += w.macs * ue.e_mul_8x8
        acc["shift"] += w.shift_ops * ue.e_shift_unit
        e_w = ue.e_buf_apot if w.engine is Engine.SAT else ue.weight_read(w.weight_bits)
        acc["weight_buffer"] += w.weight_reads * e_w
        if by_id[r.layer_id].kind.value == "DWConv":
            acc["weight_buffer_dw"] += w.weight_reads * e_w
        acc["act_buffer"] += (w.act_reads + w.out_writes) * ue.e_act_buf
    return EnergyBreakdown(**acc)


def cost_report(trace: ScheduleTrace, graph: NetworkGraph, cfg: HardwareConfig) -> CostReport:
    """Per-image latency, energy, throughput and EDP of ``trace``."""
    br = energy_breakdown(trace, graph, cfg)
    macs = trace.total_macs
    frame = trace.makespan / cfg.frequency
    latency = frame / cfg.L
    energy = br.total
    ops = 2 * macs
    throughput = ops / latency if latency > 0 else 0.0
    peak_cycles = macs / (cfg.merged_macs_per_cycle + cfg.sat_macs_per_cycle)
    return CostReport(
        network=trace.network,
        macs=macs,
        makespan_cycles=trace.makespan,
        latency=latency,
        frame_latency=frame,
        energy=energy,
        compute_energy=br.compute,
        throughput=throughput,
        energy_efficiency=ops / energy if energy > 0 else 0.0,
        edp=energy * latency,
        utilization=peak_cycles / trace.makespan if trace.makespan else 0.0,
        breakdown=br,
    )


def report_to_json(report: CostReport) -> dict:
    d = asdict(report)
    d["format"] = "mqsim-cost/1"
    d["ops"] = report.ops
    d["breakdown"]["compute"] = report.breakdown.compute
    d["summary"] = report.summary()
    return d


REPORT_FIELDS = (
    "network", "macs", "makespan_cycles", "latency", "frame_latency", "energy", "compute_energy",
    "throughput", "energy_efficiency", "edp", "utilization",
)


def report_to_csv(reports) -> str:
    if not isinstance(reports, (list, tuple)):
        reports = [reports]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_FIELDS)
    for r in reports:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, k) for k in REPORT_FIELDS)])
    return buf.getvalue()


def summary_table(report: CostReport) -> str:
    s = report.summary()
    width = max(len(name) for name, _, _ in SUMMARY_ROWS)
    lines = [f"{'Model':<{width}}  {report.network}"]
    for name, key, fmt in SUMMARY_ROWS:
        lines.append(f"{name:<{width}}  {fmt.format(s[key])}")
    return "\n".join(lines)


def write_report(report: CostReport, path, fmt: str = "json") -> Path:
    path = Path(path)
    if fmt == "csv":
        path.write_text(report_to_csv(report))
    else:
        path.write_text(json.dumps(report_to_json(report), indent=1) + "\n")
    return path
