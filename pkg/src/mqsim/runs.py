"""High-level runs shared by the CLI and the acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .accel.config import HardwareConfig
from .accel.cost import CostReport, cost_report, report_to_json
from .accel.schedule import ScheduleTrace, schedule_pipeline
from .execution.engine import weight_only_mse
from .netgraph.layers import ConfigError, LayerKind, NetworkGraph
from .netgraph.manifest import synthesize_weights
from .quant.plan import QuantPlan, assign_m2q, uniform_plan

HW_AXES = ("R", "M", "T", "N", "S_tiles", "L")
AXES = ("dw_bits", "ratio") + HW_AXES
DEFAULT_VALUES = {
    "dw_bits": (3, 4, 5, 6, 7, 8),
    "ratio": (0.0, 0.25, 0.5, 0.75, 1.0),
}
COMPARED = ("energy", "compute_energy", "latency", "edp", "throughput", "energy_efficiency")


def evaluation_inputs(graph: NetworkGraph, n: int, seed: int):
    """Seeded synthetic inputs kept apart from the calibration stream."""
    rng = np.random.default_rng([int(seed), 0xE7A1])
    return [rng.normal(size=graph.input_shape) for _ in range(n)]


@dataclass(frozen=True)
class Simulation:
    trace: ScheduleTrace
    report: CostReport


def simulate(graph: NetworkGraph, plan: QuantPlan, cfg: HardwareConfig | None = None, *, pipeline: bool = True) -> Simulation:
    cfg = cfg or HardwareConfig()
    trace = schedule_pipeline(graph, plan, cfg, pipeline=pipeline)
    return Simulation(trace, cost_report(trace, graph, cfg))


def compare_reports(mixed: CostReport, uniform: CostReport) -> dict:
    """Ratios (mixed / uniform) and deltas (mixed - uniform) of the headline metrics."""
    ratios, deltas = {}, {}
    for k in COMPARED:
        a, b = getattr(mixed, k), getattr(uniform, k)
        ratios[k] = a / b if b else None
        deltas[k] = a - b
    return {"ratios": ratios, "deltas": deltas}


@dataclass
class Comparison:
    network: str
    mixed: CostReport
    uniform: CostReport
    ratios: dict = field(default_factory=dict)
    deltas: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "network": self.network,
            "mixed": report_to_json(self.mixed),
            "uniform": report_to_json(self.uniform),
            "ratios": self.ratios,
            "deltas": self.deltas,
        }


def compare(graph, weights=None, cfg=None, *, ratio=0.5, bits_dw=4, seed=0, n_calib=2, pipeline=True,
            mixed_plan: QuantPlan | None = None) -> Comparison:
    """Mixed plan against the uniform 8-bit baseline on the same graph and hardware."""
    cfg = cfg or HardwareConfig()
    if weights is None:
        weights = synthesize_weights(graph, seed)
    if mixed_plan is None:
        mixed_plan = assign_m2q(graph, weights, ratio, bits_dw, seed=seed, n_calib=n_calib)
    base = uniform_plan(graph, weights, seed=seed, n_calib=n_calib)
    m = simulate(graph, mixed_plan, cfg, pipeline=pipeline).report
    u = simulate(graph, base, cfg, pipeline=pipeline).report
    return Comparison(graph.name, m, u, **compare_reports(m, u))


SWEEP_FIELDS = (
    "axis", "value", "error_proxy", "apot_fraction", "compute_energy", "energy", "dw_weight_buffer_energy",
    "latency", "edp", "throughput",
)


def sweep(graph, axis: str, values=None, weights=None, cfg=None, *, ratio=0.5, bits_dw=4, seed=0, n_calib=2,
          n_eval=2, pipeline=True) -> list:
    """One row per axis setting.

    The error proxy is the mean output MSE against the float network when
    only the weights the axis acts on are quantized: depthwise weights for
    ``dw_bits``, pointwise weights for ``ratio``. Hardware axes keep one plan,
    so their error proxy is the depthwise one of that plan.
    """
    if axis not in AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {AXES}")
    values = list(DEFAULT_VALUES.get(axis, ()) if values is None else values)
    if not values:
        raise ConfigError(f"sweep axis {axis!r} needs at least one value")
    cfg = cfg or HardwareConfig()
    if weights is None:
        weights = synthesize_weights(graph, seed)
    inputs = evaluation_inputs(graph, n_eval, seed)
    base_plan = None
    rows = []
    for v in values:
        if axis == "dw_bits":
            plan = assign_m2q(graph, weights, ratio, int(v), seed=seed, n_calib=n_calib)
            kinds, hw = (LayerKind.DWCONV,), cfg
        elif axis == "ratio":
            plan = assign_m2q(graph, weights, v, bits_dw, seed=seed, n_calib=n_calib)
            kinds, hw = (LayerKind.PWCONV,), cfg
        else:
            if base_plan is None:
                base_plan = assign_m2q(graph, weights, ratio, bits_dw, seed=seed, n_calib=n_calib)
            plan, kinds, hw = base_plan, (LayerKind.DWCONV,), cfg.with_(**{axis: int(v)})
        rep = simulate(graph, plan, hw, pipeline=pipeline).report
        rows.append({
            "axis": axis,
            "value": v,
            "error_proxy": weight_only_mse(graph, plan, inputs, weights, kinds) if graph.layers else 0.0,
            "apot_fraction": plan.achieved_ratio,
            "compute_energy": rep.compute_energy,
            "energy": rep.energy,
            "dw_weight_buffer_energy": rep.breakdown.weight_buffer_dw,
            "latency": rep.latency,
            "edp": rep.edp,
            "throughput": rep.throughput,
        })
    return rows
