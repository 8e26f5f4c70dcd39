from .config import HardwareConfig, UnitEnergyTable, config_from_json, config_to_json, read_config, write_config
from .cost import CostReport, EnergyBreakdown, cost_report, report_to_csv, report_to_json, summary_table, write_report
from .cycles import Engine, EngineWork, cycles_mpma_merged, cycles_mpma_single, cycles_sat, dw_act_reads
from .schedule import (
    EngineAssignment,
    ScheduleTrace,
    TraceRecord,
    assign_engines,
    dependencies,
    layer_work,
    schedule_pipeline,
    trace_to_csv,
    trace_to_json,
    write_trace,
)

__all__ = [name for name in dir() if not name.startswith("_")]
