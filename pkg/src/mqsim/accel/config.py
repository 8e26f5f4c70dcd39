"""Accelerator instance description and per-operation energy table."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..netgraph.layers import ConfigError

DEFAULT_FREQUENCY = 500e6

# unit dynamic powers (mW) of the computing units and weight buffers
POWER_MUL = 2.54e-2
POWER_SHIFT_UNIT = 1.06e-2
POWER_BUFFERS_TOTAL = 18.2012

# weight bits fetched per cycle by all cores in mixed mode at full activity:
# 72 8-bit MPMA weights plus 72 6-bit APoT weights per core, 16 cores
_FULL_ACTIVITY_BITS = (72 * 8 + 72 * 6) * 16


def _per_op(power_mw: float, frequency: float) -> float:
    return power_mw * 1e-3 / frequency


@dataclass(frozen=True)
class UnitEnergyTable:
    """Energy per operation in joules (relative units)."""

    e_mul_8x8: float
    e_mul_4x8: float
    e_shift_unit: float
    e_buf_4bit: float
    e_buf_8bit: float
    e_buf_apot: float
    e_act_buf: float

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) >= 0:
                raise ConfigError(f"unit energy {f.name} must be >= 0")

    @classmethod
    def default(cls, frequency: float = DEFAULT_FREQUENCY) -> "UnitEnergyTable":
        e_mul = _per_op(POWER_MUL, frequency)
        e_bit = _per_op(POWER_BUFFERS_TOTAL, frequency) / _FULL_ACTIVITY_BITS
        return cls(
            e_mul_8x8=e_mul,
            e_mul_4x8=e_mul / 2,
            e_shift_unit=_per_op(POWER_SHIFT_UNIT, frequency),
            e_buf_4bit=4 * e_bit,
            e_buf_8bit=8 * e_bit,
            e_buf_apot=6 * e_bit,
            e_act_buf=8 * e_bit,
        )

    def weight_read(self, bits: int) -> float:
        """Energy of one uniform weight read at ``bits``, linear between the 4- and 8-bit rows."""
        if bits == 4:
            return self.e_buf_4bit
        if bits == 8:
            return self.e_buf_8bit
        return self.e_buf_4bit + (bits - 4) * (self.e_buf_8bit - self.e_buf_4bit) / 4

    def scaled(self, k: float) -> "UnitEnergyTable":
        return UnitEnergyTable(**{f.name: getattr(self, f.name) * k for f in fields(self)})


@dataclass(frozen=True)
class HardwareConfig:
    R: int = 3
    M: int = 3
    T: int = 16
    N: int = 9
    S_tiles: int = 8
    L: int = 16
    frequency: float = DEFAULT_FREQUENCY
    unit_energy: UnitEnergyTable = field(default_factory=UnitEnergyTable.default)

    def __post_init__(self):
        for name in ("R", "M", "T", "N", "S_tiles", "L"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.T % 2:
            raise ConfigError(f"T must be even (merged mode pairs tiles), got {self.T}")
        if not self.frequency > 0:
            raise ConfigError("frequency must be positive")

    @property
    def merged_macs_per_cycle(self) -> int:
        return self.R * self.M * (self.T // 2)

    @property
    def sat_macs_per_cycle(self) -> int:
        return self.N * self.S_tiles

    @property
    def peak_ops(self) -> float:
        """Peak ops/s with merged MPMA and SAT both busy on every core."""
        return 2.0 * (self.merged_macs_per_cycle + self.sat_macs_per_cycle) * self.L * self.frequency

    def with_(self, **changes) -> "HardwareConfig":
        return replace(self, **changes)


def config_to_json(cfg: HardwareConfig) -> dict:
    d = asdict(cfg)
    d["unit_energy"] = asdict(cfg.unit_energy)
    return d


def config_from_json(doc: dict) -> HardwareConfig:
    if not isinstance(doc, dict):
        raise ConfigError("hardware config must be a JSON object")
    known = {f.name for f in fields(HardwareConfig)}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown hardware config fields: {sorted(extra)}")
    d = dict(doc)
    freq = float(d.get("frequency", DEFAULT_FREQUENCY))
    ue = d.pop("unit_energy", None)
    if ue is None:
        table = UnitEnergyTable.default(freq)
    else:
        base = asdict(UnitEnergyTable.default(freq))
        unknown = set(ue) - set(base)
        if unknown:
            raise ConfigError(f"unknown unit energy fields: {sorted(unknown)}")
        base.update({k: float(v) for k, v in ue.items()})
        table = UnitEnergyTable(**base)
    if "frequency" in d:
        d["frequency"] = freq
    return HardwareConfig(unit_energy=table, **d)


def read_config(path) -> HardwareConfig:
    return config_from_json(json.loads(Path(path).read_text()))


def write_config(cfg: HardwareConfig, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(config_to_json(cfg), indent=1) + "\n")
    return path
