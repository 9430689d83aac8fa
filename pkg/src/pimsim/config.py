"""Run configuration: flat dotted keys with the baseline machine as defaults.

A config file is a JSON object such as ``{"dpu.frequency_mhz": 700,
"mmu.enabled": true}``.  Unknown keys and ill-typed values are rejected.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .cache import CacheConfig, CacheGeometry
from .core import PipelineConfig
from .frontend.layout import KB, MB, AddressMap
from .memsys import DramTiming
from .vm import FaultMode, MmuConfig

ENV_VAR = "PIMSIM_CONFIG"

DEFAULTS: dict[str, object] = {
    "dpu.frequency_mhz": 350,
    "dpu.stages": 14,
    "dpu.revolver_spacing": 11,
    "dpu.reg_read_stage": 3,
    "dpu.writeback_stage": 14,
    "dpu.max_threads": 24,
    "ilp.forwarding": False,
    "ilp.unified_rf": False,
    "ilp.superscalar": False,
    "ilp.double_clock": False,
    "ilp.forward_distance": 5,
    "simt.lanes": 0,
    "simt.coalescing": False,
    "simt.starvation_cap": 4,
    "memory.wram_kb": 64,
    "memory.iram_kb": 24,
    "memory.mram_mb": 64,
    "memory.stack_per_thread": 2048,
    "memory.heap_bytes": 4096,
    "dram.tRCD": 16,
    "dram.tRAS": 39,
    "dram.tRP": 16,
    "dram.tCL": 16,
    "dram.tBL": 4,
    "dram.age_cap": 2000,
    "dma.scale": 1,
    "host.write_gbps": 0.296,
    "host.read_gbps": 0.063,
    "mmu.enabled": False,
    "mmu.mode": "interrupt",
    "mmu.handler_latency_us": 20.0,
    "mmu.poll_period_us": 10.0,
    "mmu.prefault": "all",
    "cache.enabled": False,
    "cache.icache": True,
    "cache.icache_kb": 24,
    "cache.dcache_kb": 64,
    "cache.ways": 8,
    "cache.line": 64,
    "cache.mshrs": 8,
    "cache.write_policy": "writeback",
    "stats.tlp_window": 10_000,
    "trace": False,
}

_CHOICES = {
    "mmu.mode": {"poll", "interrupt"},
    "mmu.prefault": {"all", "none"},
    "cache.write_policy": {"writeback"},
    "simt.lanes": {0, 2, 4, 8, 16},
    "dma.scale": {1, 2, 4},
}

# letters of the --ilp shorthand
ILP_FLAGS = {"D": "ilp.forwarding", "R": "ilp.unified_rf", "S": "ilp.superscalar", "F": "ilp.double_clock"}


class ConfigError(ValueError):
    pass


def _check(key: str, value):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects true/false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} expects an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        value = float(value)
    elif isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key} expects a string, got {value!r}")
    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError(f"{key} must be one of {sorted(_CHOICES[key])}, got {value!r}")
    return value


def parse_value(key: str, text: str):
    """Coerce a command-line ``key=value`` string using the default's type."""
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(text)
            return _check(key, low in ("true", "1", "yes", "on"))
        if isinstance(default, int):
            return _check(key, int(text, 0))
        if isinstance(default, float):
            return _check(key, float(text))
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc
    return _check(key, text)


@dataclass
class RunConfig:
    values: dict[str, object] = field(default_factory=lambda: dict(DEFAULTS))

    def __post_init__(self):
        merged = dict(DEFAULTS)
        for k, v in self.values.items():
            merged[k] = _check(k, v)
        self.values = merged
        self.validate()

    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, overrides: dict[str, object]) -> "RunConfig":
        return RunConfig({**self.values, **overrides})

    def with_ilp(self, letters: str) -> "RunConfig":
        return self.with_overrides(ilp_overrides(letters))

    def changed(self) -> dict[str, object]:
        """Keys that differ from the defaults."""
        return {k: v for k, v in sorted(self.values.items()) if DEFAULTS[k] != v}

    def to_dict(self) -> dict[str, object]:
        return dict(sorted(self.values.items()))

    def validate(self) -> None:
        v = self.values
        if not v["ilp.forwarding"] and v["dpu.reg_read_stage"] + v["dpu.revolver_spacing"] < v["dpu.writeback_stage"]:
            raise ConfigError(
                "dpu.reg_read_stage + dpu.revolver_spacing must be >= dpu.writeback_stage unless ilp.forwarding"
            )
        if v["dpu.frequency_mhz"] <= 0:
            raise ConfigError("dpu.frequency_mhz must be positive")
        if not 1 <= v["dpu.max_threads"] <= 24:
            raise ConfigError("dpu.max_threads must be in 1..24")
        for key in ("host.write_gbps", "host.read_gbps", "mmu.handler_latency_us", "mmu.poll_period_us"):
            if v[key] <= 0:
                raise ConfigError(f"{key} must be positive")
        try:
            self.cache_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- builders -----------------------------------------------------------

    @property
    def frequency_mhz(self) -> int:
        f = self.values["dpu.frequency_mhz"]
        return 2 * f if self.values["ilp.double_clock"] else f

    def pipeline(self) -> PipelineConfig:
        v = self.values
        return PipelineConfig(
            stages=v["dpu.stages"],
            revolver_spacing=v["dpu.revolver_spacing"],
            reg_read_stage=v["dpu.reg_read_stage"],
            writeback_stage=v["dpu.writeback_stage"],
            issue_width=2 if v["ilp.superscalar"] else 1,
            forwarding=v["ilp.forwarding"],
            unified_rf=v["ilp.unified_rf"],
            frequency_mhz=self.frequency_mhz,
            forward_distance=v["ilp.forward_distance"],
            simt_lanes=v["simt.lanes"],
            coalescing=v["simt.coalescing"],
            dma_scale=v["dma.scale"],
            starvation_cap=v["simt.starvation_cap"],
            trace=v["trace"],
        )

    def address_map(self) -> AddressMap:
        v = self.values
        return AddressMap(
            wram_size=v["memory.wram_kb"] * KB,
            mram_size=v["memory.mram_mb"] * MB,
            iram_size=v["memory.iram_kb"] * KB,
            stack_per_thread=v["memory.stack_per_thread"],
            heap_size=v["memory.heap_bytes"],
        )

    def dram_timing(self) -> DramTiming:
        v = self.values
        return DramTiming(v["dram.tRCD"], v["dram.tRAS"], v["dram.tRP"], v["dram.tCL"], v["dram.tBL"])

    def mmu_config(self) -> MmuConfig:
        v = self.values
        return MmuConfig(v["mmu.enabled"], FaultMode(v["mmu.mode"]), v["mmu.handler_latency_us"],
                         v["mmu.poll_period_us"], v["mmu.prefault"])

    def cache_config(self) -> CacheConfig:
        v = self.values
        ways, line = v["cache.ways"], v["cache.line"]
        return CacheConfig(
            enabled=v["cache.enabled"],
            icache=CacheGeometry(v["cache.icache_kb"] * KB, ways, line),
            dcache=CacheGeometry(v["cache.dcache_kb"] * KB, ways, line),
            mshrs=v["cache.mshrs"],
            write_policy=v["cache.write_policy"],
            icache_enabled=v["cache.icache"],
        )

    def dpu_kwargs(self) -> dict:
        v = self.values
        return dict(
            config=self.pipeline(),
            address_map=self.address_map(),
            mmu=self.mmu_config(),
            cache=self.cache_config(),
            dram=self.dram_timing(),
            age_cap=v["dram.age_cap"],
            tlp_window=v["stats.tlp_window"],
        )


def ilp_overrides(letters: str) -> dict[str, bool]:
    letters = letters.upper()
    bad = set(letters) - set(ILP_FLAGS)
    if bad:
        raise ConfigError(f"unknown ILP letters {''.join(sorted(bad))!r} (use D, R, S, F)")
    return {key: letter in letters for letter, key in ILP_FLAGS.items()}


def load_config(path: str | os.PathLike | None = None, overrides: dict[str, object] | None = None) -> RunConfig:
    """Defaults, then the file at ``path`` (or $PIMSIM_CONFIG), then ``overrides``."""
    values: dict[str, object] = {}
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object of dotted keys")
        values.update(data)
    if overrides:
        values.update(overrides)
    return RunConfig(values)
