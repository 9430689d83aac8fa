"""Run statistics: utilization, idle attribution, TLP, instruction mix, host phases, export."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum

from .isa import Category

MAX_TLP = 24
DEFAULT_WINDOW = 10_000


class IdleCause(str, Enum):
    MEMORY = "MEMORY"
    REVOLVER = "REVOLVER"
    RF = "RF"


def classify_idle_cycle(revolver_only: bool, rf_only: bool) -> IdleCause:
    """Attribution for a cycle with nothing issuable: REVOLVER > RF > MEMORY."""
    if revolver_only:
        return IdleCause.REVOLVER
    if rf_only:
        return IdleCause.RF
    return IdleCause.MEMORY


def classify_blocked(reasons) -> IdleCause:
    """Same rule over per-thread reasons ("revolver", "rf", anything else = memory)."""
    reasons = list(reasons)
    return classify_idle_cycle("revolver" in reasons, "rf" in reasons)


class TlpTracker:
    """Histogram of issuable-thread counts per cycle plus a windowed mean series."""

    def __init__(self, window: int = DEFAULT_WINDOW, bins: int = MAX_TLP + 1):
        self.window = window
        self.hist = [0] * bins
        self._sums: list[int] = []
        self._cycles = 0

    def sample(self, count: int, cycles: int = 1) -> None:
        """Record ``count`` issuable threads for ``cycles`` consecutive cycles."""
        if cycles == 1:
            self.hist[count] += 1
            idx = self._cycles // self.window
            if idx == len(self._sums):
                self._sums.append(0)
            self._sums[idx] += count
            self._cycles += 1
            return
        if cycles <= 0:
            return
        self.hist[min(count, len(self.hist) - 1)] += cycles
        while cycles:
            idx, pos = divmod(self._cycles, self.window)
            if idx == len(self._sums):
                self._sums.append(0)
            k = min(cycles, self.window - pos)
            self._sums[idx] += count * k
            self._cycles += k
            cycles -= k

    def series(self) -> list[float]:
        out = []
        for i, s in enumerate(self._sums):
            span = min(self.window, self._cycles - i * self.window)
            out.append(s / span)
        return out

    @property
    def cycles(self) -> int:
        return self._cycles


def tlp_sample(tracker: TlpTracker, cycle: int, issuable: int) -> None:
    if cycle != tracker.cycles:
        raise ValueError(f"samples must be contiguous: expected cycle {tracker.cycles}, got {cycle}")
    tracker.sample(issuable)


def tlp_series(tracker: TlpTracker) -> tuple[list[int], list[float]]:
    return list(tracker.hist), tracker.series()


@dataclass
class CycleStats:
    total_cycles: int = 0
    active_cycles: int = 0
    issued: int = 0                     # lane-instructions
    issue_width: int = 1
    lanes: int = 1
    idle: dict[str, int] = field(default_factory=lambda: {c.value: 0 for c in IdleCause})
    mix: dict[str, int] = field(default_factory=lambda: {c.value: 0 for c in Category})
    tlp: TlpTracker = field(default_factory=TlpTracker)
    dma_read_bytes: int = 0
    dma_write_bytes: int = 0
    dram_read_bytes: int = 0            # everything the bank returned, incl. walks and fills
    dram_write_bytes: int = 0
    wram_transactions: int = 0
    wram_bytes: int = 0
    cache: dict[str, int] = field(default_factory=dict)
    mmu: dict[str, int] = field(default_factory=dict)
    faults: list[str] = field(default_factory=list)
    frequency_mhz: int = 350
    dma_peak_bytes_per_cycle: float = 2.0

    def add_idle(self, cause: IdleCause, cycles: int = 1) -> None:
        self.idle[cause.value] += cycles

    @property
    def ipc(self) -> float:
        return self.issued / self.total_cycles if self.total_cycles else 0.0

    @property
    def wall_seconds(self) -> float:
        return self.total_cycles / (self.frequency_mhz * 1e6)

    def check(self) -> None:
        idle = sum(self.idle.values())
        if self.active_cycles + idle != self.total_cycles:
            raise AssertionError(f"cycle accounting: {self.active_cycles} + {idle} != {self.total_cycles}")
        if sum(self.tlp.hist) != self.total_cycles:
            raise AssertionError(f"TLP histogram holds {sum(self.tlp.hist)} cycles, expected {self.total_cycles}")

    def utilization(self) -> "UtilizationReport":
        slots = self.total_cycles * self.issue_width * self.lanes
        compute = self.issued / slots if slots else 0.0
        peak = self.total_cycles * self.dma_peak_bytes_per_cycle
        read = self.dma_read_bytes + self.cache.get("fill_bytes", 0)
        memory = read / peak if peak else 0.0
        return UtilizationReport(compute, min(memory, 1.0))

    def instruction_mix(self) -> dict[str, float]:
        return instruction_mix(self.mix)

    def to_dict(self) -> dict:
        util = self.utilization()
        return {
            "total_cycles": self.total_cycles,
            "active_cycles": self.active_cycles,
            "issued": self.issued,
            "ipc": self.ipc,
            "issue_width": self.issue_width,
            "lanes": self.lanes,
            "idle": dict(self.idle),
            "mix": dict(self.mix),
            "instruction_mix": self.instruction_mix(),
            "tlp_histogram": list(self.tlp.hist),
            "tlp_series": self.tlp.series(),
            "tlp_window": self.tlp.window,
            "dma_read_bytes": self.dma_read_bytes,
            "dma_write_bytes": self.dma_write_bytes,
            "dram_read_bytes": self.dram_read_bytes,
            "dram_write_bytes": self.dram_write_bytes,
            "wram_transactions": self.wram_transactions,
            "wram_bytes": self.wram_bytes,
            "cache": dict(self.cache),
            "mmu": dict(self.mmu),
            "faults": list(self.faults),
            "frequency_mhz": self.frequency_mhz,
            "wall_seconds": self.wall_seconds,
            "utilization": {"compute": util.compute, "memory_read": util.memory_read},
        }


@dataclass(frozen=True)
class UtilizationReport:
    compute: float
    memory_read: float


def instruction_mix(counts: dict[str, int]) -> dict[str, float]:
    total = sum(counts.values())
    return {k: (v / total if total else 0.0) for k, v in sorted(counts.items())}


def merge(stats: list[CycleStats]) -> dict:
    """Order-independent aggregate over DPUs (sums and maxima)."""
    agg = {
        "dpus": len(stats),
        "max_cycles": max((s.total_cycles for s in stats), default=0),
        "issued": sum(s.issued for s in stats),
        "idle": {c.value: sum(s.idle[c.value] for s in stats) for c in IdleCause},
        "mix": {c.value: sum(s.mix[c.value] for s in stats) for c in Category},
        "dma_read_bytes": sum(s.dma_read_bytes for s in stats),
        "dma_write_bytes": sum(s.dma_write_bytes for s in stats),
        "dram_read_bytes": sum(s.dram_read_bytes for s in stats),
        "cache_bytes_read": sum(s.cache.get("bytes_read_counter", 0) for s in stats),
    }
    agg["instruction_mix"] = instruction_mix(agg["mix"])
    return agg


# ---------------------------------------------------------------------------
# export


def export(run: dict, path=None) -> str:
    """Serialise a results document with stable key order; optionally write it."""
    text = json.dumps(run, sort_keys=True, indent=2) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def report_tables(results: dict) -> dict[str, str]:
    """CSV analogs of the characterization figures from a results document."""
    tables: dict[str, list[list]] = {}
    dpus = results.get("dpus", [])
    tables["utilization"] = [["dpu", "cycles", "ipc", "compute_util", "memory_read_util"]] + [
        [i, d["total_cycles"], round(d["ipc"], 6), round(d["utilization"]["compute"], 6),
         round(d["utilization"]["memory_read"], 6)] for i, d in enumerate(dpus)
    ]
    tables["idle"] = [["dpu", "active", "MEMORY", "REVOLVER", "RF"]] + [
        [i, d["active_cycles"], d["idle"]["MEMORY"], d["idle"]["REVOLVER"], d["idle"]["RF"]]
        for i, d in enumerate(dpus)
    ]
    tables["tlp"] = [["dpu"] + [f"tlp{k}" for k in range(MAX_TLP + 1)]] + [
        [i] + d["tlp_histogram"] for i, d in enumerate(dpus)
    ]
    cats = [c.value for c in Category]
    tables["mix"] = [["dpu"] + cats] + [
        [i] + [round(d["instruction_mix"].get(c, 0.0), 6) for c in cats] for i, d in enumerate(dpus)
    ]
    phases = results.get("phases", [])
    tables["phases"] = [["phase", "seconds", "bytes"]] + [[p["label"], p["seconds"], p.get("bytes", 0)] for p in phases]
    out = {}
    for name, rows in tables.items():
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(rows)
        out[name] = buf.getvalue()
    return out
