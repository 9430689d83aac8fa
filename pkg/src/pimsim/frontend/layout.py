"""Flat physical address map shared by the toolchain and the simulator."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

KB = 1024
MB = 1024 * KB


class RegionKind(str, Enum):
    ATOMIC = "atomic"
    IRAM = "iram"
    WRAM = "wram"
    MRAM = "mram"


@dataclass(frozen=True)
class AddressMap:
    atomic_base: int = 0x0000_0000
    atomic_size: int = 32  # 256 lock bits
    wram_base: int = 0x0001_0000
    wram_size: int = 64 * KB
    mram_base: int = 0x0800_0000
    mram_size: int = 64 * MB
    iram_base: int = 0x8000_0000
    iram_size: int = 24 * KB
    stack_per_thread: int = 2 * KB
    heap_size: int = 4 * KB
    section_align: int = 8

    def base(self, kind: RegionKind) -> int:
        return getattr(self, f"{RegionKind(kind).value}_base")

    def size(self, kind: RegionKind) -> int:
        return getattr(self, f"{RegionKind(kind).value}_size")

    def region_of(self, addr: int) -> RegionKind | None:
        for kind in RegionKind:
            base = self.base(kind)
            if base <= addr < base + self.size(kind):
                return kind
        return None

    def contains(self, kind: RegionKind, addr: int, size: int = 1) -> bool:
        base = self.base(kind)
        return base <= addr and addr + size <= base + self.size(kind)

    # Page table occupies the top of MRAM when the MMU is on.
    @property
    def page_table_base(self) -> int:
        return self.mram_base + self.mram_size - (self.mram_size // 4096) * 8

    # Timing-only backing window for instruction-cache fills (no data lives there).
    @property
    def code_shadow_base(self) -> int:
        return self.mram_base + 48 * MB


DEFAULT_MAP = AddressMap()


def align_up(value: int, alignment: int) -> int:
    return (value + alignment - 1) // alignment * alignment
