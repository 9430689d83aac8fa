"""Set-associative, write-back/write-allocate caches with MSHR miss merging.

Only tags are modelled; data always lives in the backing store.  Misses
are handed to an injected ``issue_fill`` callable, which routes the line
fill (and any dirty writeback) through the bank model and calls back once
the fill has arrived.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable

LINE_BYTES = 64


@dataclass(frozen=True)
class CacheGeometry:
    capacity: int
    ways: int = 8
    line: int = LINE_BYTES

    @property
    def sets(self) -> int:
        return self.capacity // (self.ways * self.line)

    def index(self, addr: int) -> tuple[int, int]:
        """(set, tag) of ``addr``."""
        block = addr // self.line
        return block % self.sets, block // self.sets

    def line_addr(self, addr: int) -> int:
        return addr - addr % self.line


ICACHE = CacheGeometry(24 * 1024)
DCACHE = CacheGeometry(64 * 1024)


@dataclass
class CacheConfig:
    enabled: bool = False
    icache: CacheGeometry = ICACHE
    dcache: CacheGeometry = DCACHE
    mshrs: int = 8
    write_policy: str = "writeback"
    icache_enabled: bool = True   # False: instructions bypass the icache

    def __post_init__(self):
        if self.write_policy != "writeback":
            raise ValueError(f"unsupported cache.write_policy {self.write_policy!r} (only 'writeback')")
        for g in (self.icache, self.dcache):
            if g.sets * g.ways * g.line != g.capacity or g.sets < 1:
                raise ValueError(f"inconsistent cache geometry {g}")


@dataclass
class CacheLine:
    tag: int
    valid: bool = True
    dirty: bool = False
    lru_rank: int = 0   # 0 = most recently used


@dataclass
class Mshr:
    line_addr: int
    waiters: list = field(default_factory=list)
    write: bool = False


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    fills: int = 0
    writebacks: int = 0
    merged: int = 0          # misses that joined an in-flight fill
    mshr_stalls: int = 0

    @property
    def bytes_read_counter(self) -> int:
        return LINE_BYTES * (self.fills + self.writebacks)


class Cache:
    def __init__(self, geometry: CacheGeometry, mshrs: int = 8,
                 issue_fill: Callable[[int, int | None, int, Callable[[int], None]], None] | None = None):
        self.geo = geometry
        self.mshr_limit = mshrs
        self.issue_fill = issue_fill
        # per set: tag -> CacheLine, least recently used first; pending lines have valid=False
        self.sets: list[OrderedDict[int, CacheLine]] = [OrderedDict() for _ in range(geometry.sets)]
        self.mshrs: dict[int, Mshr] = {}
        self.stalled: list[tuple[int, bool, int, Callable]] = []
        self.stats = CacheStats()

    def bytes_read_counter(self) -> int:
        return self.stats.bytes_read_counter

    def probe(self, addr: int) -> CacheLine | None:
        s, tag = self.geo.index(addr)
        line = self.sets[s].get(tag)
        return line if line is not None and line.valid else None

    def lru_order(self, set_index: int) -> list[int]:
        """Valid tags of a set from least to most recently used."""
        return [t for t, ln in self.sets[set_index].items() if ln.valid]

    def _touch(self, s: int, tag: int) -> None:
        self.sets[s].move_to_end(tag)
        lines = self.sets[s]
        for rank, ln in enumerate(reversed(lines.values())):
            ln.lru_rank = rank

    def access(self, addr: int, size: int, is_write: bool, cycle: int,
               wake: Callable[[int], None] | None = None) -> int | None:
        """Returns the completion cycle on a hit; on a miss returns None and calls ``wake(cycle)`` after the fill."""
        return self._access(addr, size, is_write, cycle, wake, True)

    def _access(self, addr, size, is_write, cycle, wake, count: bool) -> int | None:
        if addr // self.geo.line != (addr + size - 1) // self.geo.line:
            raise ValueError(f"access 0x{addr:x}+{size} crosses a cache line")
        s, tag = self.geo.index(addr)
        line = self.sets[s].get(tag)
        if line is not None and line.valid:
            self.stats.hits += count
            line.dirty |= is_write
            self._touch(s, tag)
            return cycle + 1
        self.stats.misses += count
        la = self.geo.line_addr(addr)
        mshr = self.mshrs.get(la)
        if mshr is not None:
            self.stats.merged += count
            mshr.waiters.append(wake)
            mshr.write |= is_write
            return None
        if len(self.mshrs) >= self.mshr_limit or not self._has_victim(s):
            self.stats.mshr_stalls += count
            self.stalled.append((addr, is_write, cycle, wake))
            return None
        self._allocate(addr, is_write, cycle, wake)
        return None

    def _has_victim(self, s: int) -> bool:
        lines = self.sets[s]
        return len(lines) < self.geo.ways or any(ln.valid for ln in lines.values())

    def _allocate(self, addr: int, is_write: bool, cycle: int, wake) -> None:
        s, tag = self.geo.index(addr)
        la = self.geo.line_addr(addr)
        lines = self.sets[s]
        victim_addr = None
        if len(lines) >= self.geo.ways:
            vtag = next(t for t, ln in lines.items() if ln.valid)
            victim = lines.pop(vtag)
            if victim.dirty:
                self.stats.writebacks += 1
                victim_addr = (vtag * self.geo.sets + s) * self.geo.line
        lines[tag] = CacheLine(tag, valid=False)
        mshr = self.mshrs[la] = Mshr(la, [wake], is_write)
        self.issue_fill(la, victim_addr, cycle, lambda at, m=mshr: self._filled(m, at))

    def _filled(self, mshr: Mshr, cycle: int) -> None:
        s, tag = self.geo.index(mshr.line_addr)
        line = self.sets[s][tag]
        line.valid = True
        line.dirty = mshr.write
        self._touch(s, tag)
        self.stats.fills += 1
        del self.mshrs[mshr.line_addr]
        for wake in mshr.waiters:
            if wake is not None:
                wake(cycle)
        # retry stalled misses in arrival order
        stalled, self.stalled = self.stalled, []
        for addr, is_write, _, wake in stalled:
            done = self._access(addr, 1, is_write, cycle, wake, False)
            if done is not None and wake is not None:
                wake(done)
