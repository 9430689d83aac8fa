"""MRAM address translation: fully associative TLB, one page-table walker, host-serviced faults.

The page table is a flat array of 8-byte entries at the top of MRAM.  An
entry is ``(ppn << 12) | 1`` when valid.  Translation results feed back into
the caller through callbacks scheduled on the DPU event queue.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable

from .memsys import ClockDomains, MemoryController

PAGE_BYTES = 4096
PAGE_SHIFT = 12
PTE_BYTES = 8
TLB_ENTRIES = 16


@lru_cache(maxsize=4)
def _identity_table(entries: int) -> bytes:
    return b"".join(((vpn << PAGE_SHIFT) | 1).to_bytes(PTE_BYTES, "little") for vpn in range(entries))


class FatalFault(Exception):
    def __init__(self, vaddr: int, owner=None, reason: str = "host declined mapping"):
        super().__init__(f"fatal MMU fault at 0x{vaddr:08x}: {reason}")
        self.vaddr, self.owner = vaddr, owner


class FaultStatus(str, Enum):
    PENDING = "PENDING"
    SERVICED = "SERVICED"


class FaultMode(str, Enum):
    POLL = "poll"
    INTERRUPT = "interrupt"


@dataclass
class FaultRecord:
    vaddr: int
    tasklet: object
    cycle: int
    status: FaultStatus = FaultStatus.PENDING
    resumed: int | None = None


@dataclass
class TlbEntry:
    vpn: int
    ppn: int
    valid: bool = True
    last_use: int = 0


class Tlb:
    """Fully associative, LRU."""

    def __init__(self, entries: int = TLB_ENTRIES):
        self.capacity = entries
        self._map: OrderedDict[int, TlbEntry] = OrderedDict()  # LRU first
        self.hits = 0
        self.misses = 0

    def lookup(self, vpn: int, cycle: int = 0) -> TlbEntry | None:
        entry = self._map.get(vpn)
        if entry is None:
            self.misses += 1
            return None
        self.hits += 1
        entry.last_use = cycle
        self._map.move_to_end(vpn)
        return entry

    def fill(self, vpn: int, ppn: int, cycle: int = 0) -> TlbEntry | None:
        """Insert a translation; returns the evicted entry, if any."""
        victim = None
        if vpn in self._map:
            self._map.pop(vpn)
        elif len(self._map) >= self.capacity:
            _, victim = self._map.popitem(last=False)
        self._map[vpn] = TlbEntry(vpn, ppn, True, cycle)
        return victim

    def entries(self) -> list[TlbEntry]:
        return list(self._map.values())

    def __len__(self) -> int:
        return len(self._map)


def tlb_fill(tlb: Tlb, vpn: int, ppn: int, cycle: int = 0) -> TlbEntry | None:
    return tlb.fill(vpn, ppn, cycle)


@dataclass
class MmuConfig:
    enabled: bool = False
    mode: FaultMode = FaultMode.INTERRUPT
    handler_latency_us: float = 20.0
    poll_period_us: float = 10.0
    prefault: str = "all"   # all | none


@dataclass
class MmuStats:
    translations: int = 0
    walks: int = 0
    faults: int = 0
    fault_records: list[FaultRecord] = field(default_factory=list)


class Mmu:
    def __init__(self, config: MmuConfig, mram, controller: MemoryController, clocks: ClockDomains,
                 schedule: Callable[[int, Callable], None], mram_base: int, mram_size: int,
                 table_base: int):
        self.config = config
        self.mram = mram
        self.controller = controller
        self.clocks = clocks
        self.schedule = schedule
        self.mram_base = mram_base
        self.mram_size = mram_size
        self.table_base = table_base
        self.user_pages = (table_base - mram_base) // PAGE_BYTES
        self.tlb = Tlb()
        self.stats = MmuStats()
        self._walk_queue: list[tuple[int, object, Callable]] = []
        self._walking = False
        if config.prefault == "all":
            self.map_identity()

    # -- page table ---------------------------------------------------------

    def _pte_addr(self, vpn: int) -> int:
        return self.table_base + vpn * PTE_BYTES

    def set_pte(self, vpn: int, ppn: int | None) -> None:
        value = 0 if ppn is None else (ppn << PAGE_SHIFT) | 1
        self.mram.write(self._pte_addr(vpn), value.to_bytes(PTE_BYTES, "little"))

    def read_pte(self, vpn: int) -> int | None:
        value = int.from_bytes(self.mram.read(self._pte_addr(vpn), PTE_BYTES), "little")
        return value >> PAGE_SHIFT if value & 1 else None

    def map_identity(self) -> None:
        self.mram.write(self.table_base, _identity_table(self.mram_size // PAGE_BYTES))

    # -- translation --------------------------------------------------------

    def vpn_of(self, vaddr: int) -> int:
        return (vaddr - self.mram_base) >> PAGE_SHIFT

    def phys(self, vaddr: int, ppn: int) -> int:
        return self.mram_base + ((ppn << PAGE_SHIFT) | ((vaddr - self.mram_base) & (PAGE_BYTES - 1)))

    def translate(self, vaddr: int, cycle: int, owner, done: Callable[[int, int], None]) -> None:
        """Translate ``vaddr`` issued at ``cycle``; ``done(paddr, cycle)`` fires when ready."""
        self.stats.translations += 1
        vpn = self.vpn_of(vaddr)
        entry = self.tlb.lookup(vpn, cycle)
        if entry is not None:
            paddr = self.phys(vaddr, entry.ppn)
            self.schedule(cycle + 1, lambda c: done(paddr, c))
            return
        self._walk_queue.append((vaddr, owner, done))
        if not self._walking:
            self._next_walk(cycle + 1)

    def _next_walk(self, cycle: int) -> None:
        if not self._walk_queue:
            self._walking = False
            return
        self._walking = True
        vaddr, owner, done = self._walk_queue[0]
        vpn = self.vpn_of(vaddr)
        # a previous walk may already have filled this page
        entry = self.tlb._map.get(vpn)
        if entry is not None:
            self._walk_queue.pop(0)
            paddr = self.phys(vaddr, entry.ppn)
            self.schedule(cycle, lambda c: (done(paddr, c), self._next_walk(c)))
            return
        self.stats.walks += 1
        pte_offset = self._pte_addr(vpn) - self.mram_base

        def walked(txn):
            at = self.clocks.to_dpu(txn.completion)
            self.schedule(at, lambda c: self._walk_done(vaddr, owner, done, c))

        self.controller.request(pte_offset, PTE_BYTES, False, self.clocks.to_dram(cycle), "pt", walked)

    def _walk_done(self, vaddr: int, owner, done, cycle: int) -> None:
        vpn = self.vpn_of(vaddr)
        ppn = self.read_pte(vpn)
        if ppn is None:
            self._fault(vaddr, owner, cycle)
            return
        self.tlb.fill(vpn, ppn, cycle)
        self._walk_queue.pop(0)
        paddr = self.phys(vaddr, ppn)
        done(paddr, cycle)
        self._next_walk(cycle)

    # -- faults -------------------------------------------------------------

    def _us_to_cycles(self, us: float) -> int:
        return max(1, round(us * self.clocks.dpu_mhz))

    def resume_cycle(self, fault_cycle: int) -> int:
        h = self._us_to_cycles(self.config.handler_latency_us)
        if FaultMode(self.config.mode) is FaultMode.INTERRUPT:
            return fault_cycle + h
        p = self._us_to_cycles(self.config.poll_period_us)
        tick = (fault_cycle // p + 1) * p
        return tick + h

    def _fault(self, vaddr: int, owner, cycle: int) -> None:
        record = FaultRecord(vaddr, owner, cycle)
        self.stats.faults += 1
        self.stats.fault_records.append(record)
        self.schedule(self.resume_cycle(cycle), lambda c: self.service_fault(record, c))

    def service_fault(self, record: FaultRecord, cycle: int) -> None:
        """Host handler: install an identity PTE, then retry the walk."""
        vpn = self.vpn_of(record.vaddr)
        if not 0 <= vpn < self.user_pages:
            raise FatalFault(record.vaddr, record.tasklet)
        self.set_pte(vpn, vpn)
        record.status = FaultStatus.SERVICED
        record.resumed = cycle
        self._next_walk(cycle)

    # -- DMA helper ---------------------------------------------------------

    def translate_spans(self, job, cycle: int, issue: Callable) -> None:
        """Translate every page touched by ``job.spans`` in order, then ``issue(job, cycle, phys_spans)``."""
        pieces: list[tuple[int, int]] = []
        for addr, n in job.spans:
            while n > 0:
                k = min(n, PAGE_BYTES - (addr - self.mram_base) % PAGE_BYTES)
                pieces.append((addr, k))
                addr += k
                n -= k
        out: list[tuple[int, int]] = []

        def step(i: int, at: int) -> None:
            if i == len(pieces):
                issue(job, at, out)
                return
            vaddr, k = pieces[i]

            def got(paddr: int, c: int) -> None:
                out.append((paddr, k))
                step(i + 1, c)

            self.translate(vaddr, at, job.owner, got)

        step(0, cycle)
