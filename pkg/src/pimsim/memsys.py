"""Memory hierarchy timing: WRAM port, the MRAM bank with FR-FCFS, and the DMA engine.

DRAM timings are in DRAM command clocks (1200 MHz for DDR4-2400); the
DPU runs at 350 or 700 MHz.  ``ClockDomains`` converts between the two with
integer ceilings so every computed cycle is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

ROW_BYTES = 1024
BURST_BYTES = 32
DRAM_MHZ = 1200
DEFAULT_AGE_CAP = 2000


class BoundsFault(Exception):
    pass


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class ClockDomains:
    dpu_mhz: int = 350
    dram_mhz: int = DRAM_MHZ

    def to_dram(self, dpu_cycle: int) -> int:
        """First DRAM cycle not earlier than the start of ``dpu_cycle``."""
        return _ceil_div(dpu_cycle * self.dram_mhz, self.dpu_mhz)

    def to_dpu(self, dram_cycle: int) -> int:
        """First DPU cycle not earlier than ``dram_cycle``."""
        return _ceil_div(dram_cycle * self.dpu_mhz, self.dram_mhz)

    def limit(self, dpu_cycle: int) -> int:
        """Last DRAM cycle that ends no later than DPU cycle ``dpu_cycle`` + 1 begins."""
        return self.to_dram(dpu_cycle + 1) - 1

    def decided_at(self, dram_cycle: int) -> int:
        """DPU cycle whose controller window contains ``dram_cycle``."""
        return dram_cycle * self.dpu_mhz // self.dram_mhz


@dataclass(frozen=True)
class DramTiming:
    tRCD: int = 16
    tRAS: int = 39
    tRP: int = 16
    tCL: int = 16
    tBL: int = 4

    def latency(self, state: "RowState", size: int) -> int:
        bursts = max(1, _ceil_div(size, BURST_BYTES))
        base = self.tCL + self.tBL * bursts
        if state is RowState.HIT:
            return base
        if state is RowState.CLOSED:
            return self.tRCD + base
        return self.tRP + self.tRCD + base


class RowState(str, Enum):
    HIT = "hit"
    CLOSED = "closed"
    CONFLICT = "conflict"


# ---------------------------------------------------------------------------
# WRAM / IRAM ports


@dataclass
class WramPort:
    """Single scratchpad port: 1-cycle latency, 4 bytes per DPU cycle."""

    width: int = 4
    busy_until: int = 0
    bytes_moved: int = 0
    accesses: int = 0

    def occupancy(self, size: int) -> int:
        return max(1, _ceil_div(size, self.width))

    def free_at(self, cycle: int) -> bool:
        return self.busy_until <= cycle

    def access(self, cycle: int, size: int, transactions: int = 1) -> int:
        """Reserve the port; returns the completion cycle."""
        start = max(cycle, self.busy_until)
        self.busy_until = start + self.occupancy(size) * transactions
        self.bytes_moved += size * transactions
        self.accesses += transactions
        return self.busy_until


def wram_access(port: WramPort, addr: int, size: int, cycle: int, base: int, capacity: int) -> int:
    if size not in (1, 2, 4, 8):
        raise ValueError(f"bad access size {size}")
    if not (base <= addr and addr + size <= base + capacity):
        raise BoundsFault(f"WRAM access 0x{addr:08x}+{size} out of range")
    return port.access(cycle, size)


# ---------------------------------------------------------------------------
# MRAM bank


@dataclass(eq=False)
class MemoryTransaction:
    address: int          # byte offset within the bank
    size: int
    is_write: bool
    arrival: int          # DRAM cycle
    seq: int = 0
    tag: str = "data"     # data / pt (page-table walk) / fill / writeback
    on_complete: Callable[["MemoryTransaction"], None] | None = None
    start: int | None = None
    issued: int | None = None           # cycle the (translated) spans reach the bank
    completion: int | None = None
    row_state: RowState | None = None

    @property
    def row(self) -> int:
        return self.address // ROW_BYTES

    @property
    def column(self) -> int:
        return self.address % ROW_BYTES


@dataclass
class BankState:
    timing: DramTiming = field(default_factory=DramTiming)
    open_row: int | None = None
    last_activate: int = -(10**9)
    free_at: int = 0

    def classify(self, row: int) -> RowState:
        if self.open_row is None:
            return RowState.CLOSED
        return RowState.HIT if self.open_row == row else RowState.CONFLICT


def fr_fcfs_pick(
    queue: list[MemoryTransaction], bank: BankState, now: int | None = None, age_cap: int | None = None
) -> MemoryTransaction:
    """Oldest row hit, else oldest; requests older than ``age_cap`` go first."""
    if not queue:
        raise ValueError("empty queue")

    def age_key(t: MemoryTransaction) -> tuple[int, int]:
        return (t.arrival, t.seq)

    if now is not None and age_cap is not None:
        starving = [t for t in queue if now - t.arrival > age_cap]
        if starving:
            return min(starving, key=age_key)
    if bank.open_row is not None:
        hits = [t for t in queue if t.row == bank.open_row]
        if hits:
            return min(hits, key=age_key)
    return min(queue, key=age_key)


def mram_service(txn: MemoryTransaction, bank: BankState, start: int | None = None) -> int:
    """Service ``txn`` on ``bank`` beginning at ``start`` (default: bank free); returns completion."""
    t = bank.free_at if start is None else max(start, bank.free_at)
    timing = bank.timing
    state = bank.classify(txn.row)
    if state is RowState.CONFLICT:
        pre = max(t, bank.last_activate + timing.tRAS)
        act = pre + timing.tRP
    elif state is RowState.CLOSED:
        pre, act = t, t
    else:
        pre, act = t, None
    if state is RowState.HIT:
        done = t + timing.latency(state, txn.size)
    else:
        done = act + timing.tRCD + timing.tCL + timing.tBL * max(1, _ceil_div(txn.size, BURST_BYTES))
        bank.last_activate = act
        bank.open_row = txn.row
    txn.start, txn.completion, txn.row_state = t, done, state
    bank.free_at = done
    return done


class MemoryController:
    """Single-bank controller; decisions are taken lazily up to a DRAM-cycle limit."""

    def __init__(self, timing: DramTiming | None = None, age_cap: int = DEFAULT_AGE_CAP, trace: list | None = None):
        self.bank = BankState(timing or DramTiming())
        self.age_cap = age_cap
        self.queue: list[MemoryTransaction] = []
        self._seq = 0
        self.trace = trace
        self.bytes_read = 0
        self.bytes_written = 0
        self.completed = 0
        self.bytes_by_tag: dict[str, int] = {}

    def submit(self, txn: MemoryTransaction) -> MemoryTransaction:
        txn.seq = self._seq
        self._seq += 1
        self.queue.append(txn)
        return txn

    def request(self, address: int, size: int, is_write: bool, arrival: int, tag: str = "data",
                on_complete=None) -> MemoryTransaction:
        return self.submit(MemoryTransaction(address, size, is_write, arrival, tag=tag, on_complete=on_complete))

    def next_decision(self) -> int | None:
        if not self.queue:
            return None
        return max(self.bank.free_at, min(t.arrival for t in self.queue))

    def advance(self, limit: int) -> int:
        """Take every scheduling decision at DRAM cycles <= ``limit``; returns how many."""
        n = 0
        while self.queue:
            now = self.next_decision()
            if now > limit:
                break
            ready = [t for t in self.queue if t.arrival <= now]
            txn = fr_fcfs_pick(ready, self.bank, now, self.age_cap)
            self.queue.remove(txn)
            mram_service(txn, self.bank, now)
            if txn.is_write:
                self.bytes_written += txn.size
            else:
                self.bytes_read += txn.size
            self.bytes_by_tag[txn.tag] = self.bytes_by_tag.get(txn.tag, 0) + txn.size
            self.completed += 1
            if self.trace is not None:
                self.trace.append((txn.arrival, now, txn.row_state.value, txn.completion, txn.address, txn.size))
            if txn.on_complete is not None:
                txn.on_complete(txn)
            n += 1
        return n

    def drain(self) -> None:
        self.advance(1 << 62)


def split_rows(address: int, size: int) -> list[tuple[int, int]]:
    """Split a transfer at row-buffer boundaries."""
    out = []
    while size > 0:
        n = min(size, ROW_BYTES - address % ROW_BYTES)
        out.append((address, n))
        address += n
        size -= n
    return out


# ---------------------------------------------------------------------------
# DMA engine


@dataclass
class DmaPart:
    wram: int
    mram: int
    size: int


@dataclass(eq=False)
class DmaJob:
    """One DMA request; coalesced SIMT requests carry several parts."""

    is_write: bool                      # True for WRAM -> MRAM
    parts: list[DmaPart]
    owner: object = None
    on_done: Callable[["DmaJob", int], None] | None = None
    start: int | None = None
    completion: int | None = None
    pending: int = 0
    dram_done: int = 0
    spans: list[tuple[int, int]] = field(default_factory=list)

    @property
    def size(self) -> int:
        return sum(n for _, n in self.spans) if self.spans else sum(p.size for p in self.parts)


def merge_spans(parts: list[DmaPart]) -> list[tuple[int, int]]:
    """Union of the MRAM ranges touched by ``parts`` as (address, size) spans."""
    ivs = sorted((p.mram, p.mram + p.size) for p in parts)
    out: list[list[int]] = []
    for lo, hi in ivs:
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return [(lo, hi - lo) for lo, hi in out]


class DmaEngine:
    """Serial MRAM<->WRAM DMA engine.

    A job is split at row boundaries into bank transactions; it completes at
    max(last DRAM completion, start + port drain time).  The optional
    ``translator`` maps virtual MRAM addresses page by page before the
    transactions are sent.
    """

    def __init__(self, controller: MemoryController, clocks: ClockDomains, scale: int = 1,
                 schedule: Callable[[int, Callable], None] | None = None, mram_base: int = 0,
                 translator=None):
        self.controller = controller
        self.clocks = clocks
        self.scale = scale
        self.schedule = schedule
        self.mram_base = mram_base
        self.translator = translator
        self.queue: list[DmaJob] = []
        self.current: DmaJob | None = None
        self.bytes_read = 0       # MRAM -> WRAM
        self.bytes_written = 0    # WRAM -> MRAM
        self.jobs_done = 0
        self.busy_cycles = 0

    def port_cycles(self, size: int) -> int:
        # 700 MB/s x scale regardless of the DPU clock
        return _ceil_div(size * self.clocks.dpu_mhz, 700 * self.scale)

    def submit(self, job: DmaJob, cycle: int) -> None:
        self.queue.append(job)
        if self.current is None:
            self._start_next(cycle)

    @property
    def idle(self) -> bool:
        return self.current is None and not self.queue

    def _start_next(self, cycle: int) -> None:
        if not self.queue:
            self.current = None
            return
        job = self.queue.pop(0)
        self.current = job
        job.start = cycle
        job.spans = merge_spans(job.parts)
        if self.translator is not None:
            self.translator.translate_spans(job, cycle, self._issue)
        else:
            self._issue(job, cycle, job.spans)

    def _issue(self, job: DmaJob, cycle: int, spans: list[tuple[int, int]]) -> None:
        """Send the (physical) spans to the bank starting at DPU ``cycle``."""
        job.issued = cycle
        arrival = self.clocks.to_dram(cycle)
        pieces = [piece for addr, n in spans for piece in split_rows(addr - self.mram_base, n)]
        job.pending = len(pieces)
        job.dram_done = arrival
        for addr, n in pieces:
            self.controller.request(addr, n, job.is_write, arrival, "data", lambda t, j=job: self._piece_done(j, t))

    def _piece_done(self, job: DmaJob, txn: MemoryTransaction) -> None:
        job.pending -= 1
        job.dram_done = max(job.dram_done, txn.completion)
        if job.pending == 0:
            done = max(self.clocks.to_dpu(job.dram_done), job.issued + self.port_cycles(job.size))
            self.schedule(done, lambda c, j=job: self._finish(j, c))

    def _finish(self, job: DmaJob, cycle: int) -> None:
        job.completion = cycle
        if job.is_write:
            self.bytes_written += job.size
        else:
            self.bytes_read += job.size
        self.jobs_done += 1
        self.busy_cycles += cycle - job.start
        if job.on_done is not None:
            job.on_done(job, cycle)
        self._start_next(cycle)


# ---------------------------------------------------------------------------
# backing store


class SparseMemory:
    """Zero-initialised byte store allocated in fixed chunks on first write."""

    CHUNK = 1 << 16

    def __init__(self, base: int, size: int):
        self.base, self.size = base, size
        self._chunks: dict[int, bytearray] = {}

    def contains(self, addr: int, n: int) -> bool:
        return self.base <= addr and addr + n <= self.base + self.size

    def _check(self, addr: int, n: int) -> None:
        if not self.contains(addr, n):
            raise BoundsFault(f"access 0x{addr:08x}+{n} outside 0x{self.base:08x}+{self.size}")

    def read(self, addr: int, n: int) -> bytes:
        self._check(addr, n)
        off = addr - self.base
        out = bytearray()
        while n > 0:
            idx, pos = divmod(off, self.CHUNK)
            k = min(n, self.CHUNK - pos)
            chunk = self._chunks.get(idx)
            out += chunk[pos:pos + k] if chunk is not None else bytes(k)
            off += k
            n -= k
        return bytes(out)

    def write(self, addr: int, data: bytes) -> None:
        self._check(addr, len(data))
        off = addr - self.base
        view = memoryview(bytes(data))
        while view:
            idx, pos = divmod(off, self.CHUNK)
            k = min(len(view), self.CHUNK - pos)
            chunk = self._chunks.get(idx)
            if chunk is None:
                chunk = self._chunks[idx] = bytearray(self.CHUNK)
            chunk[pos:pos + k] = view[:k]
            view = view[k:]
            off += k

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for idx in sorted(self._chunks):
            chunk = self._chunks[idx]
            if any(chunk):
                h.update(idx.to_bytes(8, "little"))
                h.update(chunk)
        return h.hexdigest()
