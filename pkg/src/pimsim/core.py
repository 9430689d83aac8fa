"""Cycle-level DPU: 24 hardware threads on a 14-stage revolver pipeline.

Scheduling is done over *issue units*.  Without SIMT every tasklet is its
own unit; with SIMT, N consecutive tasklets form one unit whose lanes issue
together under a minimum-pc election.

Per unit the scheduler keeps three cycle stamps:

* ``rev_at``   earliest cycle allowed by issue spacing (revolver, or the
               forwarding/interlock distance when that mode is on)
* ``mem_at``   earliest cycle allowed by outstanding memory work
* ``ready_at`` ``max(rev_at, mem_at)`` plus one cycle when the next
               instruction's two reads hit the same register-file bank

The stamps double as the idle-cycle attribution: a cycle below ``rev_at``
but not below ``mem_at`` is a revolver stall, the parity window is an RF
stall, everything else is a memory stall.

Architectural effects are applied when an instruction issues; timing is
tracked separately, so no pipeline registers are simulated.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

from .cache import Cache, CacheConfig
from .frontend.image import MemoryImage
from .frontend.layout import DEFAULT_MAP, AddressMap, RegionKind
from .isa import (
    INSTRUCTION_BYTES,
    NUM_LOCKS,
    NUM_REGISTERS,
    WORD_MASK,
    Category,
    IllegalInstruction,
    Instruction,
    Shape,
    decode,
    parity,
)
from .memsys import ClockDomains, DmaEngine, DmaJob, DmaPart, DramTiming, MemoryController, SparseMemory, WramPort
from .stats import CycleStats, IdleCause
from .vm import PAGE_BYTES, FatalFault, Mmu, MmuConfig

INF = 1 << 62
MAX_TASKLETS = 24
SIMT_BLOCK = 64
STACK_REGISTER = 23


class BootError(Exception):
    pass


class SimFault(Exception):
    def __init__(self, pc: int, reason: str, tasklet: int | None = None):
        where = f"tasklet {tasklet} " if tasklet is not None else ""
        super().__init__(f"{where}pc=0x{pc:x}: {reason}")
        self.pc, self.reason, self.tasklet = pc, reason, tasklet


class SimError(Exception):
    """Simulator-level failure (deadlock, cycle budget exhausted)."""


class TaskletState(str, Enum):
    READY = "READY"
    RUNNING = "RUNNING"
    BLOCKED_MEM = "BLOCKED_MEM"
    BLOCKED_DMA = "BLOCKED_DMA"
    BLOCKED_LOCK = "BLOCKED_LOCK"
    BLOCKED_REVOLVER = "BLOCKED_REVOLVER"
    BLOCKED_RF = "BLOCKED_RF"
    STOPPED = "STOPPED"


@dataclass(frozen=True)
class PipelineConfig:
    stages: int = 14
    revolver_spacing: int = 11
    reg_read_stage: int = 3
    writeback_stage: int = 14
    issue_width: int = 1
    forwarding: bool = False
    unified_rf: bool = False
    frequency_mhz: int = 350
    forward_distance: int = 5
    simt_lanes: int = 0            # 0 = SIMT off
    coalescing: bool = False
    dma_scale: int = 1
    starvation_cap: int = 4
    trace: bool = False

    def __post_init__(self):
        if self.issue_width not in (1, 2):
            raise ValueError("issue_width must be 1 or 2")
        if not self.forwarding and self.reg_read_stage + self.revolver_spacing < self.writeback_stage:
            raise ValueError(
                "reg_read_stage + revolver_spacing must cover writeback_stage without forwarding"
            )
        if self.simt_lanes not in (0, 2, 4, 8, 16):
            raise ValueError("simt lanes must be one of 2, 4, 8, 16")
        if self.dma_scale < 1:
            raise ValueError("dma_scale must be >= 1")

    @property
    def interlocked(self) -> bool:
        """Issue spacing set by dependences rather than the fixed revolver distance."""
        return self.forwarding or self.simt_lanes > 0


@dataclass(slots=True, eq=False)
class Decoded:
    instr: Instruction
    op: str
    shape: Shape
    cat: Category
    dst: int | None
    s1: int | None
    s2: int | None
    imm: int | None
    lock: int | None
    reads: tuple
    writes: tuple
    conflict: bool
    control: bool
    width: int
    text: str
    port: int            # structural resource: 1 = WRAM port, 2 = DMA engine


def predecode(word: int) -> Decoded:
    instr = decode(word)
    info = instr.info
    reads = tuple(dict.fromkeys(instr.reads()))
    banks = [parity(r) for r in reads]
    conflict = len(banks) != len(set(banks))
    return Decoded(
        instr, instr.op, info.shape, info.category, instr.dst, instr.src1, instr.src2, instr.imm,
        instr.lock, reads, instr.writes(), conflict,
        info.shape in (Shape.BRANCH, Shape.JUMP, Shape.ACQUIRE), info.width, str(instr),
        1 if info.shape in (Shape.LOAD, Shape.STORE) else 2 if info.shape is Shape.DMA else 0,
    )


@dataclass(eq=False)
class Tasklet:
    id: int
    pc: int
    regs: list[int]
    stack_base: int
    stack_limit: int
    live: bool = True              # still fetching instructions
    retire_at: int | None = None   # cycle the stop (or fault) takes effect
    fault: SimFault | None = None
    issued: int = 0
    starve: int = 0


@dataclass(eq=False)
class Unit:
    index: int
    lanes: list[Tasklet]
    rev_at: int = 0
    mem_at: int = 0
    ready_at: int = 0
    pending: int = 0
    pending_max: int = 0
    wait_kind: TaskletState = TaskletState.BLOCKED_MEM
    reg_ready: list[int] = field(default_factory=lambda: [0] * NUM_REGISTERS)
    dec: Decoded | None = None
    exec_lanes: list[Tasklet] = field(default_factory=list)
    pc: int = 0
    finish_at: int | None = None   # all lanes retired: cycles >= finish_at are not attributed
    issues: int = 0

    @property
    def done(self) -> bool:
        return self.finish_at is not None


_MASK = WORD_MASK


def _s32(v: int) -> int:
    return v - (1 << 32) if v & 0x80000000 else v


_ALU: dict[str, Callable[[int, int], int]] = {
    "add": lambda a, b: (a + b) & _MASK,
    "sub": lambda a, b: (a - b) & _MASK,
    "and": lambda a, b: a & b,
    "or": lambda a, b: a | b,
    "xor": lambda a, b: a ^ b,
    "lsl": lambda a, b: (a << (b & 31)) & _MASK,
    "lsr": lambda a, b: a >> (b & 31),
    "asr": lambda a, b: (_s32(a) >> (b & 31)) & _MASK,
    "mul": lambda a, b: (a * b) & _MASK,
    "cmpeq": lambda a, b: int(a == b),
    "cmplt": lambda a, b: int(_s32(a) < _s32(b)),
    "cmpltu": lambda a, b: int(a < b),
}
_BRANCH: dict[str, Callable[[int, int], bool]] = {
    "beq": lambda a, b: a == b,
    "bne": lambda a, b: a != b,
    "blt": lambda a, b: _s32(a) < _s32(b),
    "bge": lambda a, b: _s32(a) >= _s32(b),
}


class Dpu:
    def __init__(
        self,
        config: PipelineConfig | None = None,
        address_map: AddressMap = DEFAULT_MAP,
        mmu: MmuConfig | None = None,
        cache: CacheConfig | None = None,
        dram: DramTiming | None = None,
        age_cap: int = 2000,
        dpu_id: int = 0,
        tlp_window: int = 10_000,
    ):
        self.config = config or PipelineConfig()
        self.map = address_map
        self.dpu_id = dpu_id
        self.clocks = ClockDomains(self.config.frequency_mhz)
        self.wram = bytearray(address_map.wram_size)
        self.mram = SparseMemory(address_map.mram_base, address_map.mram_size)
        self.program: list[Decoded | IllegalInstruction] = []
        self.entry = 0
        self.image: MemoryImage | None = None

        self.mmu_config = mmu or MmuConfig()
        self.cache_config = cache or CacheConfig()
        self.dram = dram
        self.age_cap = age_cap
        self.tlp_window = tlp_window
        self.trace: list[str] = []
        self.issue_log: list[tuple[int, int, int]] | None = None   # (cycle, tasklet, pc) when enabled
        self.launches = 0
        self._reset_timing()

    def _reset_timing(self) -> None:
        """Fresh pipeline, memory-system and statistics state; memory contents persist."""
        m = self.map
        self.events: list[tuple[int, int, Callable[[int], None]]] = []
        self._evseq = 0
        self.controller = MemoryController(self.dram, self.age_cap)
        self.mmu: Mmu | None = None
        if self.mmu_config.enabled:
            cfg = self.mmu_config
            if self.launches:
                cfg = replace(cfg, prefault="none")   # the table already lives in MRAM
            self.mmu = Mmu(cfg, self.mram, self.controller, self.clocks, self.schedule,
                           m.mram_base, m.mram_size, m.page_table_base)
        self.dma = DmaEngine(self.controller, self.clocks, self.config.dma_scale, self.schedule,
                             m.mram_base, self.mmu)
        self.port = WramPort()
        self.dcache: Cache | None = None
        self.icache: Cache | None = None
        if self.cache_config.enabled:
            self.dcache = Cache(self.cache_config.dcache, self.cache_config.mshrs, self._dcache_fill)
            if self.cache_config.icache_enabled:
                self.icache = Cache(self.cache_config.icache, self.cache_config.mshrs, self._icache_fill)
        self.units: list[Unit] = []
        self.tasklets: list[Tasklet] = []
        self.atomic = [None] * NUM_LOCKS
        self.cycle = 0
        self.rr = 0
        self.finished = False
        self.booted = False
        self.stats = CycleStats(
            issue_width=self.config.issue_width,
            lanes=max(1, self.config.simt_lanes),
            frequency_mhz=self.config.frequency_mhz,
            dma_peak_bytes_per_cycle=700 * self.config.dma_scale / self.config.frequency_mhz,
        )
        self.stats.tlp.window = self.tlp_window

    # ------------------------------------------------------------------
    # loading and boot

    def load(self, image: MemoryImage) -> None:
        if image.address_map != self.map:
            raise BootError("image linked for a different address map")
        m = self.map
        wram = image.payload(RegionKind.WRAM)
        self.wram[: len(wram)] = wram
        mram = image.payload(RegionKind.MRAM)
        if mram:
            self.mram.write(m.mram_base, mram)
        atomic = image.payload(RegionKind.ATOMIC)
        for bit in range(min(len(atomic) * 8, NUM_LOCKS)):
            if atomic[bit // 8] >> (bit % 8) & 1:
                self.atomic[bit] = -1
        iram = image.iram
        self.program = []
        for off in range(0, len(iram) - len(iram) % INSTRUCTION_BYTES, INSTRUCTION_BYTES):
            word = int.from_bytes(iram[off:off + INSTRUCTION_BYTES], "little")
            try:
                self.program.append(predecode(word))
            except IllegalInstruction as exc:
                self.program.append(exc)
        self.entry = image.entry - m.iram_base
        self.image = image

    def boot(self, threads: int) -> None:
        if self.image is None:
            raise BootError("no image loaded")
        if not 1 <= threads <= MAX_TASKLETS:
            raise BootError(f"thread count {threads} outside 1..{MAX_TASKLETS}")
        if threads > self.image.threads:
            raise BootError(f"image reserves stacks for {self.image.threads} threads, {threads} requested")
        if not 0 <= self.entry < len(self.program) * INSTRUCTION_BYTES:
            raise BootError("image has no entry point inside its code")
        if self.launches:
            self._reset_timing()
        self.launches += 1
        spt = self.map.stack_per_thread
        self.tasklets = []
        for tid in range(threads):
            base = self.image.stack_of(tid)
            regs = [0] * NUM_REGISTERS
            regs[0] = tid
            regs[STACK_REGISTER] = base
            self.tasklets.append(Tasklet(tid, self.entry, regs, base, base + spt))
        lanes = self.config.simt_lanes or 1
        self.units = [
            Unit(i, self.tasklets[i * lanes:(i + 1) * lanes]) for i in range(-(-threads // lanes))
        ]
        for u in self.units:
            self._prepare(u)
        self.booted = True

    def state_of(self, tid: int, cycle: int | None = None) -> TaskletState:
        """Scheduler view of one tasklet at ``cycle`` (default: now)."""
        c = self.cycle if cycle is None else cycle
        if tid >= len(self.tasklets):
            return TaskletState.STOPPED
        t = self.tasklets[tid]
        if not t.live:
            return TaskletState.STOPPED if t.retire_at is None or c >= t.retire_at else TaskletState.RUNNING
        u = self.units[tid // (self.config.simt_lanes or 1)]
        if u.pending:
            return u.wait_kind
        if c < u.rev_at:
            return TaskletState.BLOCKED_REVOLVER
        if c < u.mem_at:
            return TaskletState.BLOCKED_MEM
        if c < u.ready_at:
            return TaskletState.BLOCKED_RF
        return TaskletState.READY

    # ------------------------------------------------------------------
    # events

    def schedule(self, cycle: int, fn: Callable[[int], None]) -> None:
        heapq.heappush(self.events, (cycle, self._evseq, fn))
        self._evseq += 1

    def _fire_events(self, c: int) -> None:
        ev = self.events
        while ev and ev[0][0] <= c:
            at, _, fn = heapq.heappop(ev)
            try:
                fn(max(at, c) if at < c else at)
            except FatalFault as exc:
                self._fault_owner(exc.owner, SimFault(0, str(exc)), c)

    # ------------------------------------------------------------------
    # unit readiness

    def _prepare(self, u: Unit) -> None:
        """Elect the next pc of ``u`` and compute when it may issue."""
        live = [t for t in u.lanes if t.live]
        if not live:
            u.dec = None
            u.exec_lanes = []
            u.ready_at = INF
            if u.finish_at is None:
                u.finish_at = max((t.retire_at or 0) for t in u.lanes) + 1
                u.rev_at = u.finish_at
                u.mem_at = 0
            return
        if len(live) == 1:
            pc = live[0].pc
            lanes = live
        else:
            starving = [t for t in live if t.starve >= self.config.starvation_cap]
            pool = starving or live
            pc = min(t.pc for t in pool)
            lanes = [t for t in live if t.pc == pc]
        u.pc = pc
        u.exec_lanes = lanes
        idx, rem = divmod(pc, INSTRUCTION_BYTES)
        dec = self.program[idx] if (not rem and 0 <= idx < len(self.program)) else None
        if not isinstance(dec, Decoded):
            u.dec = None     # faults when it issues
            u.ready_at = max(u.rev_at, u.mem_at)
            return
        u.dec = dec
        if self.config.interlocked:
            rr = u.reg_ready
            for r in dec.reads:
                if rr[r] > u.rev_at:
                    u.rev_at = rr[r]
        pen = 1 if dec.conflict and not self.config.unified_rf else 0
        u.ready_at = (u.mem_at if u.mem_at > u.rev_at else u.rev_at) + pen if u.mem_at < INF else INF

    def _block(self, u: Unit, kind: TaskletState, count: int = 1) -> None:
        u.pending += count
        u.wait_kind = kind
        u.mem_at = INF
        u.ready_at = INF

    def _wake(self, u: Unit, cycle: int) -> None:
        u.pending -= 1
        if cycle > u.pending_max:
            u.pending_max = cycle
        if u.pending == 0:
            u.mem_at = u.pending_max
            u.pending_max = 0
            self._prepare(u)

    # ------------------------------------------------------------------
    # main loop

    def step(self) -> bool:
        """Advance exactly one DPU cycle; returns False once the DPU has halted."""
        if not self.booted:
            raise BootError("boot the DPU before stepping")
        if self.finished:
            return False
        c = self.cycle
        self._cycle(c)
        if self._all_retired_by(c):
            self._finish(c)
            return False
        self.cycle = c + 1
        return True

    def run(self, max_cycles: int | None = None) -> CycleStats:
        if not self.booted:
            raise BootError("boot the DPU before running")
        c = self.cycle
        while not self.finished:
            self._cycle(c)
            if not any(t.live for t in self.tasklets):
                end = max(t.retire_at for t in self.tasklets)
                if end > c:
                    self._account_idle(c + 1, end + 1)
                self._finish(end)
                break
            nxt = self._next_cycle(c)
            if max_cycles is not None and nxt >= max_cycles:
                raise SimError(f"DPU {self.dpu_id}: cycle budget {max_cycles} exhausted")
            if nxt > c + 1:
                self._account_idle(c + 1, nxt)
            c = nxt
            self.cycle = c
        return self.stats

    def _all_retired_by(self, c: int) -> bool:
        return all((not t.live) and t.retire_at <= c for t in self.tasklets)

    def _finish(self, end: int) -> None:
        self.finished = True
        self.cycle = end
        st = self.stats
        st.total_cycles = end + 1
        st.dma_read_bytes = self.dma.bytes_read
        st.dma_write_bytes = self.dma.bytes_written
        st.dram_read_bytes = self.controller.bytes_read
        st.dram_write_bytes = self.controller.bytes_written
        if self.dcache is not None:
            cs = self.dcache.stats
            st.cache = {
                "hits": cs.hits, "misses": cs.misses, "fills": cs.fills, "writebacks": cs.writebacks,
                "merged": cs.merged, "bytes_read_counter": cs.bytes_read_counter,
                "fill_bytes": cs.fills * self.dcache.geo.line,
            }
            if self.icache is not None:
                ic = self.icache.stats
                st.cache.update({"icache_hits": ic.hits, "icache_misses": ic.misses, "icache_fills": ic.fills})
        if self.mmu is not None:
            ms = self.mmu.stats
            st.mmu = {"translations": ms.translations, "tlb_hits": self.mmu.tlb.hits,
                      "tlb_misses": self.mmu.tlb.misses, "walks": ms.walks, "faults": ms.faults}

    def _next_cycle(self, c: int) -> int:
        nxt = INF
        for u in self.units:
            if u.ready_at < nxt:
                nxt = u.ready_at
        if nxt <= c:
            return c + 1
        if self.events and self.events[0][0] < nxt:
            nxt = self.events[0][0]
        t = self.controller.next_decision()
        if t is not None:
            nxt = min(nxt, self.clocks.decided_at(t))
        if nxt >= INF:
            raise SimError(f"DPU {self.dpu_id}: deadlock at cycle {c}, no runnable tasklet or pending event")
        return max(nxt, c + 1)

    def _cycle(self, c: int) -> None:
        if self.events and self.events[0][0] <= c:
            self._fire_events(c)
        issued = self._issue(c)
        if self.controller.queue:
            self.controller.advance(self.clocks.limit(c))
        if issued:
            self.stats.active_cycles += 1
        else:
            self._account_idle(c, c + 1)

    # ------------------------------------------------------------------
    # idle attribution

    def _account_idle(self, a: int, b: int) -> None:
        rev: list[tuple[int, int]] = []
        rf: list[tuple[int, int]] = []
        for u in self.units:
            if u.finish_at is not None:
                if u.finish_at > a:
                    rev.append((a, min(b, u.finish_at)))
                continue
            if u.pending:
                continue
            lo = max(a, u.mem_at)
            hi = min(b, u.rev_at)
            if lo < hi:
                rev.append((lo, hi))
            lo = max(a, u.rev_at, u.mem_at)
            hi = min(b, u.ready_at)
            if lo < hi:
                rf.append((lo, hi))
        n = b - a
        rev_u = _union(rev)
        n_rev = sum(h - l for l, h in rev_u)
        n_rf = 0
        if rf:
            rf_u = _union(rf)
            n_rf = sum(h - l for l, h in rf_u) - _overlap(rf_u, rev_u)
        st = self.stats
        st.idle["REVOLVER"] += n_rev
        st.idle["RF"] += n_rf
        st.idle["MEMORY"] += n - n_rev - n_rf
        st.tlp.sample(0, n)

    # ------------------------------------------------------------------
    # issue

    def _issue(self, c: int) -> int:
        cands = [u for u in self.units if u.ready_at <= c]
        if not cands:
            return 0
        rr = self.rr
        if rr and len(cands) > 1:
            for i, u in enumerate(cands):
                if u.index >= rr:
                    break
            else:
                i = 0
            if i:
                cands = cands[i:] + cands[:i]
        width = self.config.issue_width
        issued = 0
        tlp = 0
        used = 0     # structural bits: 1 = WRAM port, 2 = DMA engine
        port_busy = self.port.busy_until > c
        for u in cands:
            dec = u.dec
            port = dec.port if dec is not None else 0
            if port == 1 and port_busy:
                continue
            if issued >= width or port & used:
                tlp += len(u.exec_lanes)
                continue
            if self.icache is not None and not self._fetch(u, c):
                continue
            tlp += len(u.exec_lanes)
            used |= port
            self._execute_unit(u, c)
            issued += 1
            self.rr = u.index + 1 if u.index + 1 < len(self.units) else 0
        if issued:
            self.stats.tlp.sample(tlp if tlp < MAX_TASKLETS else MAX_TASKLETS)
        return issued

    def _fetch(self, u: Unit, c: int) -> bool:
        addr = self.map.code_shadow_base + u.pc
        if self.icache.access(addr, 1, False, c, lambda at, u=u: self._wake(u, at)) is not None:
            return True
        self._block(u, TaskletState.BLOCKED_MEM)
        return False

    def _execute_unit(self, u: Unit, c: int) -> None:
        dec = u.dec
        lanes = u.exec_lanes
        cfg = self.config
        u.issues += 1
        if dec is None:
            for t in lanes:
                self._fault_lane(t, SimFault(t.pc, self._fetch_error(t.pc), t.id), c)
            u.rev_at = c + 1
            self._prepare(u)
            return
        for t in u.lanes:
            if t.live:
                t.starve = 0 if t in lanes else t.starve + 1
        mem: list[tuple[Tasklet, int, int, bool]] = []
        dma: list[tuple[Tasklet, DmaPart]] = []
        executed = 0
        for t in lanes:
            try:
                self._execute(dec, t, c, mem, dma)
            except SimFault as exc:
                self._fault_lane(t, exc, c)
                continue
            executed += 1
            t.issued += 1
        st = self.stats
        st.issued += executed
        st.mix[dec.cat.value] += executed
        if cfg.trace:
            self.trace.append(f"{c} u{u.index} pc=0x{u.pc:x} {dec.text} lanes={[t.id for t in lanes]}")
        if self.issue_log is not None:
            for t in lanes:
                self.issue_log.append((c, t.id, u.pc))

        if cfg.interlocked:
            base = c + (cfg.forward_distance if dec.control else 1)
            ready = c + cfg.forward_distance
            rr = u.reg_ready
            for r in dec.writes:
                rr[r] = ready
        else:
            base = c + cfg.revolver_spacing
        u.rev_at = base
        u.mem_at = 0
        if mem:
            self._memory_timing(u, c, mem)
        if dma:
            self._start_dma(u, c, dma)
        self._prepare(u)

    def _fetch_error(self, pc: int) -> str:
        idx, rem = divmod(pc, INSTRUCTION_BYTES)
        if rem or not 0 <= idx < len(self.program):
            return "pc outside program"
        return str(self.program[idx])

    # ------------------------------------------------------------------
    # functional semantics

    def _execute(self, dec: Decoded, t: Tasklet, c: int, mem: list, dma: list) -> None:
        regs = t.regs
        op = dec.op
        shape = dec.shape
        nxt = t.pc + INSTRUCTION_BYTES
        if shape is Shape.RRX:
            b = regs[dec.s2] if dec.imm is None else dec.imm & _MASK
            regs[dec.dst] = _ALU[op](regs[dec.s1], b)
        elif shape is Shape.LOAD or shape is Shape.STORE:
            addr = (regs[dec.s1] + dec.imm) & _MASK
            width = dec.width
            if addr % width:
                raise SimFault(t.pc, f"misaligned {width}-byte access at 0x{addr:08x}", t.id)
            raw = self._data_bytes(addr, width, t)
            if shape is Shape.LOAD:
                if width == 8:
                    regs[dec.dst] = int.from_bytes(raw[:4], "little")
                    regs[dec.dst + 1] = int.from_bytes(raw[4:], "little")
                else:
                    v = int.from_bytes(raw, "little")
                    if width < 4 and v >> (8 * width - 1):
                        v = (v - (1 << (8 * width))) & _MASK
                    regs[dec.dst] = v
            else:
                if width == 8:
                    data = regs[dec.s2].to_bytes(4, "little") + regs[dec.s2 + 1].to_bytes(4, "little")
                else:
                    data = (regs[dec.s2] & ((1 << (8 * width)) - 1)).to_bytes(width, "little")
                self._data_write(addr, data)
            mem.append((t, addr, width, shape is Shape.STORE))
        elif shape is Shape.BRANCH:
            if _BRANCH[op](regs[dec.s1], regs[dec.s2]):
                nxt = dec.imm
        elif shape is Shape.RX:
            regs[dec.dst] = regs[dec.s1] if dec.imm is None else dec.imm & _MASK
        elif shape is Shape.JUMP:
            nxt = dec.imm
        elif shape is Shape.DMA:
            wram, mram, n = regs[dec.s1], regs[dec.s2], dec.imm
            m = self.map
            if wram % 8 or mram % 8:
                raise SimFault(t.pc, f"DMA addresses must be 8-byte aligned (0x{wram:x}, 0x{mram:x})", t.id)
            if not m.contains(RegionKind.WRAM, wram, n):
                raise SimFault(t.pc, f"DMA WRAM range 0x{wram:08x}+{n} out of bounds", t.id)
            if not m.contains(RegionKind.MRAM, mram, n):
                raise SimFault(t.pc, f"DMA MRAM range 0x{mram:08x}+{n} out of bounds", t.id)
            dma.append((t, DmaPart(wram, mram, n)))
        elif shape is Shape.ACQUIRE:
            if self.atomic[dec.lock] is None:
                self.atomic[dec.lock] = t.id
            else:
                nxt = dec.imm
        elif shape is Shape.RELEASE:
            self.atomic[dec.lock] = None
        elif shape is Shape.R:
            regs[dec.dst] = t.id
        elif op == "stop":
            t.live = False
            t.retire_at = c + self.config.stages
        t.pc = nxt

    def _data_bytes(self, addr: int, width: int, t: Tasklet) -> bytes:
        m = self.map
        if self.dcache is not None:
            if not m.contains(RegionKind.MRAM, addr, width):
                raise SimFault(t.pc, f"cache mode: load/store at 0x{addr:08x} outside the DRAM-backed region", t.id)
            return self._mram_read_virtual(addr, width)
        if not m.contains(RegionKind.WRAM, addr, width):
            raise SimFault(t.pc, f"load/store at 0x{addr:08x} outside WRAM", t.id)
        off = addr - m.wram_base
        return bytes(self.wram[off:off + width])

    def _data_write(self, addr: int, data: bytes) -> None:
        if self.dcache is not None:
            self._mram_write_virtual(addr, data)
        else:
            off = addr - self.map.wram_base
            self.wram[off:off + len(data)] = data

    # ------------------------------------------------------------------
    # timing of memory instructions

    def _memory_timing(self, u: Unit, c: int, mem: list) -> None:
        st = self.stats
        if self.dcache is not None:
            self._cache_timing(u, c, mem)
            return
        if self.config.simt_lanes:
            if self.config.coalescing:
                ntx = len({addr // SIMT_BLOCK for _, addr, _, _ in mem})
            else:
                ntx = len(mem)
            done = self.port.access(c, 1, ntx)
            self.port.bytes_moved += sum(w for _, _, w, _ in mem) - ntx
        else:
            ntx = len(mem)
            done = self.port.access(c, mem[0][2])
        st.wram_transactions += ntx
        st.wram_bytes += sum(w for _, _, w, _ in mem)
        if done > c + 1:
            u.mem_at = done

    def _cache_timing(self, u: Unit, c: int, mem: list) -> None:
        line = self.dcache.geo.line
        if self.config.coalescing or not self.config.simt_lanes:
            groups: dict[int, tuple[int, int, bool]] = {}
            for _, addr, w, wr in mem:
                la = addr // line
                prev = groups.get(la)
                groups[la] = (addr, w, wr or (prev[2] if prev else False))
            reqs = list(groups.values())
        else:
            reqs = [(addr, w, wr) for _, addr, w, wr in mem]
        done = self.port.access(c, 1, len(reqs))
        self.stats.wram_transactions += len(reqs)
        misses = 0
        for addr, w, wr in reqs:
            if self.dcache.access(addr, w, wr, c, lambda at, u=u: self._wake(u, at)) is None:
                misses += 1
        if misses:
            self._block(u, TaskletState.BLOCKED_MEM, misses)
        elif done > c + 1:
            u.mem_at = done

    def _start_dma(self, u: Unit, c: int, reqs: list[tuple[Tasklet, DmaPart]]) -> None:
        is_write = u.dec.op == "sdma"
        if self.config.simt_lanes and self.config.coalescing:
            jobs = [[p for _, p in reqs]]
        else:
            jobs = [[p] for _, p in reqs]
        self._block(u, TaskletState.BLOCKED_DMA, len(jobs))
        for parts in jobs:
            job = DmaJob(is_write, parts, owner=u, on_done=self._dma_done)
            self.dma.submit(job, c)

    def _dma_done(self, job: DmaJob, cycle: int) -> None:
        m = self.map
        for p in job.parts:
            w = p.wram - m.wram_base
            if job.is_write:
                self._mram_write_virtual(p.mram, bytes(self.wram[w:w + p.size]))
            else:
                self.wram[w:w + p.size] = self._mram_read_virtual(p.mram, p.size)
        self._wake(job.owner, cycle)

    # ------------------------------------------------------------------
    # MRAM data path (functional translation when the MMU is on)

    def _pages(self, addr: int, n: int):
        base = self.map.mram_base
        while n > 0:
            k = min(n, PAGE_BYTES - (addr - base) % PAGE_BYTES)
            yield addr, k
            addr += k
            n -= k

    def _phys(self, vaddr: int) -> int:
        if self.mmu is None:
            return vaddr
        vpn = self.mmu.vpn_of(vaddr)
        ppn = self.mmu.read_pte(vpn)
        if ppn is None:
            raise SimFault(0, f"data access to unmapped page 0x{vaddr:08x}")
        return self.mmu.phys(vaddr, ppn)

    def _mram_read_virtual(self, addr: int, n: int) -> bytes:
        if self.mmu is None:
            return self.mram.read(addr, n)
        return b"".join(self.mram.read(self._phys(a), k) for a, k in self._pages(addr, n))

    def _mram_write_virtual(self, addr: int, data: bytes) -> None:
        if self.mmu is None:
            self.mram.write(addr, data)
            return
        pos = 0
        for a, k in self._pages(addr, len(data)):
            self.mram.write(self._phys(a), data[pos:pos + k])
            pos += k

    # ------------------------------------------------------------------
    # cache fills

    def _dcache_fill(self, line_addr: int, victim: int | None, cycle: int, on_fill) -> None:
        def go(paddr: int, at: int) -> None:
            arrival = self.clocks.to_dram(at)
            base = self.map.mram_base
            if victim is not None:
                self.controller.request(self._phys(victim) - base, self.dcache.geo.line, True, arrival, "writeback")
            self.controller.request(
                paddr - base, self.dcache.geo.line, False, arrival, "fill",
                lambda txn: self.schedule(self.clocks.to_dpu(txn.completion), on_fill),
            )

        if self.mmu is not None:
            self.mmu.translate(line_addr, cycle, None, go)
        else:
            go(line_addr, cycle)

    def _icache_fill(self, line_addr: int, victim: int | None, cycle: int, on_fill) -> None:
        arrival = self.clocks.to_dram(cycle)
        self.controller.request(
            line_addr - self.map.mram_base, self.icache.geo.line, False, arrival, "ifill",
            lambda txn: self.schedule(self.clocks.to_dpu(txn.completion), on_fill),
        )

    # ------------------------------------------------------------------
    # faults

    def _fault_lane(self, t: Tasklet, exc: SimFault, c: int) -> None:
        if exc.tasklet is None:
            exc.tasklet = t.id
        t.fault = exc
        t.live = False
        t.retire_at = c
        self.stats.faults.append(f"dpu {self.dpu_id}: {exc}")

    def _fault_owner(self, owner, exc: SimFault, c: int) -> None:
        if isinstance(owner, Unit):
            for t in owner.lanes:
                if t.live:
                    self._fault_lane(t, SimFault(t.pc, exc.reason, t.id), c)
            owner.pending = 0
            owner.mem_at = c
            self._prepare(owner)
        else:
            raise exc

    @property
    def faults(self) -> list[SimFault]:
        return [t.fault for t in self.tasklets if t.fault is not None]

    # ------------------------------------------------------------------
    # inspection helpers

    def read(self, addr: int, n: int) -> bytes:
        """Architectural memory read (WRAM or MRAM, physical)."""
        m = self.map
        if m.contains(RegionKind.WRAM, addr, n):
            off = addr - m.wram_base
            return bytes(self.wram[off:off + n])
        return self.mram.read(addr, n)

    def write(self, addr: int, data: bytes) -> None:
        m = self.map
        if m.contains(RegionKind.WRAM, addr, len(data)):
            off = addr - m.wram_base
            self.wram[off:off + len(data)] = data
        else:
            self.mram.write(addr, data)


def _union(ivs: list[tuple[int, int]]) -> list[tuple[int, int]]:
    if not ivs:
        return []
    ivs = sorted(ivs)
    out = [list(ivs[0])]
    for lo, hi in ivs[1:]:
        if lo <= out[-1][1]:
            if hi > out[-1][1]:
                out[-1][1] = hi
        else:
            out.append([lo, hi])
    return [(lo, hi) for lo, hi in out]


def _overlap(a: list[tuple[int, int]], b: list[tuple[int, int]]) -> int:
    i = j = total = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if lo < hi:
            total += hi - lo
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return total


def boot(dpu: Dpu, image: MemoryImage, threads: int) -> None:
    dpu.load(image)
    dpu.boot(threads)


def issue_select(dpu: Dpu, cycle: int | None = None) -> list[int]:
    """Tasklet ids that the scheduler would issue at ``cycle`` without side effects."""
    c = dpu.cycle if cycle is None else cycle
    units = dpu.units
    n = len(units)
    cands = sorted((u for u in units if u.ready_at <= c), key=lambda u: (u.index - dpu.rr) % n)
    out: list[int] = []
    used_port = False
    for u in cands:
        if len(out) >= dpu.config.issue_width:
            break
        dec = u.dec
        if dec is not None and dec.shape in (Shape.LOAD, Shape.STORE):
            if dpu.port.busy_until > c or used_port:
                continue
            used_port = True
        out.append(u.lanes[0].id if not dpu.config.simt_lanes else u.index)
    return out


def step(dpu: Dpu) -> bool:
    return dpu.step()


def execute(instr: Instruction, regs: list[int], tasklet_id: int = 0, pc: int = 0) -> int:
    """Pure ALU/control semantics of one instruction on a register list; returns the next pc.

    Memory, DMA and synchronisation instructions need a DPU and are rejected.
    """
    dec = predecode(_encode(instr))
    if dec.shape in (Shape.LOAD, Shape.STORE, Shape.DMA, Shape.ACQUIRE, Shape.RELEASE):
        raise ValueError(f"{instr.op} needs a DPU context")
    t = Tasklet(tasklet_id, pc, regs, 0, 0)
    Dpu._execute(None, dec, t, 0, [], [])  # type: ignore[arg-type]
    return t.pc


def _encode(instr: Instruction) -> int:
    from .isa import encode

    return encode(instr)
