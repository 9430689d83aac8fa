"""Host model: DPU sets, fixed-bandwidth CPU<->DPU transfers, launches and phase accounting.

Transfers use a per-DPU bandwidth; a broadcast or scatter to many DPUs
takes as long as the largest per-DPU share.  Phases run back to back, so
the end-to-end time is their sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .config import RunConfig
from .core import Dpu, SimError, SimFault
from .frontend.image import MemoryImage
from .frontend.layout import RegionKind
from .memsys import BoundsFault
from .stats import CycleStats

DPUS_PER_CHIP = 8
CHIPS_PER_RANK = 8


class Phase(str, Enum):
    CPU_TO_DPU = "CPU→DPU"
    KERNEL = "KERNEL"
    DPU_TO_CPU = "DPU→CPU"
    DPU_TO_DPU = "DPU-to-DPU(via host)"


@dataclass(frozen=True)
class TransferModel:
    write_gbps: float = 0.296    # CPU -> DPU, per DPU
    read_gbps: float = 0.063     # DPU -> CPU, per DPU

    def write_seconds(self, nbytes: int) -> float:
        return nbytes / (self.write_gbps * 1e9)

    def read_seconds(self, nbytes: int) -> float:
        return nbytes / (self.read_gbps * 1e9)


@dataclass
class RunPhase:
    label: Phase
    start: float
    end: float
    bytes: int = 0
    cycles: int = 0

    @property
    def seconds(self) -> float:
        return self.end - self.start

    def to_dict(self) -> dict:
        return {"label": self.label.value, "start": self.start, "end": self.end,
                "seconds": self.seconds, "bytes": self.bytes, "cycles": self.cycles}


class DpuFault(SimFault):
    """A tasklet fault surfaced at the host, tagged with its DPU."""

    def __init__(self, dpu_id: int, fault: SimFault):
        Exception.__init__(self, f"DPU {dpu_id}: {fault}")
        self.pc, self.reason, self.tasklet = fault.pc, fault.reason, fault.tasklet
        self.dpu_id = dpu_id
        self.fault = fault


@dataclass
class DpuSet:
    dpus: list[Dpu]
    config: RunConfig
    transfer: TransferModel
    phases: list[RunPhase] = field(default_factory=list)
    clock: float = 0.0
    image: MemoryImage | None = None
    kernel_stats: list[list[CycleStats]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.dpus)

    def topology(self, dpu_id: int) -> tuple[int, int, int]:
        """(rank, chip, slot) bookkeeping position of a DPU."""
        rank, rest = divmod(dpu_id, DPUS_PER_CHIP * CHIPS_PER_RANK)
        chip, slot = divmod(rest, DPUS_PER_CHIP)
        return rank, chip, slot

    def _phase(self, label: Phase, seconds: float, nbytes: int = 0, cycles: int = 0) -> float:
        phase = RunPhase(label, self.clock, self.clock + seconds, nbytes, cycles)
        self.phases.append(phase)
        self.clock = phase.end
        return seconds

    def load(self, image: MemoryImage) -> None:
        for dpu in self.dpus:
            dpu.load(image)
        self.image = image

    def _address(self, dpu: Dpu, region: RegionKind | str, offset: int, size: int) -> int:
        kind = RegionKind(region)
        if kind not in (RegionKind.WRAM, RegionKind.MRAM):
            raise BoundsFault(f"host transfers reach WRAM or MRAM, not {kind.value}")
        m = dpu.map
        addr = m.base(kind) + offset
        if offset < 0 or not m.contains(kind, addr, max(size, 1)):
            raise BoundsFault(f"{kind.value} transfer at offset 0x{offset:x} of {size} bytes is out of range")
        return addr

    def write_region(self, dpu: Dpu, region, offset: int, data: bytes) -> None:
        dpu.write(self._address(dpu, region, offset, len(data)), data)

    def copy_to_dpus(self, buffers: bytes | Sequence[bytes], region: RegionKind | str = RegionKind.MRAM,
                     offset: int = 0) -> float:
        """Scatter one buffer per DPU (or broadcast a single buffer); returns elapsed seconds."""
        if isinstance(buffers, (bytes, bytearray)):
            buffers = [bytes(buffers)] * len(self.dpus)
        if len(buffers) != len(self.dpus):
            raise ValueError(f"{len(buffers)} buffers for {len(self.dpus)} DPUs")
        for dpu, buf in zip(self.dpus, buffers):
            if buf:
                self.write_region(dpu, region, offset, bytes(buf))
        largest = max((len(b) for b in buffers), default=0)
        return self._phase(Phase.CPU_TO_DPU, self.transfer.write_seconds(largest), sum(len(b) for b in buffers))

    def copy_from_dpus(self, region: RegionKind | str, offset: int,
                       size: int | Sequence[int]) -> tuple[list[bytes], float]:
        sizes = [size] * len(self.dpus) if isinstance(size, int) else list(size)
        if len(sizes) != len(self.dpus):
            raise ValueError(f"{len(sizes)} sizes for {len(self.dpus)} DPUs")
        out = []
        for dpu, n in zip(self.dpus, sizes):
            out.append(dpu.read(self._address(dpu, region, offset, n), n) if n else b"")
        largest = max(sizes, default=0)
        elapsed = self._phase(Phase.DPU_TO_CPU, self.transfer.read_seconds(largest), sum(sizes))
        return out, elapsed

    def launch(self, threads: int, max_cycles: int | None = None) -> list[CycleStats]:
        """Run every DPU to halt; the KERNEL phase lasts as long as the slowest DPU."""
        if self.image is None:
            raise SimError("no image loaded into the DPU set")
        results = []
        for dpu in self.dpus:
            dpu.boot(threads)
            try:
                stats = dpu.run(max_cycles)
            except SimError as exc:
                raise SimError(f"DPU {dpu.dpu_id}: {exc}") from exc
            if dpu.faults:
                raise DpuFault(dpu.dpu_id, dpu.faults[0])
            results.append(stats)
        cycles = max(s.total_cycles for s in results)
        freq = self.dpus[0].config.frequency_mhz
        self._phase(Phase.KERNEL, cycles / (freq * 1e6), cycles=cycles)
        self.kernel_stats.append(results)
        return results

    def relay(self, dst: "DpuSet", src_region, src_offset: int, dst_region, dst_offset: int,
              size: int, src_ids: Sequence[int] | None = None, dst_ids: Sequence[int] | None = None) -> float:
        """Copy ``size`` bytes from each source DPU through the host to the paired destination DPU."""
        src_ids = list(range(len(self.dpus))) if src_ids is None else list(src_ids)
        dst_ids = list(range(len(dst.dpus))) if dst_ids is None else list(dst_ids)
        if len(src_ids) != len(dst_ids):
            raise ValueError("relay needs one destination per source DPU")
        for s, d in zip(src_ids, dst_ids):
            if size:
                sd, dd = self.dpus[s], dst.dpus[d]
                data = sd.read(self._address(sd, src_region, src_offset, size), size)
                dst.write_region(dd, dst_region, dst_offset, data)
        if not src_ids:
            size = 0
        seconds = self.transfer.read_seconds(size) + dst.transfer.write_seconds(size)
        return self._phase(Phase.DPU_TO_DPU, seconds, size * len(src_ids))

    @property
    def elapsed(self) -> float:
        return sum(p.seconds for p in self.phases)

    def phase_totals(self) -> dict[str, float]:
        totals = {p.value: 0.0 for p in Phase}
        for ph in self.phases:
            totals[ph.label.value] += ph.seconds
        return totals


def alloc(n: int, config: RunConfig | None = None) -> DpuSet:
    if n < 1:
        raise ValueError("allocate at least one DPU")
    config = config or RunConfig()
    kwargs = config.dpu_kwargs()
    dpus = [Dpu(dpu_id=i, **kwargs) for i in range(n)]
    transfer = TransferModel(config["host.write_gbps"], config["host.read_gbps"])
    return DpuSet(dpus, config, transfer)
