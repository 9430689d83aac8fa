"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

from __future__ import annotations

import heapq
import json
import random
import time

import pytest

from conftest import ACCEPTANCE, alu_program, run_source
from oracles import Req, bank_oracle, brute_pick, permutations_upto
from pimsim import kernels
from pimsim.cli import main
from pimsim.config import RunConfig
from pimsim.frontend import RegionKind, build
from pimsim.memsys import (
    BankState, ClockDomains, DmaEngine, DmaJob, DmaPart, MemoryController, MemoryTransaction, WramPort,
    fr_fcfs_pick,
)
from pimsim.stats import IdleCause
from pimsim.system import alloc

MIB4 = 4 * 1024 * 1024


def verdict(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def config(mode) -> RunConfig:
    return RunConfig().with_ilp(mode) if isinstance(mode, str) else RunConfig(mode)


# 1 -----------------------------------------------------------------------------

def test_criterion_01_revolver_closed_form():
    t0 = time.perf_counter()
    _, st = run_source(alu_program(100))
    elapsed = time.perf_counter() - t0
    verdict(1, st.total_cycles == 1104 and elapsed < 1.0,
            f"100 ALU instructions took {st.total_cycles} cycles (expect 1104) in {elapsed:.3f} s")


# 2 -----------------------------------------------------------------------------

def alu_loop(iterations: int) -> str:
    body = [f"add r{1 + 2 * (i % 5)}, r{2 + 2 * (i % 5)}, {i}" for i in range(10)]
    return "\n".join([f"mov r20, 0\nmov r21, {iterations}\nloop:", *body,
                      "add r20, r20, 1", "bne r20, r21, loop", "stop"])


def test_criterion_02_ipc_saturation():
    details, ok = [], True
    for threads in (11, 16, 24):
        iterations = -(-100_000 // (threads * 12))
        _, st = run_source(alu_loop(iterations), threads=threads)
        ok &= st.total_cycles >= 100_000 and abs(st.ipc - 1.0) <= 0.02
        details.append(f"{threads} tasklets IPC {st.ipc:.4f} over {st.total_cycles} cycles")
    verdict(2, ok, "; ".join(details))


# 3 -----------------------------------------------------------------------------

def random_stream(rng: random.Random, n: int) -> list[Req]:
    reqs, t = [], 0
    for i in range(n):
        t += rng.choice([0, 0, 1, 3, 10, 40, 100])
        size = rng.choice([8, 32, 64, 256, 1024])
        col = rng.randrange(0, 1024 - size + 1, 8)
        reqs.append(Req(t, rng.randrange(4) * 1024 + col, size, i))
    return reqs


def test_criterion_03_dram_timing_exact():
    rng = random.Random(2024)
    bad = 0
    for _ in range(1000):
        reqs = random_stream(rng, rng.randint(1, 30))
        ctrl = MemoryController()
        txns = {r.seq: ctrl.request(r.address, r.size, False, r.arrival) for r in reqs}
        ctrl.drain()
        bad += {s: t.completion for s, t in txns.items()} != bank_oracle(reqs)
    latencies = []
    for row_before, addr in ((0, 0), (None, 0), (0, 4096)):
        bank = BankState(open_row=row_before)
        ctrl = MemoryController()
        ctrl.bank = bank
        t = ctrl.request(addr, 32, False, 0)
        ctrl.drain()
        latencies.append(t.completion)
    verdict(3, bad == 0 and latencies == [20, 36, 52],
            f"{1000 - bad}/1000 streams match the bank oracle; hit/closed/conflict = {latencies}")


# 4 -----------------------------------------------------------------------------

def test_criterion_04_fr_fcfs_ordering():
    old, hit_a, hit_b = (MemoryTransaction(a, 32, False, t, seq=i)
                         for i, (a, t) in enumerate([(0, 0), (1024, 1), (1024 + 64, 2)]))
    scenario = fr_fcfs_pick([old, hit_a, hit_b], BankState(open_row=1)) is hit_a
    rng = random.Random(5)
    checked = mismatches = 0
    for _ in range(20):
        reqs = [Req(rng.randrange(4), rng.randrange(3) * 1024 + rng.randrange(32) * 32, 32, i) for i in range(5)]
        for open_row in (None, 0, 1, 2):
            for perm in permutations_upto(reqs, 5):
                txns = [MemoryTransaction(r.address, 32, False, r.arrival, seq=r.seq) for r in perm]
                got = fr_fcfs_pick(txns, BankState(open_row=open_row))
                mismatches += got.seq != brute_pick(perm, open_row).seq
                checked += 1
    verdict(4, scenario and mismatches == 0,
            f"oldest row hit chosen: {scenario}; {checked - mismatches}/{checked} permutations agree")


# 5 -----------------------------------------------------------------------------

def dma_completion(size: int) -> int:
    events, seq = [], [0]

    def schedule(cycle, fn):
        heapq.heappush(events, (cycle, seq[0], fn))
        seq[0] += 1

    ctrl = MemoryController()
    dma = DmaEngine(ctrl, ClockDomains(), 1, schedule)
    job = DmaJob(False, [DmaPart(0, 0, size)])
    dma.submit(job, 0)
    while events or ctrl.queue:
        ctrl.drain()
        if events:
            c, _, fn = heapq.heappop(events)
            fn(c)
    return job.completion


def test_criterion_05_bandwidth_ceilings():
    port = WramPort()
    for c in range(10_000):
        port.access(c, 8)
    stream = port.bytes_moved / port.busy_until
    store = "\n".join(["mov r20, 0", "mov r21, 64", "loop:", "sd r2, [r23, 0]", "sd r2, [r23, 8]",
                       "add r20, r20, 1", "bne r20, r21, loop", "stop"])
    _, st = run_source(store, threads=16, config=RunConfig().with_ilp("DRS"))
    core = st.wram_bytes / st.total_cycles
    rates = {size: size / dma_completion(size) for size in (2048, 8192, 65536)}
    ok = stream <= 4 and core <= 4 and all(r <= 2 for r in rates.values()) and rates[2048] >= 0.9 * 2
    verdict(5, ok, f"WRAM {stream:.2f} B/cycle (port), {core:.2f} B/cycle (16 tasklets storing); "
                   + ", ".join(f"DMA {k} B {v:.3f} B/cycle" for k, v in rates.items()))


# 6 -----------------------------------------------------------------------------

def test_criterion_06_transfer_law():
    ds = alloc(1)
    ds.load(build("stop"))
    write = ds.copy_to_dpus(bytes(MIB4), RegionKind.MRAM, 0)
    _, read = ds.copy_from_dpus(RegionKind.MRAM, 0, MIB4)
    rng = random.Random(6)
    law = True
    for _ in range(50):
        size = rng.randrange(0, 1 << 20)
        law &= ds.copy_to_dpus(bytes(size)) == size / 0.296e9
        law &= ds.copy_from_dpus(RegionKind.MRAM, 0, size)[1] == size / 0.063e9
    ok = law and round(write * 1e3, 2) == 14.17 and round(read * 1e3, 2) == 66.58
    verdict(6, ok, f"4 MiB write {write * 1e3:.2f} ms, read {read * 1e3:.2f} ms; law exact on 50 sizes: {law}")


# 7 -----------------------------------------------------------------------------

MODES = {
    "base": {}, "D": "D", "R": "R", "S": "S", "F": "F", "DRSF": "DRSF",
    "simt16": {"simt.lanes": 16}, "simt16+coalescing": {"simt.lanes": 16, "simt.coalescing": True},
    "mmu": {"mmu.enabled": True}, "cache": {"cache.enabled": True},
}
SIZES = {"VA": 512, "RED": 512, "HST": 512, "SCAN": 512, "BS": 64, "GEMV": 32}


def test_criterion_07_kernel_correctness():
    t0 = time.perf_counter()
    runs, failures = 0, []
    for name in kernels.kernel_names():
        for mode, overrides in MODES.items():
            cfg = config(overrides)
            for threads in (1, 4, 16, 24):
                for dpus in (1, 16):
                    res = kernels.run_and_check(name, dpus, threads, cfg, n=SIZES[name])
                    runs += 1
                    if not res.ok:
                        failures.append(f"{name}/{mode}/{threads}t/{dpus}d: {res.mismatch}")
    elapsed = time.perf_counter() - t0
    verdict(7, not failures and elapsed < 300,
            f"{runs - len(failures)}/{runs} runs bit-exact in {elapsed:.0f} s" + "".join(f"; {f}" for f in failures[:3]))


# 8 -----------------------------------------------------------------------------

def baseline_cycles(res: kernels.KernelResult, cfg: RunConfig) -> float:
    """Kernel time in cycles of the baseline 350 MHz clock."""
    return res.kernel_cycles * 350 / cfg.frequency_mhz


def test_criterion_08_ilp_ablation():
    steps = ["", "D", "DR", "DRS", "DRSF"]
    details, monotone, best = [], True, 0.0
    for name in ("HST", "GEMV", "BS"):
        cycles = []
        for letters in steps:
            cfg = RunConfig().with_ilp(letters)
            res = kernels.run_and_check(name, 1, 16, cfg)
            assert res.ok
            cycles.append(baseline_cycles(res, cfg))
        monotone &= all(b <= a for a, b in zip(cycles, cycles[1:]))
        best = max(best, cycles[0] / cycles[-1])
        details.append(f"{name} " + "/".join(f"{c:.0f}" for c in cycles) + f" ({cycles[0] / cycles[-1]:.2f}x)")
    verdict(8, monotone and best >= 1.5, "base/D/DR/DRS/DRSF: " + "; ".join(details))


# 9 -----------------------------------------------------------------------------

UNIT_STRIDE = ".section data\nbuf: .space 64\n.section text\nmov r4, buf\nlsl r1, r0, 2\nadd r1, r1, r4\nlw r2, [r1, 0]\nstop"


def test_criterion_09_simt_coalescing():
    _, plain = run_source(UNIT_STRIDE, threads=16, simt_lanes=16)
    _, merged = run_source(UNIT_STRIDE, threads=16, simt_lanes=16, coalescing=True)
    simt = kernels.run_and_check("GEMV", 1, 16, RunConfig({"simt.lanes": 16}))
    both = kernels.run_and_check("GEMV", 1, 16, RunConfig({"simt.lanes": 16, "simt.coalescing": True}))
    speedup = simt.kernel_cycles / both.kernel_cycles
    ok = plain.wram_transactions == 16 * merged.wram_transactions and simt.ok and both.ok and speedup >= 1.2
    verdict(9, ok, f"unit-stride transactions {plain.wram_transactions} -> {merged.wram_transactions}; "
                   f"GEMV coalescing speedup {speedup:.2f}x")


# 10 ----------------------------------------------------------------------------

def test_criterion_10_mmu_overhead():
    details, ok = [], True
    for name in ("VA", "RED"):
        base = kernels.run_and_check(name, 1, 16, RunConfig())
        mmu = kernels.run_and_check(name, 1, 16, RunConfig({"mmu.enabled": True}))
        ratio = mmu.kernel_cycles / base.kernel_cycles
        ok &= base.ok and mmu.ok and (base.output == mmu.output).all() and ratio <= 1.05
        ok &= mmu.stats[0].mmu["walks"] > 0
        details.append(f"{name} {ratio - 1:+.2%}")
    verdict(10, ok, "MMU runtime change " + ", ".join(details) + "; outputs identical")


# 11 ----------------------------------------------------------------------------

def test_criterion_11_cache_vs_scratchpad():
    ratios = {}
    for name in ("BS", "VA", "RED"):
        spm = kernels.run_and_check(name, 1, 16, RunConfig())
        cache = kernels.run_and_check(name, 1, 16, RunConfig({"cache.enabled": True}))
        assert spm.ok and cache.ok
        ratios[name] = spm.total("dram_read_bytes") / cache.total("dram_read_bytes")
    ok = ratios["BS"] >= 2 and min(ratios["VA"], ratios["RED"]) <= 1.1
    verdict(11, ok, "scratchpad/cache DRAM read bytes " + ", ".join(f"{k} {v:.2f}x" for k, v in ratios.items()))


# 12 ----------------------------------------------------------------------------

def test_criterion_12_idle_accounting():
    runs = 0
    for name in kernels.kernel_names():
        for mode in ({}, "DRS", {"simt.lanes": 16}, {"cache.enabled": True}):
            res = kernels.run_and_check(name, 2, 8, config(mode), n=SIZES[name])
            for launch in res.launches:
                for st in launch:
                    st.check()
                    assert st.active_cycles + sum(st.idle.values()) == st.total_cycles
                    runs += 1
    _, st = run_source(alu_program(100))
    share = st.idle[IdleCause.REVOLVER.value] / st.total_cycles
    verdict(12, share >= 0.85, f"identity holds on {runs} DPU launches; single-thread REVOLVER share {share:.1%}")


# 13 ----------------------------------------------------------------------------

MANIFESTS = [
    {"kernel": "VA", "dpus": 4, "threads": 16},
    {"kernel": "HST", "dpus": 2, "threads": 8, "ilp": "DRSF"},
    {"kernel": "BS", "threads": 16, "n": 64, "config": {"cache.enabled": True}},
    {"kernel": "GEMV", "threads": 16, "n": 32, "config": {"simt.lanes": 16, "simt.coalescing": True}},
    {"kernel": "SCAN", "dpus": 3, "threads": 4, "n": 700, "config": {"mmu.enabled": True}},
]


def test_criterion_13_determinism(tmp_path):
    same = []
    for i, manifest in enumerate(MANIFESTS):
        path = tmp_path / f"m{i}.json"
        path.write_text(json.dumps(manifest))
        outs = []
        for rep in range(2):
            out = tmp_path / f"r{i}_{rep}.json"
            assert main(["run", "--manifest", str(path), "-o", str(out)]) == 0
            outs.append(out.read_bytes())
        same.append(outs[0] == outs[1])
    verdict(13, all(same), f"{sum(same)}/{len(same)} manifests gave byte-identical results JSON")
