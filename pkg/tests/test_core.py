"""Pipeline timing, scheduling, functional semantics, synchronisation, SIMT and ILP knobs."""

from collections import Counter, defaultdict

import pytest
from hypothesis import given, settings, strategies as st

from conftest import alu_program, make_dpu, run_source
from pimsim.core import BootError, Dpu, PipelineConfig, TaskletState, execute, issue_select, step
from pimsim.frontend import build
from pimsim.isa import Instruction
from pimsim.stats import IdleCause


def issue_cycles(log):
    per = defaultdict(list)
    for c, tid, _ in log:
        per[tid].append(c)
    return per


# -- boot -----------------------------------------------------------------------

def test_boot_states():
    dpu = make_dpu("stop", threads=1)
    assert dpu.state_of(0) is TaskletState.READY
    assert all(dpu.state_of(t) is TaskletState.STOPPED for t in range(1, 24))
    dpu = make_dpu("stop", threads=24)
    assert sorted(t.regs[0] for t in dpu.tasklets) == list(range(24))
    assert len({t.stack_base for t in dpu.tasklets}) == 24
    with pytest.raises(BootError):
        make_dpu("stop", threads=25)
    with pytest.raises(BootError):
        Dpu().boot(1)


def test_config_rejects_unsafe_pipeline():
    with pytest.raises(ValueError):
        PipelineConfig(revolver_spacing=10)
    PipelineConfig(revolver_spacing=10, forwarding=True)


# -- revolver timing ----------------------------------------------------------------

def test_closed_form_single_tasklet():
    for n in (1, 2, 10, 100):
        dpu, st_ = run_source(alu_program(n), log=True)
        assert st_.total_cycles == 11 * (n - 1) + 14 + 1
        assert dpu.issue_log[-1][0] == 11 * (n - 1)
    dpu, st_ = run_source(alu_program(100))
    assert st_.ipc == pytest.approx(100 / 1104)


def test_empty_kernel_drains_pipeline():
    _, st_ = run_source("stop")
    assert st_.total_cycles == 15


@pytest.mark.parametrize("threads", [11, 12, 16, 24])
def test_eleven_tasklets_saturate_issue(threads):
    dpu, st_ = run_source(alu_program(200), threads=threads, log=True)
    steady = [c for c, _, _ in dpu.issue_log if 100 <= c < 1900]
    assert len(steady) == 1800


def test_ten_tasklets_leave_gaps():
    _, st_ = run_source(alu_program(200), threads=10)
    assert st_.ipc == pytest.approx(10 / 11, rel=0.02)


@pytest.mark.parametrize("threads", [1, 3, 7, 16, 24])
def test_revolver_law_and_issue_bound(threads):
    src = "\n".join(["loop:", "add r1, r1, 1", "lw r3, [r23, 0]", "ldma r23, r4, 64", "bne r1, r5, loop", "stop"])
    src = "mov r5, 6\nmov r4, 0x8000000\n" + src
    dpu, st_ = run_source(src, threads=threads, log=True)
    for cycles in issue_cycles(dpu.issue_log).values():
        assert all(b - a >= 11 for a, b in zip(cycles, cycles[1:]))
    assert max(Counter(c for c, _, _ in dpu.issue_log).values()) == 1
    assert st_.issued == len(dpu.issue_log)


def test_round_robin_rotation():
    dpu, _ = run_source(alu_program(40), threads=16, log=True)
    first = [tid for _, tid, _ in dpu.issue_log[:48]]
    assert first[:16] == list(range(16))
    # each window of 16 consecutive issues covers every tasklet once
    for i in range(0, 48, 16):
        assert sorted(first[i:i + 16]) == list(range(16))


def test_issue_select_examples():
    dpu = make_dpu(alu_program(10), threads=1)
    dpu.step()
    assert issue_select(dpu, 5) == []
    assert dpu.state_of(0, 5) is TaskletState.BLOCKED_REVOLVER
    assert issue_select(dpu, 11) == [0]
    dpu = make_dpu(alu_program(10), threads=16)
    assert issue_select(dpu, 0) == [0]
    step(dpu)
    assert issue_select(dpu, 1) == [1]


def test_rf_parity_conflict_costs_a_cycle():
    n = 20
    body = "\n".join("add r1, r0, r2" for _ in range(n - 1)) + "\nstop"
    _, st_ = run_source(body)
    assert st_.total_cycles == 12 * (n - 1) + 15 - 1 + 1
    assert st_.idle["RF"] == n - 1
    _, st_ = run_source(body, unified_rf=True)
    assert st_.total_cycles == 11 * (n - 1) + 15
    assert st_.idle["RF"] == 0


def test_idle_attribution_single_thread_is_revolver():
    _, st_ = run_source(alu_program(100))
    st_.check()
    assert st_.idle[IdleCause.REVOLVER.value] / st_.total_cycles >= 0.85
    assert st_.active_cycles == 100


def test_memory_idle_attribution():
    _, st_ = run_source("mov r4, 0x8000000\nldma r23, r4, 2048\nstop")
    st_.check()
    assert st_.idle["MEMORY"] > 1000


# -- functional semantics -------------------------------------------------------------

def test_execute_alu():
    regs = [0] * 24
    regs[1], regs[2] = 3, 4
    execute(Instruction("add", dst=0, src1=1, src2=2), regs)
    assert regs[0] == 7
    regs[1] = 0
    execute(Instruction("sub", dst=3, src1=1, imm=1), regs)
    assert regs[3] == 0xFFFFFFFF
    execute(Instruction("asr", dst=4, src1=3, imm=4), regs)
    assert regs[4] == 0xFFFFFFFF
    execute(Instruction("cmplt", dst=5, src1=3, src2=1), regs)
    assert regs[5] == 1
    execute(Instruction("cmpltu", dst=5, src1=3, src2=1), regs)
    assert regs[5] == 0
    assert execute(Instruction("beq", src1=1, src2=1, imm=60), regs, pc=6) == 60
    assert execute(Instruction("bne", src1=1, src2=1, imm=60), regs, pc=6) == 12
    with pytest.raises(ValueError):
        execute(Instruction("lw", dst=1, src1=2, imm=0), regs)


def test_load_word_and_faults():
    src = ".section data\nv: .word 0xDEADBEEF\n.section text\nmov r1, v\nlw r2, [r1, 0]\nstop"
    dpu, _ = run_source(src)
    assert dpu.tasklets[0].regs[2] == 0xDEADBEEF and not dpu.faults
    dpu, st_ = run_source(src.replace("[r1, 0]", "[r1, 1]"))
    assert "misaligned" in dpu.faults[0].reason and st_.faults
    dpu, _ = run_source("mov r1, 0x30000\nlw r2, [r1, 0]\nstop")
    assert "outside WRAM" in dpu.faults[0].reason


def test_fault_halts_only_that_tasklet():
    src = "bne r0, r22, ok\nmov r1, 0x30000\nlw r2, [r1, 0]\nok: add r3, r0, 1\nstop"
    dpu, _ = run_source(src, threads=4)
    assert [f.tasklet for f in dpu.faults] == [0]
    assert [t.regs[3] for t in dpu.tasklets[1:]] == [2, 3, 4]


def test_illegal_instruction_faults():
    img = build("nop\nstop")
    img.payloads[next(iter(img.payloads))] = bytes([0, 0, 0, 0, 0, 0xFF]) + img.iram[6:]
    dpu = Dpu()
    dpu.load(img)
    dpu.boot(1)
    dpu.run()
    assert len(dpu.faults) == 1 and dpu.faults[0].pc == 0


def test_dma_blocks_tasklet():
    dpu = make_dpu("mov r4, 0x8000000\nldma r23, r4, 2048\nstop")
    while dpu.cycle <= 11:                 # mov at 0, ldma at 11
        dpu.step()
    assert dpu.state_of(0, 30) is TaskletState.BLOCKED_DMA
    dpu.run()
    assert dpu.stats.dma_read_bytes == 2048


def test_ld_sd_pairs_and_byte_ops():
    src = """
    mov r2, 0x11223344
    mov r3, 0x55667788
    sd r2, [r23, 8]
    ld r4, [r23, 8]
    mov r6, 0xAB
    sb r6, [r23, 3]
    lb r7, [r23, 3]
    lh r8, [r23, 8]
    stop"""
    dpu, _ = run_source(src)
    regs = dpu.tasklets[0].regs
    assert (regs[4], regs[5]) == (0x11223344, 0x55667788)
    assert regs[7] == 0xFFFFFFAB          # byte loads sign-extend
    assert regs[8] == 0x3344


# -- synchronisation ------------------------------------------------------------------

LOCKED_COUNTER = """
.section data
count: .word 0
.section text
    mov r1, count
    mov r2, 0
loop:
spin:
    acquire 5, spin
    lw r3, [r1, 0]
    add r3, r3, 1
    sw r3, [r1, 0]
    release 5
    add r2, r2, 1
    bne r2, r10, loop
    stop
"""


@pytest.mark.parametrize("threads", [1, 4, 16])
def test_lock_mutual_exclusion(threads):
    src = "mov r10, 10\n" + LOCKED_COUNTER
    dpu, st_ = run_source(src, threads=threads)
    count = dpu.image.symbol("count")
    assert int.from_bytes(dpu.read(count, 4), "little") == 10 * threads
    assert dpu.atomic[5] is None
    # busy-waiting retires failed acquires as SYNC instructions
    acquires = 10 * threads
    if threads > 1:
        assert st_.mix["SYNC"] > 2 * acquires
    else:
        assert st_.mix["SYNC"] == 2 * acquires


def test_atomicity_each_cycle():
    dpu = make_dpu("mov r10, 3\n" + LOCKED_COUNTER, threads=8)
    holders = set()
    while dpu.step():
        owner = dpu.atomic[5]
        holders.add(owner)
        assert sum(1 for b in dpu.atomic if b is not None) <= 1
    assert len(holders - {None}) == 8


# -- ILP knobs ----------------------------------------------------------------------

def test_forwarding_spacing():
    dpu, st_ = run_source(alu_program(100), log=True, forwarding=True)
    cycles = [c for c, _, _ in dpu.issue_log]
    assert all(b - a == 1 for a, b in zip(cycles, cycles[1:]))
    chain = "\n".join("add r1, r1, 1" for _ in range(20)) + "\nstop"
    dpu, _ = run_source(chain, log=True, forwarding=True)
    cycles = [c for c, _, _ in dpu.issue_log]
    assert all(b - a == 5 for a, b in zip(cycles[:-1], cycles[1:-1]))


def test_superscalar_issue_bound():
    dpu, st_ = run_source(alu_program(100), threads=24, log=True, issue_width=2)
    per_cycle = Counter(c for c, _, _ in dpu.issue_log)
    assert max(per_cycle.values()) == 2
    assert st_.ipc > 1.5
    pairs = defaultdict(set)
    for c, tid, _ in dpu.issue_log:
        assert tid not in pairs[c]
        pairs[c].add(tid)


def test_double_clock_halves_wall_time_per_cycle():
    _, base = run_source(alu_program(50))
    _, fast = run_source(alu_program(50), frequency_mhz=700)
    assert fast.total_cycles == base.total_cycles
    assert fast.wall_seconds == pytest.approx(base.wall_seconds / 2)


ALU_OPS = ["add", "sub", "and", "or", "xor", "lsl", "lsr", "asr", "mul", "cmpeq", "cmplt", "cmpltu"]


def reference(op, a, b):
    m = 0xFFFFFFFF
    s = lambda v: v - (1 << 32) if v & 0x80000000 else v
    return {
        "add": (a + b) & m, "sub": (a - b) & m, "and": a & b, "or": a | b, "xor": a ^ b,
        "lsl": (a << (b % 32)) & m, "lsr": a >> (b % 32), "asr": (s(a) >> (b % 32)) & m, "mul": (a * b) & m,
        "cmpeq": int(a == b), "cmplt": int(s(a) < s(b)), "cmpltu": int(a < b),
    }[op]


alu_line = st.tuples(st.sampled_from(ALU_OPS), st.integers(1, 8), st.integers(1, 8),
                     st.one_of(st.integers(1, 8), st.integers(-100, 100).map(lambda v: ("imm", v))))


@settings(max_examples=60, deadline=None)
@given(st.lists(alu_line, min_size=1, max_size=25), st.lists(st.integers(0, 0xFFFFFFFF), min_size=8, max_size=8))
def test_raw_safety_across_configurations(lines, init):
    """Dependent ALU chains compute the same registers under every timing configuration."""
    regs = [0] * 24
    src = []
    for r, v in enumerate(init, start=1):
        src.append(f"mov r{r}, {v}")
        regs[r] = v
    for op, d, a, b in lines:
        if isinstance(b, tuple):
            src.append(f"{op} r{d}, r{a}, {b[1]}")
            regs[d] = reference(op, regs[a], b[1] & 0xFFFFFFFF)
        else:
            src.append(f"{op} r{d}, r{a}, r{b}")
            regs[d] = reference(op, regs[a], regs[b])
    text = "\n".join(src + ["stop"])
    for knobs in ({}, {"forwarding": True}, {"forwarding": True, "unified_rf": True, "issue_width": 2},
                  {"simt_lanes": 4}):
        dpu, _ = run_source(text, threads=2, **knobs)
        for t in dpu.tasklets:
            assert t.regs[1:9] == regs[1:9], knobs


# -- SIMT -----------------------------------------------------------------------------

UNIT_STRIDE = ".section data\nbuf: .space 64\n.section text\nmov r4, buf\nlsl r1, r0, 2\nadd r1, r1, r4\nlw r2, [r1, 0]\nstop"


def test_coalescing_merges_unit_stride_loads():
    _, plain = run_source(UNIT_STRIDE, threads=16, simt_lanes=16)
    _, merged = run_source(UNIT_STRIDE, threads=16, simt_lanes=16, coalescing=True)
    assert plain.wram_transactions == 16
    assert merged.wram_transactions == 1


def test_divergence_masks_are_complementary():
    src = "lsr r2, r0, 3\nbne r2, r22, odd\nadd r5, r0, 100\njmp end\nodd: add r5, r0, 200\nend: stop"
    dpu, _ = run_source(src, threads=16, log=True, simt_lanes=16)
    assert [t.regs[5] for t in dpu.tasklets] == [100 + i for i in range(8)] + [200 + i for i in range(8, 16)]
    by_pc = defaultdict(list)
    for c, tid, pc in dpu.issue_log:
        by_pc[pc].append(tid)
    for pc, tids in by_pc.items():
        assert len(tids) == len(set(tids))
    assert set(by_pc[12]) | set(by_pc[24]) == set(range(16))
    assert not set(by_pc[12]) & set(by_pc[24])
    assert sorted(by_pc[30]) == list(range(16))


def test_partial_groups_and_faulting_lane():
    src = "bne r0, r22, ok\nmov r1, 0x30000\nlw r2, [r1, 0]\nok: add r3, r0, 1\nstop"
    dpu, _ = run_source(src, threads=6, simt_lanes=4)
    assert [f.tasklet for f in dpu.faults] == [0]
    assert [t.regs[3] for t in dpu.tasklets[1:]] == [2, 3, 4, 5, 6]


def test_trace_flag():
    dpu, _ = run_source(alu_program(3), trace=True)
    assert len(dpu.trace) == 3 and "stop" in dpu.trace[-1]
