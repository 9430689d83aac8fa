"""Encoding, decoding and validation of the instruction set."""

import pytest
from hypothesis import given, settings, strategies as st

from pimsim.isa import (
    DMA_MAX_BYTES, IMM29_MAX, IMM29_MIN, INSTRUCTION_BYTES, IRAM_SIZE, MAX_INSTRUCTIONS, NUM_LOCKS,
    NUM_REGISTERS, OPCODE_NUMBERS, OPCODES, RESERVED_OPCODE, Category, EncodingError, IllegalInstruction,
    Instruction, Shape, decode, decode_bytes, encode, encode_bytes, format_instruction, parity, validate,
)

reg = st.integers(0, NUM_REGISTERS - 1)
even_pair = st.integers(0, NUM_REGISTERS // 2 - 1).map(lambda r: 2 * r)
imm29 = st.integers(IMM29_MIN, IMM29_MAX)
target = st.integers(0, MAX_INSTRUCTIONS - 1).map(lambda i: i * INSTRUCTION_BYTES)
lock = st.integers(0, NUM_LOCKS - 1)


@st.composite
def instructions(draw) -> Instruction:
    """Random well-formed instruction of any opcode."""
    op = draw(st.sampled_from(sorted(OPCODES)))
    shape = OPCODES[op].shape
    if shape is Shape.NONE:
        return Instruction(op)
    if shape is Shape.R:
        return Instruction(op, dst=draw(reg))
    if shape is Shape.RX:
        if draw(st.booleans()):
            return Instruction(op, dst=draw(reg), src1=draw(reg))
        return Instruction(op, dst=draw(reg), imm=draw(st.integers(-(1 << 31), (1 << 32) - 1)))
    if shape is Shape.RRX:
        if draw(st.booleans()):
            return Instruction(op, dst=draw(reg), src1=draw(reg), src2=draw(reg))
        return Instruction(op, dst=draw(reg), src1=draw(reg), imm=draw(imm29))
    if shape is Shape.LOAD:
        dst = draw(even_pair) if op == "ld" else draw(reg)
        return Instruction(op, dst=dst, src1=draw(reg), imm=draw(imm29))
    if shape is Shape.STORE:
        src2 = draw(even_pair) if op == "sd" else draw(reg)
        return Instruction(op, src1=draw(reg), src2=src2, imm=draw(imm29))
    if shape is Shape.BRANCH:
        return Instruction(op, src1=draw(reg), src2=draw(reg), imm=draw(target))
    if shape is Shape.JUMP:
        return Instruction(op, imm=draw(target))
    if shape is Shape.DMA:
        size = draw(st.integers(1, DMA_MAX_BYTES // 8)) * 8
        return Instruction(op, src1=draw(reg), src2=draw(reg), imm=size)
    if shape is Shape.ACQUIRE:
        return Instruction(op, lock=draw(lock), imm=draw(target))
    return Instruction(op, lock=draw(lock))


@settings(max_examples=2000, deadline=None)
@given(instructions())
def test_round_trip(instr):
    assert validate(instr) == []
    word = encode(instr)
    assert 0 <= word < 1 << 48
    assert decode(word) == instr
    assert len(encode_bytes(instr)) == INSTRUCTION_BYTES
    assert decode_bytes(encode_bytes(instr)) == instr


@settings(max_examples=2000, deadline=None)
@given(st.integers(0, (1 << 48) - 1))
def test_decode_is_inverse_on_image(word):
    """Any word decode accepts re-encodes to itself; the rest raise IllegalInstruction."""
    try:
        instr = decode(word)
    except IllegalInstruction:
        return
    assert encode(instr) == word


def test_nop_is_all_zero():
    assert encode(Instruction("nop")) == 0
    assert decode(0) == Instruction("nop")


def test_add_field_packing():
    word = encode(Instruction("add", dst=0, src1=1, src2=2))
    assert word >> 40 == OPCODES["add"].number
    assert (word >> 35) & 31 == 0
    assert (word >> 30) & 31 == 1
    assert (word >> 29) & 1 == 0
    assert (word >> 24) & 31 == 2
    assert word & 0xFFFFFF == 0


def test_examples():
    ldma = Instruction("ldma", src1=4, src2=6, imm=256)
    assert decode(encode(ldma)) == ldma
    assert decode(encode(Instruction("stop"))) == Instruction("stop")
    with pytest.raises(IllegalInstruction):
        decode(RESERVED_OPCODE << 40)


def test_validate_examples():
    assert validate(Instruction("add", dst=0, src1=1, src2=2)) == []
    errs = validate(Instruction("add", dst=24, src1=1, src2=2))
    assert any("register index out of range" in e for e in errs)
    errs = validate(Instruction("ldma", src1=0, src2=2, imm=13))
    assert any("DMA size not multiple of 8" in e for e in errs)
    assert validate(Instruction("ldma", src1=0, src2=2, imm=2056))
    assert validate(Instruction("ldma", src1=0, src2=2, imm=0))
    assert validate(Instruction("ld", dst=3, src1=0, imm=0))
    assert validate(Instruction("acquire", lock=256, imm=0))
    assert validate(Instruction("mov", dst=1, imm=1 << 32))
    with pytest.raises(EncodingError):
        encode(Instruction("add", dst=0, src1=1))


def test_opcode_table_is_bijective_and_categorised():
    assert len(OPCODES) == len(OPCODE_NUMBERS)
    assert {op.number for op in OPCODES.values()} == set(OPCODE_NUMBERS)
    assert RESERVED_OPCODE not in OPCODE_NUMBERS
    assert all(op.number < 256 for op in OPCODES.values())
    assert {op.category for op in OPCODES.values()} == set(Category)
    assert OPCODES["ldma"].category is Category.DMA
    assert OPCODES["acquire"].category is Category.SYNC
    assert OPCODES["lw"].category is Category.LOADSTORE_WRAM


def test_capacity_and_parity():
    assert IRAM_SIZE // INSTRUCTION_BYTES == MAX_INSTRUCTIONS == 4096
    assert [parity(r) for r in range(4)] == [0, 1, 0, 1]


def test_pair_registers():
    ld = Instruction("ld", dst=4, src1=1, imm=0)
    assert ld.writes() == (4, 5)
    sd = Instruction("sd", src1=1, src2=6, imm=8)
    assert sd.reads() == (1, 6, 7)


@settings(max_examples=500, deadline=None)
@given(instructions())
def test_format_is_total(instr):
    text = format_instruction(instr)
    assert text.split()[0] == instr.op
