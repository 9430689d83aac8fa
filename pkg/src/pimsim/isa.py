"""Instruction set of the DPU: registers, opcode table, 48-bit encoding.

Word layout (bit 47 is the most significant):

    [47:40] opcode
    [39:35] field A      (register)
    [34:30] field B      (register, or high bits of a wide immediate)
    [29]    immediate flag
    [28:24] field C      (register, when the immediate flag is clear)
    [28:0]  immediate    (29-bit two's complement, when the flag is set)

Which operand lands in which field depends on the opcode's shape, see
``_pack``/``_unpack``.  Words are stored little-endian, 6 bytes each.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

NUM_REGISTERS = 24
NUM_LOCKS = 256
INSTRUCTION_BYTES = 6
IRAM_SIZE = 24 * 1024
MAX_INSTRUCTIONS = IRAM_SIZE // INSTRUCTION_BYTES
DMA_MAX_BYTES = 2048
WORD_MASK = 0xFFFFFFFF

IMM29_MIN = -(1 << 28)
IMM29_MAX = (1 << 28) - 1
IMM32_MIN = -(1 << 31)
IMM32_MAX = (1 << 32) - 1
TARGET_MAX = 0xFFFF


class EncodingError(ValueError):
    pass


class IllegalInstruction(ValueError):
    def __init__(self, word: int, reason: str = "undefined opcode"):
        super().__init__(f"illegal instruction word 0x{word:012x}: {reason}")
        self.word = word


class Category(str, Enum):
    ALU = "ALU"
    LOADSTORE_WRAM = "LOADSTORE_WRAM"
    DMA = "DMA"
    CONTROL = "CONTROL"
    SYNC = "SYNC"


class Shape(str, Enum):
    NONE = "none"        # nop, stop
    R = "r"              # id rd
    RX = "rx"            # mov rd, rs | imm32
    RRX = "rrx"          # alu rd, rs, rt | imm29
    LOAD = "load"        # lw rd, [rs, imm]
    STORE = "store"      # sw rt, [rs, imm]
    BRANCH = "branch"    # beq rs, rt, target
    JUMP = "jump"        # jmp target
    DMA = "dma"          # ldma rw, rm, bytes
    ACQUIRE = "acquire"  # acquire lock, target
    RELEASE = "release"  # release lock


@dataclass(frozen=True)
class OpInfo:
    mnemonic: str
    number: int
    shape: Shape
    category: Category
    width: int = 0  # access size in bytes for loads/stores


_OPS = [
    OpInfo("nop", 0x00, Shape.NONE, Category.CONTROL),
    OpInfo("stop", 0x01, Shape.NONE, Category.CONTROL),
    OpInfo("id", 0x02, Shape.R, Category.CONTROL),
    OpInfo("mov", 0x03, Shape.RX, Category.ALU),
    OpInfo("add", 0x10, Shape.RRX, Category.ALU),
    OpInfo("sub", 0x11, Shape.RRX, Category.ALU),
    OpInfo("and", 0x12, Shape.RRX, Category.ALU),
    OpInfo("or", 0x13, Shape.RRX, Category.ALU),
    OpInfo("xor", 0x14, Shape.RRX, Category.ALU),
    OpInfo("lsl", 0x15, Shape.RRX, Category.ALU),
    OpInfo("lsr", 0x16, Shape.RRX, Category.ALU),
    OpInfo("asr", 0x17, Shape.RRX, Category.ALU),
    OpInfo("mul", 0x18, Shape.RRX, Category.ALU),
    OpInfo("cmpeq", 0x19, Shape.RRX, Category.ALU),
    OpInfo("cmplt", 0x1A, Shape.RRX, Category.ALU),
    OpInfo("cmpltu", 0x1B, Shape.RRX, Category.ALU),
    OpInfo("beq", 0x20, Shape.BRANCH, Category.CONTROL),
    OpInfo("bne", 0x21, Shape.BRANCH, Category.CONTROL),
    OpInfo("blt", 0x22, Shape.BRANCH, Category.CONTROL),
    OpInfo("bge", 0x23, Shape.BRANCH, Category.CONTROL),
    OpInfo("jmp", 0x24, Shape.JUMP, Category.CONTROL),
    OpInfo("lb", 0x30, Shape.LOAD, Category.LOADSTORE_WRAM, 1),
    OpInfo("lh", 0x31, Shape.LOAD, Category.LOADSTORE_WRAM, 2),
    OpInfo("lw", 0x32, Shape.LOAD, Category.LOADSTORE_WRAM, 4),
    OpInfo("ld", 0x33, Shape.LOAD, Category.LOADSTORE_WRAM, 8),
    OpInfo("sb", 0x38, Shape.STORE, Category.LOADSTORE_WRAM, 1),
    OpInfo("sh", 0x39, Shape.STORE, Category.LOADSTORE_WRAM, 2),
    OpInfo("sw", 0x3A, Shape.STORE, Category.LOADSTORE_WRAM, 4),
    OpInfo("sd", 0x3B, Shape.STORE, Category.LOADSTORE_WRAM, 8),
    OpInfo("ldma", 0x40, Shape.DMA, Category.DMA),
    OpInfo("sdma", 0x41, Shape.DMA, Category.DMA),
    OpInfo("acquire", 0x50, Shape.ACQUIRE, Category.SYNC),
    OpInfo("release", 0x51, Shape.RELEASE, Category.SYNC),
]

OPCODES: dict[str, OpInfo] = {op.mnemonic: op for op in _OPS}
OPCODE_NUMBERS: dict[int, OpInfo] = {op.number: op for op in _OPS}
RESERVED_OPCODE = 0xFF

assert len(OPCODES) == len(OPCODE_NUMBERS) == len(_OPS)
assert RESERVED_OPCODE not in OPCODE_NUMBERS


def parity(reg: int) -> int:
    """Register-file bank of a register: 0 for the even RF, 1 for the odd RF."""
    return reg & 1


def to_signed32(value: int) -> int:
    value &= WORD_MASK
    return value - (1 << 32) if value & 0x80000000 else value


@dataclass(frozen=True)
class Instruction:
    """A decoded instruction.

    ``imm`` carries the single immediate: ALU/load/store offset, branch or
    acquire target (IRAM byte offset), DMA byte count, or the wide ``mov``
    constant.  ``lock`` is only used by acquire/release.
    """

    op: str
    dst: int | None = None
    src1: int | None = None
    src2: int | None = None
    imm: int | None = None
    lock: int | None = None

    def __post_init__(self):
        info = OPCODES.get(self.op)
        if info is not None and info.shape is Shape.RX and self.imm is not None:
            # wide constants are canonicalised to signed 32-bit so that
            # decode(encode(i)) == i holds for 0x80000000.. as well
            if IMM32_MIN <= self.imm <= IMM32_MAX:
                object.__setattr__(self, "imm", to_signed32(self.imm))

    @property
    def info(self) -> OpInfo:
        return OPCODES[self.op]

    @property
    def category(self) -> Category:
        return OPCODES[self.op].category

    @property
    def width(self) -> int:
        return OPCODES[self.op].width

    @property
    def well_formed(self) -> bool:
        return not validate(self)

    def reads(self) -> tuple[int, ...]:
        """Registers read at the register-read stage."""
        shape = OPCODES[self.op].shape
        if shape in (Shape.RX, Shape.RRX):
            return tuple(r for r in (self.src1, self.src2) if r is not None)
        if shape is Shape.LOAD:
            return (self.src1,)
        if shape is Shape.STORE:
            if self.op == "sd":
                return (self.src1, self.src2, self.src2 + 1)
            return (self.src1, self.src2)
        if shape in (Shape.BRANCH, Shape.DMA):
            return (self.src1, self.src2)
        return ()

    def writes(self) -> tuple[int, ...]:
        shape = OPCODES[self.op].shape
        if shape in (Shape.R, Shape.RX, Shape.RRX):
            return (self.dst,)
        if shape is Shape.LOAD:
            return (self.dst, self.dst + 1) if self.op == "ld" else (self.dst,)
        return ()

    def __str__(self) -> str:
        return format_instruction(self)


def _operands(instr: Instruction) -> dict[str, object]:
    shape = OPCODES[instr.op].shape
    present = {
        "dst": instr.dst is not None,
        "src1": instr.src1 is not None,
        "src2": instr.src2 is not None,
        "imm": instr.imm is not None,
        "lock": instr.lock is not None,
    }
    required: dict[Shape, set[str]] = {
        Shape.NONE: set(),
        Shape.R: {"dst"},
        Shape.RX: {"dst"},
        Shape.RRX: {"dst", "src1"},
        Shape.LOAD: {"dst", "src1", "imm"},
        Shape.STORE: {"src1", "src2", "imm"},
        Shape.BRANCH: {"src1", "src2", "imm"},
        Shape.JUMP: {"imm"},
        Shape.DMA: {"src1", "src2", "imm"},
        Shape.ACQUIRE: {"lock", "imm"},
        Shape.RELEASE: {"lock"},
    }
    return {"shape": shape, "present": present, "required": required[shape]}


def validate(instr: Instruction) -> list[str]:
    """Return the list of violations; empty means the instruction is well formed."""
    info = OPCODES.get(instr.op)
    if info is None:
        return [f"unknown mnemonic {instr.op!r}"]
    errors: list[str] = []
    ops = _operands(instr)
    shape = ops["shape"]
    present = ops["present"]
    for name in ops["required"]:
        if not present[name]:
            errors.append(f"{instr.op}: missing operand {name}")

    allowed = set(ops["required"])
    if shape is Shape.RX:
        allowed |= {"src1", "imm"}
        if present["src1"] == present["imm"]:
            errors.append(f"{instr.op}: needs exactly one of register or immediate source")
    elif shape is Shape.RRX:
        allowed |= {"src2", "imm"}
        if present["src2"] == present["imm"]:
            errors.append(f"{instr.op}: needs exactly one of register or immediate second operand")
    for name, is_set in present.items():
        if is_set and name not in allowed:
            errors.append(f"{instr.op}: unexpected operand {name}")

    for name in ("dst", "src1", "src2"):
        reg = getattr(instr, name)
        if reg is not None and not 0 <= reg < NUM_REGISTERS:
            errors.append(f"register index out of range: r{reg}")

    if instr.op in ("ld", "sd"):
        pair = instr.dst if instr.op == "ld" else instr.src2
        if pair is not None and (pair % 2 or pair + 1 >= NUM_REGISTERS):
            errors.append(f"{instr.op}: 64-bit access needs an even register pair, got r{pair}")

    imm = instr.imm
    if imm is not None:
        if shape is Shape.RX:
            if not IMM32_MIN <= imm <= IMM32_MAX:
                errors.append("immediate does not fit in 32 bits")
        elif shape in (Shape.RRX, Shape.LOAD, Shape.STORE):
            if not IMM29_MIN <= imm <= IMM29_MAX:
                errors.append("immediate does not fit in 29 bits")
        elif shape in (Shape.BRANCH, Shape.JUMP, Shape.ACQUIRE):
            if not 0 <= imm < IRAM_SIZE:
                errors.append("branch target outside IRAM")
            elif imm % INSTRUCTION_BYTES:
                errors.append("branch target not instruction aligned")
        elif shape is Shape.DMA:
            if imm % 8:
                errors.append("DMA size not multiple of 8")
            if not 8 <= imm <= DMA_MAX_BYTES:
                errors.append(f"DMA size outside [8, {DMA_MAX_BYTES}]")

    if instr.lock is not None and not 0 <= instr.lock < NUM_LOCKS:
        errors.append(f"atomic bit index out of range: {instr.lock}")
    return errors


def _imm29(value: int) -> int:
    return value & 0x1FFFFFFF


def _from_imm29(field: int) -> int:
    return field - (1 << 29) if field & (1 << 28) else field


def encode(instr: Instruction) -> int:
    errors = validate(instr)
    if errors:
        raise EncodingError(f"{instr!r}: " + "; ".join(errors))
    info = OPCODES[instr.op]
    a = b = c = flag = imm = 0
    shape = info.shape
    if shape is Shape.R:
        a = instr.dst
    elif shape is Shape.RX:
        a = instr.dst
        if instr.imm is None:
            b = instr.src1
        else:
            wide = instr.imm & WORD_MASK
            flag = 1
            b = wide >> 29
            imm = wide & 0x1FFFFFFF
    elif shape is Shape.RRX:
        a, b = instr.dst, instr.src1
        if instr.imm is None:
            c = instr.src2
        else:
            flag, imm = 1, _imm29(instr.imm)
    elif shape is Shape.LOAD:
        a, b, flag, imm = instr.dst, instr.src1, 1, _imm29(instr.imm)
    elif shape is Shape.STORE:
        a, b, flag, imm = instr.src2, instr.src1, 1, _imm29(instr.imm)
    elif shape in (Shape.BRANCH, Shape.DMA):
        a, b, flag, imm = instr.src1, instr.src2, 1, instr.imm
    elif shape is Shape.JUMP:
        flag, imm = 1, instr.imm
    elif shape in (Shape.ACQUIRE, Shape.RELEASE):
        a, b = instr.lock >> 5, instr.lock & 31
        if shape is Shape.ACQUIRE:
            flag, imm = 1, instr.imm
    word = info.number << 40 | a << 35 | b << 30 | flag << 29
    word |= imm if flag else c << 24
    return word


def decode(word: int) -> Instruction:
    """Inverse of encode; words outside encode's image raise IllegalInstruction."""
    instr = _decode_fields(word)
    errors = validate(instr)
    if errors:
        raise IllegalInstruction(word, "; ".join(errors))
    return instr


def _decode_fields(word: int) -> Instruction:
    if not 0 <= word < 1 << 48:
        raise IllegalInstruction(word & ((1 << 48) - 1), "word wider than 48 bits")
    info = OPCODE_NUMBERS.get(word >> 40)
    if info is None:
        raise IllegalInstruction(word)
    a = (word >> 35) & 31
    b = (word >> 30) & 31
    flag = (word >> 29) & 1
    c = (word >> 24) & 31
    low = word & 0x1FFFFFFF
    shape = info.shape
    op = info.mnemonic

    def clean(fields_used: int) -> None:
        # bits outside the shape's fields must be zero, otherwise the word is not in encode's image
        if word & ~fields_used & ((1 << 40) - 1):
            raise IllegalInstruction(word, "nonzero unused field")

    A, B, F, C, I = 31 << 35, 31 << 30, 1 << 29, 31 << 24, 0x1FFFFFFF
    if shape is Shape.NONE:
        clean(0)
        return Instruction(op)
    if shape is Shape.R:
        clean(A)
        return Instruction(op, dst=a)
    if shape is Shape.RX:
        if flag:
            clean(A | 7 << 30 | F | I)   # only three high bits of the constant live in B
            return Instruction(op, dst=a, imm=to_signed32(b << 29 | low))
        clean(A | B)
        return Instruction(op, dst=a, src1=b)
    if shape is Shape.RRX:
        if flag:
            clean(A | B | F | I)
            return Instruction(op, dst=a, src1=b, imm=_from_imm29(low))
        clean(A | B | C)
        return Instruction(op, dst=a, src1=b, src2=c)
    if not flag and shape is not Shape.RELEASE:
        raise IllegalInstruction(word, "immediate flag clear")
    if shape is Shape.LOAD:
        clean(A | B | F | I)
        return Instruction(op, dst=a, src1=b, imm=_from_imm29(low))
    if shape is Shape.STORE:
        clean(A | B | F | I)
        return Instruction(op, src1=b, src2=a, imm=_from_imm29(low))
    if shape in (Shape.BRANCH, Shape.DMA):
        clean(A | B | F | I)
        return Instruction(op, src1=a, src2=b, imm=low)
    if shape is Shape.JUMP:
        clean(F | I)
        return Instruction(op, imm=low)
    lock = a << 5 | b
    if shape is Shape.ACQUIRE:
        clean(A | B | F | I)
        return Instruction(op, lock=lock, imm=low)
    clean(A | B)
    return Instruction(op, lock=lock)


def encode_bytes(instr: Instruction) -> bytes:
    return encode(instr).to_bytes(INSTRUCTION_BYTES, "little")


def decode_bytes(data: bytes) -> Instruction:
    if len(data) != INSTRUCTION_BYTES:
        raise IllegalInstruction(0, f"expected {INSTRUCTION_BYTES} bytes, got {len(data)}")
    return decode(int.from_bytes(data, "little"))


def format_instruction(instr: Instruction) -> str:
    """Render in the assembler's syntax; the result reassembles to the same word."""
    shape = OPCODES[instr.op].shape if instr.op in OPCODES else None
    r = "r{}".format
    if shape is Shape.NONE:
        return instr.op
    if shape is Shape.R:
        return f"{instr.op} {r(instr.dst)}"
    if shape is Shape.RX:
        src = r(instr.src1) if instr.imm is None else str(instr.imm)
        return f"{instr.op} {r(instr.dst)}, {src}"
    if shape is Shape.RRX:
        last = r(instr.src2) if instr.imm is None else str(instr.imm)
        return f"{instr.op} {r(instr.dst)}, {r(instr.src1)}, {last}"
    if shape is Shape.LOAD:
        return f"{instr.op} {r(instr.dst)}, [{r(instr.src1)}, {instr.imm}]"
    if shape is Shape.STORE:
        return f"{instr.op} {r(instr.src2)}, [{r(instr.src1)}, {instr.imm}]"
    if shape is Shape.BRANCH:
        return f"{instr.op} {r(instr.src1)}, {r(instr.src2)}, {instr.imm}"
    if shape is Shape.JUMP:
        return f"{instr.op} {instr.imm}"
    if shape is Shape.DMA:
        return f"{instr.op} {r(instr.src1)}, {r(instr.src2)}, {instr.imm}"
    if shape is Shape.ACQUIRE:
        return f"{instr.op} {instr.lock}, {instr.imm}"
    if shape is Shape.RELEASE:
        return f"{instr.op} {instr.lock}"
    return f"<{instr.op}?>"
