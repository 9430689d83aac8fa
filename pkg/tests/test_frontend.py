"""Lexer, assembler, linker, image container and disassembler."""

import pytest
from hypothesis import given, settings, strategies as st

from pimsim import kernels
from pimsim.frontend import (
    DEFAULT_MAP, FormatError, LexError, MemoryImage, ObjectFile, RegionKind, RegionOverflow, SemanticError,
    Tok, UnresolvedSymbol, assemble, build, disassemble, emit, link, load, tokenize,
)
from pimsim.isa import Instruction, decode_bytes


def kinds(tokens):
    return [(t.kind, t.value) for t in tokens if t.kind is not Tok.NEWLINE]


def test_tokenize_examples():
    assert kinds(tokenize("add r0, r1, 4 ; sum")) == [
        (Tok.IDENT, "add"), (Tok.REG, 0), (Tok.COMMA, None), (Tok.REG, 1), (Tok.COMMA, None), (Tok.INT, 4),
    ]
    assert [t.kind for t in tokenize("loop: bne r2, r3, loop") if t.kind is not Tok.NEWLINE] == [
        Tok.LABELDEF, Tok.IDENT, Tok.REG, Tok.COMMA, Tok.REG, Tok.COMMA, Tok.LABELREF,
    ]
    with pytest.raises(LexError) as exc:
        tokenize("ld r0, 0x1g")
    assert exc.value.column == 8


def test_parse_examples():
    obj = assemble("main: add r0, r1, r2\nstop")
    assert obj.section("iram").size == 12
    assert obj.symbols["main"].offset == 0
    with pytest.raises(SemanticError, match="duplicate label"):
        assemble("loop: nop\nloop: stop")
    obj = assemble(".section wram\nbuf: .space 128")
    assert bytes(obj.section("wram").data) == bytes(128)


def test_labels_are_instruction_offsets():
    img = build("a: nop\nb: nop\nc: jmp a\nstop")
    base = DEFAULT_MAP.iram_base
    assert [img.symbol(n) - base for n in "abc"] == [0, 6, 12]
    assert decode_bytes(img.iram[12:18]) == Instruction("jmp", imm=0)


def test_forward_reference_and_cross_object():
    lib = assemble(".global helper\n.section text\nhelper: stop", path="lib.s")
    main = assemble("main: jmp helper\n", path="main.s")
    img = link([main, lib])
    assert decode_bytes(img.iram[:6]).imm == 6
    with pytest.raises(UnresolvedSymbol):
        link([main])


def test_overflow_and_relocation_journal():
    src = ".section wram\nbig: .space 71680\n.section text\nmov r1, big\nstop"
    with pytest.raises(RegionOverflow):
        build(src)
    img = build(src, allow_overflow=True)
    (entry,) = img.journal
    assert entry.from_kind is RegionKind.WRAM and entry.to_kind is RegionKind.MRAM
    assert DEFAULT_MAP.contains(RegionKind.MRAM, img.symbol("big"), 71680)
    # the mov constant was patched to the relocated address
    assert decode_bytes(img.iram[:6]).imm == img.symbol("big")


def test_explicit_relocation():
    src = ".section wram\nsmall: .space 64\n.section text\nstop"
    img = build(src, relocations=["wram"])
    assert img.remapped("wram") is not None
    assert img.symbol("small") >= DEFAULT_MAP.mram_base


def test_one_instruction_image(tmp_path):
    img = build("stop")
    assert img.iram == bytes(6)[:0] + (1 << 40).to_bytes(6, "little")
    assert img.entry == DEFAULT_MAP.iram_base
    path = emit(img, tmp_path / "stop.pimg")
    blob = path.read_bytes()
    assert blob[:4] == b"PIMG"
    assert load(path) == img
    with pytest.raises(FormatError):
        MemoryImage.from_bytes(blob[:-3])
    with pytest.raises(FormatError):
        MemoryImage.from_bytes(b"XXXX" + blob[4:])


def test_link_is_deterministic_and_disjoint():
    objs = [assemble(kernels.source("VA", "spm"))]
    a, b = link(objs), link(objs)
    assert a.to_bytes() == b.to_bytes()
    for kind in RegionKind:
        data = a.payload(kind)
        if data:
            assert DEFAULT_MAP.contains(kind, a.base(kind), len(data))


@pytest.mark.parametrize("name", kernels.kernel_names())
@pytest.mark.parametrize("variant", kernels.VARIANTS)
def test_disassembly_round_trip_on_kernels(name, variant):
    img = kernels.image(name, variant)
    assert build(disassemble(img)).iram == img.iram


def test_disassembly_listing_and_illegal_word():
    img = build("add r0, r1, r2\nstop")
    lines = [ln for ln in disassemble(img).splitlines() if ln.startswith("    ")]
    assert len(lines) == 2
    assert "0x80000000" in lines[0] and "0x80000006" in lines[1]
    img.payloads[RegionKind.IRAM] = img.iram + bytes([0, 0, 0, 0, 0, 0xFF])
    text = disassemble(img)
    assert ".word 0xff0000000000" in text
    assert build(text).iram == img.iram


def test_object_json_round_trip():
    obj = assemble(kernels.source("HST", "spm"))
    again = ObjectFile.from_json(obj.to_json())
    assert link([again]).to_bytes() == link([obj]).to_bytes()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["nop", "add r1, r2, 3", "lw r4, [r1, 8]", "sub r5, r6, r7",
                                 "ldma r2, r4, 64", "acquire 3, 0", "release 3"]), min_size=1, max_size=40))
def test_random_programs_round_trip(lines):
    img = build("\n".join(lines + ["stop"]))
    assert len(img.iram) == 6 * (len(lines) + 1)
    assert build(disassemble(img)).iram == img.iram
