"""Two-pass assembler: token stream -> ObjectFile.

Pass one walks the statements, sizes sections and collects label offsets;
pass two builds instructions and records relocations for symbol operands.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..isa import INSTRUCTION_BYTES, OPCODES, Instruction, Shape, validate
from .layout import RegionKind
from .lexer import SourceUnit, Tok, Token, tokenize
from .objects import ObjectFile, Relocation, RelocKind, Section, Symbol


class ParseError(Exception):
    def __init__(self, message: str, token: Token | None = None, path: str = "<string>"):
        where = f"{path}:{token.line}:{token.column}: " if token is not None else f"{path}: "
        super().__init__(where + message)
        self.token = token


class SemanticError(ParseError):
    pass


_SECTION_KINDS = {
    "text": RegionKind.IRAM,
    "iram": RegionKind.IRAM,
    "wram": RegionKind.WRAM,
    "data": RegionKind.WRAM,
    "mram": RegionKind.MRAM,
    "atomic": RegionKind.ATOMIC,
}
_RELOC_FUNCS = {"lo16": RelocKind.LO16, "hi16": RelocKind.HI16}


@dataclass
class _SymRef:
    name: str
    kind: RelocKind | None  # None: pick the default for the operand slot


@dataclass
class _Mem:
    base: int
    offset: int | _SymRef


@dataclass
class _Statement:
    labels: list[Token]
    head: Token | None
    args: list[Token]


def _split_statements(tokens: list[Token]) -> list[_Statement]:
    out: list[_Statement] = []
    labels: list[Token] = []
    head: Token | None = None
    args: list[Token] = []
    for tok in tokens:
        if tok.kind is Tok.NEWLINE:
            if labels or head is not None:
                out.append(_Statement(labels, head, args))
            labels, head, args = [], None, []
        elif tok.kind is Tok.LABELDEF and head is None:
            labels.append(tok)
        elif head is None and tok.kind in (Tok.IDENT, Tok.DIRECTIVE):
            head = tok
        elif head is None:
            raise ParseError(f"expected mnemonic or directive, got {tok!r}", tok)
        else:
            args.append(tok)
    if labels or head is not None:
        out.append(_Statement(labels, head, args))
    return out


class _OperandReader:
    def __init__(self, stmt: _Statement, path: str):
        self.toks = stmt.args
        self.head = stmt.head
        self.pos = 0
        self.path = path

    def error(self, msg: str) -> ParseError:
        tok = self.toks[self.pos] if self.pos < len(self.toks) else self.head
        return ParseError(f"{self.head.value}: {msg}", tok, self.path)

    def peek(self) -> Token | None:
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def take(self, kind: Tok) -> Token:
        tok = self.peek()
        if tok is None or tok.kind is not kind:
            raise self.error(f"expected {kind.value}, got {tok!r}" if tok else f"expected {kind.value}")
        self.pos += 1
        return tok

    def comma(self) -> None:
        self.take(Tok.COMMA)

    def reg(self) -> int:
        return self.take(Tok.REG).value

    def symref(self) -> _SymRef:
        name = self.take(Tok.LABELREF).value
        if self.peek() is not None and self.peek().kind is Tok.LPAREN:
            if name not in _RELOC_FUNCS:
                raise self.error(f"unknown relocation operator {name!r}")
            self.pos += 1
            inner = self.take(Tok.LABELREF).value
            self.take(Tok.RPAREN)
            return _SymRef(inner, _RELOC_FUNCS[name])
        return _SymRef(name, None)

    def value(self) -> int | _SymRef:
        tok = self.peek()
        if tok is not None and tok.kind is Tok.INT:
            self.pos += 1
            return tok.value
        if tok is not None and tok.kind is Tok.LABELREF:
            return self.symref()
        raise self.error(f"expected integer or symbol, got {tok!r}")

    def reg_or_value(self) -> int | _SymRef | tuple[str, int]:
        tok = self.peek()
        if tok is not None and tok.kind is Tok.REG:
            self.pos += 1
            return ("reg", tok.value)
        return self.value()

    def mem(self) -> _Mem:
        if self.peek() is not None and self.peek().kind is Tok.LBRACKET:
            self.pos += 1
            base = self.reg()
            offset: int | _SymRef = 0
            if self.peek() is not None and self.peek().kind is Tok.COMMA:
                self.pos += 1
                offset = self.value()
            self.take(Tok.RBRACKET)
            return _Mem(base, offset)
        base = self.reg()
        offset = 0
        if self.peek() is not None and self.peek().kind is Tok.COMMA:
            self.pos += 1
            offset = self.value()
        return _Mem(base, offset)

    def done(self) -> None:
        if self.pos != len(self.toks):
            raise self.error(f"unexpected trailing operand {self.toks[self.pos]!r}")


def _parse_instruction(stmt: _Statement, path: str) -> tuple[Instruction, _SymRef | None]:
    mnemonic = stmt.head.value.lower()
    info = OPCODES.get(mnemonic)
    if info is None:
        raise SemanticError(f"unknown mnemonic {mnemonic!r}", stmt.head, path)
    rd = _OperandReader(stmt, path)
    shape = info.shape
    fields: dict[str, object] = {}
    imm: int | _SymRef | None = None

    if shape is Shape.R:
        fields["dst"] = rd.reg()
    elif shape in (Shape.RX, Shape.RRX):
        fields["dst"] = rd.reg()
        rd.comma()
        if shape is Shape.RRX:
            fields["src1"] = rd.reg()
            rd.comma()
        src = rd.reg_or_value()
        if isinstance(src, tuple):
            fields["src2" if shape is Shape.RRX else "src1"] = src[1]
        else:
            imm = src
    elif shape is Shape.LOAD:
        fields["dst"] = rd.reg()
        rd.comma()
        mem = rd.mem()
        fields["src1"], imm = mem.base, mem.offset
    elif shape is Shape.STORE:
        fields["src2"] = rd.reg()
        rd.comma()
        mem = rd.mem()
        fields["src1"], imm = mem.base, mem.offset
    elif shape in (Shape.BRANCH, Shape.DMA):
        fields["src1"] = rd.reg()
        rd.comma()
        fields["src2"] = rd.reg()
        rd.comma()
        imm = rd.value()
    elif shape is Shape.JUMP:
        imm = rd.value()
    elif shape in (Shape.ACQUIRE, Shape.RELEASE):
        fields["lock"] = rd.take(Tok.INT).value
        if shape is Shape.ACQUIRE:
            rd.comma()
            imm = rd.value()
    rd.done()

    ref = None
    if isinstance(imm, _SymRef):
        ref = imm
        if ref.kind is None:
            ref.kind = RelocKind.LO16 if shape in (Shape.BRANCH, Shape.JUMP, Shape.ACQUIRE) else RelocKind.ABS32
        if shape is Shape.DMA:
            raise SemanticError("DMA size must be a literal", stmt.head, path)
        imm = 0
    if imm is not None:
        fields["imm"] = imm
    instr = Instruction(mnemonic, **fields)
    errors = validate(instr)
    if errors:
        raise SemanticError(f"{mnemonic}: " + "; ".join(errors), stmt.head, path)
    return instr, ref


def parse(tokens: list[Token], path: str = "<string>") -> ObjectFile:
    stmts = _split_statements(tokens)
    obj = ObjectFile(path=path)
    sections: dict[str, Section] = {}

    def switch(name: str, kind: RegionKind) -> Section:
        if name not in sections:
            sections[name] = Section(name, kind)
            obj.sections.append(sections[name])
        elif sections[name].kind is not kind:
            raise SemanticError(f"section {name!r} redeclared with another kind", None, path)
        return sections[name]

    current = switch("iram", RegionKind.IRAM)
    pending_relocs: list[tuple[Section, int, _SymRef, Token]] = []
    globals_declared: list[Token] = []

    for stmt in stmts:
        for lab in stmt.labels:
            if lab.value in obj.symbols:
                raise SemanticError(f"duplicate label {lab.value!r}", lab, path)
            obj.symbols[lab.value] = Symbol(lab.value, current.name, current.size)
        head = stmt.head
        if head is None:
            continue
        if head.kind is Tok.DIRECTIVE:
            directive = head.value.lower()
            args = stmt.args
            if directive == ".section":
                names = [t.value for t in args if t.kind in (Tok.LABELREF, Tok.IDENT)]
                if not names or len(names) > 2 or any(
                    t.kind not in (Tok.LABELREF, Tok.IDENT, Tok.COMMA) for t in args
                ):
                    raise ParseError(".section expects a region kind and optional name", head, path)
                kind = _SECTION_KINDS.get(names[0].lower())
                if kind is None:
                    raise SemanticError(f"unknown section kind {names[0]!r}", head, path)
                name = names[1] if len(names) == 2 else ("iram" if kind is RegionKind.IRAM else names[0].lower())
                current = switch(name, kind)
            elif directive == ".global":
                if not args or any(t.kind not in (Tok.LABELREF, Tok.COMMA) for t in args):
                    raise ParseError(".global expects symbol names", head, path)
                globals_declared.extend(t for t in args if t.kind is Tok.LABELREF)
            elif directive == ".space":
                if len(args) != 1 or args[0].kind is not Tok.INT or args[0].value < 0:
                    raise ParseError(".space expects a non-negative size", head, path)
                if current.kind is RegionKind.IRAM:
                    raise SemanticError(".space is not allowed in IRAM sections", head, path)
                current.data.extend(bytes(args[0].value))
            elif directive == ".word":
                values = [t for t in args if t.kind is not Tok.COMMA]
                if not values or any(t.kind not in (Tok.INT, Tok.LABELREF) for t in values):
                    raise ParseError(".word expects integers or symbols", head, path)
                for tok in values:
                    if current.kind is RegionKind.IRAM:
                        if tok.kind is not Tok.INT or not 0 <= tok.value < 1 << 48:
                            raise SemanticError("IRAM .word needs a 48-bit literal", tok, path)
                        current.code.append(tok.value)
                    elif tok.kind is Tok.LABELREF:
                        pending_relocs.append((current, current.size, _SymRef(tok.value, RelocKind.ABS32), tok))
                        current.data.extend(bytes(4))
                    else:
                        if not -(1 << 31) <= tok.value < 1 << 32:
                            raise SemanticError(".word value does not fit 32 bits", tok, path)
                        current.data.extend((tok.value & 0xFFFFFFFF).to_bytes(4, "little"))
            else:
                raise SemanticError(f"undefined directive {head.value!r}", head, path)
            continue
        if current.kind is not RegionKind.IRAM:
            raise SemanticError("instruction outside an IRAM section", head, path)
        instr, ref = _parse_instruction(stmt, path)
        if ref is not None:
            pending_relocs.append((current, current.size, ref, head))
        current.code.append(instr)

    for tok in globals_declared:
        obj.exports.add(tok.value)
    for name in obj.exports:
        if name in obj.symbols:
            sym = obj.symbols[name]
            obj.symbols[name] = Symbol(sym.name, sym.section, sym.offset, True)
    for sec, offset, ref, tok in pending_relocs:
        obj.relocations.append(Relocation(sec.name, offset, ref.name, ref.kind))
    return obj


def assemble(source: SourceUnit | str, path: str = "<string>") -> ObjectFile:
    if isinstance(source, SourceUnit):
        path = source.path
    return parse(tokenize(source, path), path)


__all__ = ["ParseError", "SemanticError", "assemble", "parse", "INSTRUCTION_BYTES"]
