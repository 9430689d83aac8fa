"""Tokenizer for the assembly language.

Line grammar::

    [label:] [mnemonic operand, ...] [; comment]
    [label:] .directive args          [; comment]

Operands are registers (``r0``..``r31``), integers (decimal, ``0x`` hex, optional
leading ``-``), symbol references and ``[reg, imm]`` memory operands.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum


class LexError(Exception):
    def __init__(self, message: str, path: str, line: int, column: int):
        super().__init__(f"{path}:{line}:{column}: {message}")
        self.path, self.line, self.column = path, line, column


class Tok(str, Enum):
    IDENT = "IDENT"
    REG = "REG"
    INT = "INT"
    COMMA = "COMMA"
    LABELDEF = "LABELDEF"
    LABELREF = "LABELREF"
    DIRECTIVE = "DIRECTIVE"
    LBRACKET = "LBRACKET"
    RBRACKET = "RBRACKET"
    LPAREN = "LPAREN"
    RPAREN = "RPAREN"
    NEWLINE = "NEWLINE"


@dataclass(frozen=True)
class Token:
    kind: Tok
    value: object = None
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)

    def __repr__(self) -> str:
        return f"[{self.kind.value} {self.value}]" if self.value is not None else f"[{self.kind.value}]"


@dataclass
class SourceUnit:
    path: str
    text: str

    @classmethod
    def from_file(cls, path) -> "SourceUnit":
        with open(path, encoding="utf-8") as fh:
            return cls(str(path), fh.read())


_IDENT = r"[A-Za-z_$][A-Za-z0-9_.$]*"
_TOKEN_RE = re.compile(
    rf"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>;.*)
  | (?P<labeldef>{_IDENT})\s*:
  | (?P<directive>\.[A-Za-z_][A-Za-z0-9_]*)
  | (?P<int>-?(?:0[xX][0-9A-Fa-f]+|[0-9]+))(?P<junk>[A-Za-z0-9_.$]*)
  | (?P<ident>{_IDENT})
  | (?P<comma>,)
  | (?P<lbracket>\[)
  | (?P<rbracket>\])
  | (?P<lparen>\()
  | (?P<rparen>\))
    """,
    re.VERBOSE,
)
_REG_RE = re.compile(r"r([0-9]+)\Z")


def _parse_int(text: str) -> int:
    sign = -1 if text.startswith("-") else 1
    digits = text.lstrip("-")
    if digits[:2].lower() == "0x":
        return sign * int(digits[2:], 16)
    return sign * int(digits, 10)


def tokenize(source: SourceUnit | str, path: str = "<string>") -> list[Token]:
    """Tokens for every line, each line terminated by a NEWLINE token.

    The first identifier of a statement is the mnemonic (IDENT); identifiers in
    operand position become LABELREF unless they spell a register.
    """
    if isinstance(source, SourceUnit):
        path, text = source.path, source.text
    else:
        text = source
    tokens: list[Token] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        pos = 0
        seen_head = False  # mnemonic or directive already consumed on this line
        while pos < len(line):
            m = _TOKEN_RE.match(line, pos)
            if m is None:
                raise LexError(f"illegal character {line[pos]!r}", path, lineno, pos + 1)
            kind = m.lastgroup
            col = pos + 1
            if kind == "junk":
                kind = "int"
            if kind == "int" and m.group("junk"):
                raise LexError(f"malformed integer literal {m.group(0)!r}", path, lineno, col)
            pos = m.end()
            if kind in ("ws", "comment"):
                continue
            if kind == "labeldef":
                if seen_head:
                    raise LexError("label definition after statement start", path, lineno, col)
                tokens.append(Token(Tok.LABELDEF, m.group("labeldef"), lineno, col))
            elif kind == "directive":
                tokens.append(Token(Tok.DIRECTIVE, m.group(0), lineno, col))
                seen_head = True
            elif kind == "int":
                tokens.append(Token(Tok.INT, _parse_int(m.group("int")), lineno, col))
            elif kind == "ident":
                word = m.group(0)
                reg = _REG_RE.match(word)
                if reg:
                    tokens.append(Token(Tok.REG, int(reg.group(1)), lineno, col))
                elif not seen_head:
                    tokens.append(Token(Tok.IDENT, word, lineno, col))
                    seen_head = True
                else:
                    tokens.append(Token(Tok.LABELREF, word, lineno, col))
            else:
                tokens.append(Token(Tok[kind.upper()], None, lineno, col))
        tokens.append(Token(Tok.NEWLINE, None, lineno, len(line) + 1))
    return tokens
