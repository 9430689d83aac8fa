"""Assembler, linker and image tools."""

from .assembler import ParseError, SemanticError, assemble, parse
from .image import FormatError, JournalEntry, MemoryImage, disassemble, emit, load
from .layout import DEFAULT_MAP, AddressMap, RegionKind
from .lexer import LexError, SourceUnit, Tok, Token, tokenize
from .linker import LinkError, RegionOverflow, UnresolvedSymbol, link
from .objects import ObjectFile, Relocation, RelocKind, Section, Symbol


def build(sources, **link_options) -> MemoryImage:
    """Assemble and link one or more source texts (or SourceUnits)."""
    if isinstance(sources, (str, SourceUnit)):
        sources = [sources]
    objects = [assemble(s, path=f"<source{i}>") for i, s in enumerate(sources)]
    return link(objects, **link_options)


__all__ = [
    "AddressMap", "DEFAULT_MAP", "FormatError", "JournalEntry", "LexError", "LinkError",
    "MemoryImage", "ObjectFile", "ParseError", "RegionKind", "RegionOverflow", "Relocation",
    "RelocKind", "Section", "SemanticError", "SourceUnit", "Symbol", "Tok", "Token",
    "UnresolvedSymbol", "assemble", "build", "disassemble", "emit", "link", "load", "parse",
    "tokenize",
]
