"""Relocatable object files produced by the assembler and consumed by the linker."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from ..isa import INSTRUCTION_BYTES, Instruction, decode, encode
from .layout import RegionKind


class RelocKind(str, Enum):
    ABS32 = "ABS32"  # full 32-bit address
    LO16 = "LO16"    # address & 0xFFFF (also IRAM branch targets)
    HI16 = "HI16"    # address >> 16


@dataclass
class Section:
    name: str
    kind: RegionKind
    data: bytearray = field(default_factory=bytearray)
    # IRAM sections hold instructions; raw 48-bit words (``.word`` escapes) are ints
    code: list[Instruction | int] = field(default_factory=list)

    @property
    def size(self) -> int:
        if self.kind is RegionKind.IRAM:
            return len(self.code) * INSTRUCTION_BYTES
        return len(self.data)


@dataclass(frozen=True)
class Symbol:
    name: str
    section: str
    offset: int
    is_global: bool = False


@dataclass(frozen=True)
class Relocation:
    section: str
    offset: int
    symbol: str
    kind: RelocKind


@dataclass
class ObjectFile:
    path: str = "<memory>"
    sections: list[Section] = field(default_factory=list)
    symbols: dict[str, Symbol] = field(default_factory=dict)
    relocations: list[Relocation] = field(default_factory=list)
    exports: set[str] = field(default_factory=set)

    def section(self, name: str) -> Section:
        for sec in self.sections:
            if sec.name == name:
                return sec
        raise KeyError(name)

    def to_json(self) -> str:
        def sec_dict(sec: Section) -> dict:
            d = {"name": sec.name, "kind": sec.kind.value}
            if sec.kind is RegionKind.IRAM:
                d["code"] = [
                    {"raw": w} if isinstance(w, int) else {"word": encode(w)} for w in sec.code
                ]
            else:
                d["data"] = sec.data.hex()
            return d

        doc = {
            "format": "pimsim-object",
            "version": 1,
            "path": self.path,
            "sections": [sec_dict(s) for s in self.sections],
            "symbols": [
                [s.name, s.section, s.offset, s.is_global] for s in self.symbols.values()
            ],
            "relocations": [[r.section, r.offset, r.symbol, r.kind.value] for r in self.relocations],
            "exports": sorted(self.exports),
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ObjectFile":
        doc = json.loads(text)
        if doc.get("format") != "pimsim-object":
            raise ValueError("not a pimsim object file")
        obj = cls(path=doc["path"])
        for d in doc["sections"]:
            sec = Section(d["name"], RegionKind(d["kind"]))
            if sec.kind is RegionKind.IRAM:
                sec.code = [e["raw"] if "raw" in e else decode(e["word"]) for e in d["code"]]
            else:
                sec.data = bytearray.fromhex(d["data"])
            obj.sections.append(sec)
        for name, section, offset, is_global in doc["symbols"]:
            obj.symbols[name] = Symbol(name, section, offset, is_global)
        obj.relocations = [Relocation(s, o, sym, RelocKind(k)) for s, o, sym, k in doc["relocations"]]
        obj.exports = set(doc["exports"])
        return obj
