"""Linked memory images, the PIMG container format and the disassembler.

Container layout (all integers little-endian)::

    header   "PIMG" u16 version u16 reserved u32 entry u32 threads
             u32 heap_base u32 stack_base u32 region_count
    region   u8 kind u8[3] pad u32 base u32 size, followed by `size` payload bytes
    journal  u32 count, then per entry: str section, u8 from_kind, u8 to_kind, u32 address, u32 size
    symbols  u32 count, then per entry: str name, u32 address

``str`` is a u16 byte length followed by UTF-8 bytes.  Regions with an
empty payload are not written.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

from ..isa import INSTRUCTION_BYTES, IllegalInstruction, decode, format_instruction
from .layout import DEFAULT_MAP, AddressMap, RegionKind

MAGIC = b"PIMG"
VERSION = 1

_KIND_CODES = {RegionKind.ATOMIC: 0, RegionKind.IRAM: 1, RegionKind.WRAM: 2, RegionKind.MRAM: 3}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}
_HEADER = struct.Struct("<4sHHIIIII")
_REGION = struct.Struct("<B3xII")
_JOURNAL = struct.Struct("<BBII")


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class JournalEntry:
    """One section placed outside its declared region."""

    section: str
    from_kind: RegionKind
    to_kind: RegionKind
    address: int
    size: int


@dataclass
class MemoryImage:
    payloads: dict[RegionKind, bytes] = field(default_factory=dict)
    entry: int = DEFAULT_MAP.iram_base
    threads: int = 24
    journal: list[JournalEntry] = field(default_factory=list)
    symbols: dict[str, int] = field(default_factory=dict)
    heap_base: int = 0
    stack_base: int = 0
    address_map: AddressMap = field(default=DEFAULT_MAP, compare=False)

    def payload(self, kind: RegionKind) -> bytes:
        return self.payloads.get(kind, b"")

    def base(self, kind: RegionKind) -> int:
        return self.address_map.base(kind)

    @property
    def iram(self) -> bytes:
        return self.payload(RegionKind.IRAM)

    def symbol(self, name: str) -> int:
        try:
            return self.symbols[name]
        except KeyError:
            raise KeyError(f"image has no symbol {name!r}") from None

    def stack_of(self, tasklet: int) -> int:
        return self.stack_base + tasklet * self.address_map.stack_per_thread

    def remapped(self, section: str) -> JournalEntry | None:
        for entry in self.journal:
            if entry.section == section:
                return entry
        return None

    # -- container ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        regions = [(k, self.payloads[k]) for k in RegionKind if self.payloads.get(k)]
        out = bytearray(
            _HEADER.pack(
                MAGIC, VERSION, 0, self.entry, self.threads, self.heap_base, self.stack_base, len(regions)
            )
        )
        for kind, data in regions:
            out += _REGION.pack(_KIND_CODES[kind], self.base(kind), len(data))
            out += data
        out += struct.pack("<I", len(self.journal))
        for e in self.journal:
            out += _pack_str(e.section)
            out += _JOURNAL.pack(_KIND_CODES[e.from_kind], _KIND_CODES[e.to_kind], e.address, e.size)
        out += struct.pack("<I", len(self.symbols))
        for name in sorted(self.symbols):
            out += _pack_str(name) + struct.pack("<I", self.symbols[name])
        return bytes(out)

    @classmethod
    def from_bytes(cls, blob: bytes, address_map: AddressMap = DEFAULT_MAP) -> "MemoryImage":
        r = _Reader(blob)
        magic, version, _, entry, threads, heap_base, stack_base, nregions = r.unpack(_HEADER)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported container version {version}")
        img = cls(entry=entry, threads=threads, heap_base=heap_base, stack_base=stack_base,
                  address_map=address_map)
        for _ in range(nregions):
            code, base, size = r.unpack(_REGION)
            kind = r.kind(code)
            if base != address_map.base(kind):
                raise FormatError(f"{kind.value} region at 0x{base:08x}, expected 0x{address_map.base(kind):08x}")
            img.payloads[kind] = r.take(size)
        (count,) = r.unpack(struct.Struct("<I"))
        for _ in range(count):
            name = r.string()
            src, dst, addr, size = r.unpack(_JOURNAL)
            img.journal.append(JournalEntry(name, r.kind(src), r.kind(dst), addr, size))
        (count,) = r.unpack(struct.Struct("<I"))
        for _ in range(count):
            name = r.string()
            (img.symbols[name],) = r.unpack(struct.Struct("<I"))
        if r.pos != len(blob):
            raise FormatError(f"{len(blob) - r.pos} trailing bytes")
        return img


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    def __init__(self, blob: bytes):
        self.blob, self.pos = blob, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"truncated container: need {n} bytes at offset {self.pos}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return bytes(chunk)

    def unpack(self, st: struct.Struct) -> tuple:
        return st.unpack(self.take(st.size))

    def string(self) -> str:
        (n,) = self.unpack(struct.Struct("<H"))
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"bad string: {exc}") from None

    @staticmethod
    def kind(code: int) -> RegionKind:
        try:
            return _CODE_KINDS[code]
        except KeyError:
            raise FormatError(f"unknown region kind code {code}") from None


def emit(image: MemoryImage, out_path) -> Path:
    path = Path(out_path)
    path.write_bytes(image.to_bytes())
    return path


def load(path, address_map: AddressMap = DEFAULT_MAP) -> MemoryImage:
    return MemoryImage.from_bytes(Path(path).read_bytes(), address_map)


def disassemble(image: MemoryImage) -> str:
    """Listing of the IRAM payload that reassembles to the same bytes.

    Addresses go into comments so the text is valid assembler input.
    """
    iram = image.iram
    base = image.base(RegionKind.IRAM)
    by_addr: dict[int, list[str]] = {}
    for name, addr in sorted(image.symbols.items()):
        by_addr.setdefault(addr, []).append(name)
    lines = [".section iram"]
    for off in range(0, len(iram) - len(iram) % INSTRUCTION_BYTES, INSTRUCTION_BYTES):
        addr = base + off
        for name in by_addr.get(addr, ()):
            lines.append(f"; <{name}>")
        word = int.from_bytes(iram[off:off + INSTRUCTION_BYTES], "little")
        try:
            text = format_instruction(decode(word))
        except IllegalInstruction:
            text = f".word 0x{word:012x}"
        lines.append(f"    {text:<32}; 0x{addr:08x}")
    return "\n".join(lines) + "\n"
