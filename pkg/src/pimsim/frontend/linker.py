"""Static linker: places sections over the physical regions and patches relocations."""

from __future__ import annotations

from dataclasses import dataclass, replace

from ..isa import INSTRUCTION_BYTES, OPCODES, Instruction, Shape, encode, validate
from .image import JournalEntry, MemoryImage
from .layout import DEFAULT_MAP, AddressMap, RegionKind, align_up
from .objects import ObjectFile, RelocKind, Section

MAX_THREADS = 24


class LinkError(Exception):
    pass


class UnresolvedSymbol(LinkError):
    def __init__(self, symbol: str, where: str):
        super().__init__(f"{where}: undefined symbol {symbol!r}")
        self.symbol = symbol


class RegionOverflow(LinkError):
    def __init__(self, kind: RegionKind, needed: int, capacity: int):
        super().__init__(f"{kind.value} overflow: {needed} bytes needed, {capacity} available")
        self.kind, self.needed, self.capacity = kind, needed, capacity


@dataclass
class _Placed:
    obj_index: int
    section: Section
    kind: RegionKind  # region actually used
    address: int


def _section_key(obj_index: int, name: str) -> tuple[int, str]:
    return obj_index, name


def link(
    objects: list[ObjectFile],
    layout: AddressMap = DEFAULT_MAP,
    allow_overflow: bool = False,
    relocations: list[str] | tuple[str, ...] = (),
    threads: int = MAX_THREADS,
) -> MemoryImage:
    """Link objects into an image.

    ``relocations`` names WRAM sections to move into MRAM unconditionally;
    with ``allow_overflow`` any WRAM section that does not fit is moved too.
    """
    if not 1 <= threads <= MAX_THREADS:
        raise LinkError(f"thread count {threads} outside 1..{MAX_THREADS}")
    forced = set(relocations)
    declared = {s.name for o in objects for s in o.sections}
    missing = forced - declared
    if missing:
        raise LinkError(f"relocation names unknown sections: {sorted(missing)}")

    by_kind: dict[RegionKind, list[tuple[int, Section]]] = {k: [] for k in RegionKind}
    for i, obj in enumerate(objects):
        for sec in obj.sections:
            by_kind[sec.kind].append((i, sec))

    placed: dict[tuple[int, str], _Placed] = {}
    journal: list[JournalEntry] = []

    # IRAM: instructions back to back
    cursor = layout.iram_base
    for i, sec in by_kind[RegionKind.IRAM]:
        placed[_section_key(i, sec.name)] = _Placed(i, sec, RegionKind.IRAM, cursor)
        cursor += sec.size
    iram_used = cursor - layout.iram_base
    if iram_used > layout.iram_size:
        # the instruction store has no DRAM-backed fallback
        raise RegionOverflow(RegionKind.IRAM, iram_used, layout.iram_size)

    for kind in (RegionKind.ATOMIC,):
        cursor = layout.base(kind)
        for i, sec in by_kind[kind]:
            placed[_section_key(i, sec.name)] = _Placed(i, sec, kind, cursor)
            cursor += sec.size
        if cursor - layout.base(kind) > layout.size(kind):
            raise RegionOverflow(kind, cursor - layout.base(kind), layout.size(kind))

    # WRAM: [data][heap][stacks]
    reserve = layout.heap_size + threads * layout.stack_per_thread
    capacity = layout.wram_size - reserve
    cursor = layout.wram_base
    evicted: list[tuple[int, Section]] = []
    for i, sec in by_kind[RegionKind.WRAM]:
        start = align_up(cursor, layout.section_align)
        fits = start + sec.size - layout.wram_base <= capacity
        if sec.name in forced or (allow_overflow and not fits):
            evicted.append((i, sec))
            continue
        placed[_section_key(i, sec.name)] = _Placed(i, sec, RegionKind.WRAM, start)
        cursor = start + sec.size
    data_end = align_up(cursor, layout.section_align)
    wram_needed = data_end - layout.wram_base + reserve
    if wram_needed > layout.wram_size:
        raise RegionOverflow(RegionKind.WRAM, wram_needed, layout.wram_size)
    heap_base = data_end
    stack_base = heap_base + layout.heap_size

    # MRAM: declared sections, then sections remapped out of WRAM
    cursor = layout.mram_base
    for i, sec in by_kind[RegionKind.MRAM]:
        cursor = align_up(cursor, layout.section_align)
        placed[_section_key(i, sec.name)] = _Placed(i, sec, RegionKind.MRAM, cursor)
        cursor += sec.size
    for i, sec in evicted:
        cursor = align_up(cursor, layout.section_align)
        placed[_section_key(i, sec.name)] = _Placed(i, sec, RegionKind.MRAM, cursor)
        journal.append(JournalEntry(sec.name, RegionKind.WRAM, RegionKind.MRAM, cursor, sec.size))
        cursor += sec.size
    mram_heap = align_up(cursor, layout.section_align)
    mram_limit = layout.page_table_base - layout.mram_base
    if mram_heap - layout.mram_base > mram_limit:
        raise RegionOverflow(RegionKind.MRAM, mram_heap - layout.mram_base, mram_limit)

    # symbol tables: per-object locals shadow globals
    synthetic = {
        "__heap_base": heap_base,
        "__stack_base": stack_base,
        "__mram_heap": mram_heap,
    }
    global_syms: dict[str, int] = dict(synthetic)
    local_syms: list[dict[str, int]] = []
    for i, obj in enumerate(objects):
        table: dict[str, int] = {}
        for sym in obj.symbols.values():
            where = placed.get(_section_key(i, sym.section))
            if where is None:
                raise LinkError(f"{obj.path}: symbol {sym.name!r} in unknown section {sym.section!r}")
            table[sym.name] = where.address + sym.offset
            if sym.is_global:
                if sym.name in global_syms:
                    raise LinkError(f"{obj.path}: duplicate global symbol {sym.name!r}")
                global_syms[sym.name] = table[sym.name]
        local_syms.append(table)

    def resolve(i: int, name: str, where: str) -> int:
        if name in local_syms[i]:
            return local_syms[i][name]
        if name in global_syms:
            return global_syms[name]
        raise UnresolvedSymbol(name, where)

    # patch
    code_out: dict[tuple[int, str], list] = {
        k: list(p.section.code) for k, p in placed.items() if p.kind is RegionKind.IRAM
    }
    data_out: dict[tuple[int, str], bytearray] = {
        k: bytearray(p.section.data) for k, p in placed.items() if p.kind is not RegionKind.IRAM
    }
    for i, obj in enumerate(objects):
        for rel in obj.relocations:
            key = _section_key(i, rel.section)
            where = f"{obj.path}:{rel.section}+{rel.offset}"
            value = _apply_kind(rel.kind, resolve(i, rel.symbol, where))
            if key in code_out:
                idx = rel.offset // INSTRUCTION_BYTES
                code_out[key][idx] = _patch_instruction(code_out[key][idx], value, where)
            else:
                data_out[key][rel.offset:rel.offset + 4] = (value & 0xFFFFFFFF).to_bytes(4, "little")

    payloads: dict[RegionKind, bytes] = {}
    for kind in RegionKind:
        members = sorted((p for p in placed.values() if p.kind is kind), key=lambda p: p.address)
        if not members:
            continue
        base = layout.base(kind)
        buf = bytearray()
        for p in members:
            key = _section_key(p.obj_index, p.section.name)
            buf.extend(bytes(p.address - base - len(buf)))
            if kind is RegionKind.IRAM:
                for entry in code_out[key]:
                    word = entry if isinstance(entry, int) else encode(entry)
                    buf += word.to_bytes(INSTRUCTION_BYTES, "little")
            else:
                buf += data_out[key]
        if buf:
            payloads[kind] = bytes(buf)

    entry = global_syms.get("main")
    if entry is None:
        entry = next((t["main"] for t in local_syms if "main" in t), layout.iram_base)
    if not layout.contains(RegionKind.IRAM, entry, INSTRUCTION_BYTES) and iram_used:
        raise LinkError(f"entry point 0x{entry:08x} is not in IRAM")

    symbols = dict(global_syms)
    for table in local_syms:
        for name, addr in table.items():
            symbols.setdefault(name, addr)
    return MemoryImage(
        payloads=payloads,
        entry=entry,
        threads=threads,
        journal=journal,
        symbols=symbols,
        heap_base=heap_base,
        stack_base=stack_base,
        address_map=layout,
    )


def _apply_kind(kind: RelocKind, addr: int) -> int:
    if kind is RelocKind.LO16:
        return addr & 0xFFFF
    if kind is RelocKind.HI16:
        return (addr >> 16) & 0xFFFF
    return addr & 0xFFFFFFFF


def _patch_instruction(entry, value: int, where: str) -> Instruction:
    if isinstance(entry, int):
        raise LinkError(f"{where}: relocation against a raw .word")
    patched = replace(entry, imm=value)
    errors = validate(patched)
    if errors:
        shape = OPCODES[entry.op].shape
        hint = " (use lo16/hi16 or mov for wide addresses)" if shape is not Shape.RX else ""
        raise LinkError(f"{where}: relocated {entry.op} invalid: {'; '.join(errors)}{hint}")
    return patched
