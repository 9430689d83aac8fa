"""Bundled micro-kernels with seeded generators, host references and host drivers.

Each kernel has a scratchpad variant (explicit DMA staging through WRAM)
and a cache variant (plain loads and stores to DRAM-backed memory).  The
driver partitions the data over DPUs, writes the argument block, launches
and gathers the output, which is then compared against a numpy reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Callable

import numpy as np

from ..config import RunConfig
from ..frontend import build
from ..frontend.image import MemoryImage
from ..frontend.layout import AddressMap, RegionKind
from ..stats import CycleStats
from ..system import DpuSet, alloc

CHUNK = 512                  # bytes staged per DMA in the streaming kernels
CHUNK_WORDS = CHUNK // 4
QUERY_CHUNK = 16             # BS queries per staged chunk
KEY_BLOCK_WORDS = 64         # BS keys per staged block
GEMV_K = 64
HST_BINS = 256
ALIGN = 1024

VARIANTS = ("spm", "cache")


class Mismatch(AssertionError):
    def __init__(self, kernel: str, index: int, got: int, expected: int):
        super().__init__(f"{kernel}: first mismatch at index {index}: got {got}, expected {expected}")
        self.kernel, self.index, self.got, self.expected = kernel, index, got, expected


@dataclass
class Dataset:
    name: str
    seed: int
    inputs: dict[str, np.ndarray]
    expected: np.ndarray


@dataclass
class KernelResult:
    name: str
    variant: str
    dpus: int
    threads: int
    output: np.ndarray
    expected: np.ndarray
    launches: list[list[CycleStats]]
    dset: DpuSet
    mismatch: Mismatch | None = None

    @property
    def ok(self) -> bool:
        return self.mismatch is None

    @property
    def stats(self) -> list[CycleStats]:
        """Per-DPU statistics of the last launch."""
        return self.launches[-1]

    @property
    def kernel_cycles(self) -> int:
        """Sum over launches of the slowest DPU's cycle count."""
        return sum(max(s.total_cycles for s in launch) for launch in self.launches)

    def total(self, field_name: str) -> int:
        return sum(getattr(s, field_name) for launch in self.launches for s in launch)


@dataclass(frozen=True)
class KernelSpec:
    name: str
    description: str
    generate: Callable[[np.random.Generator, int | None, int], Dataset]
    drive: Callable[[DpuSet, MemoryImage, Dataset, int], np.ndarray]
    streaming: bool = False


# ---------------------------------------------------------------------------
# helpers


def _u32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.int64).astype(np.uint32)


def _split(units: int, parts: int) -> list[tuple[int, int]]:
    """Even contiguous split of ``units`` into ``parts`` (start, count) pairs."""
    base, extra = divmod(units, parts)
    out, start = [], 0
    for i in range(parts):
        n = base + (i < extra)
        out.append((start, n))
        start += n
    return out


def _align(n: int, a: int = ALIGN) -> int:
    return -(-n // a) * a


def _pad(words: np.ndarray, count: int, fill: int = 0) -> np.ndarray:
    out = np.full(count, fill, dtype=np.uint32)
    out[: len(words)] = words
    return out


def _region(image: MemoryImage, addr: int) -> tuple[RegionKind, int]:
    kind = image.address_map.region_of(addr)
    return kind, addr - image.address_map.base(kind)


def _put(ds: DpuSet, image: MemoryImage, addr: int, buffers: list[bytes]) -> None:
    kind, off = _region(image, addr)
    ds.copy_to_dpus(buffers, kind, off)


def _get(ds: DpuSet, image: MemoryImage, addr: int, sizes: list[int] | int) -> list[np.ndarray]:
    kind, off = _region(image, addr)
    data, _ = ds.copy_from_dpus(kind, off, sizes)
    return [np.frombuffer(d, dtype=np.uint32) for d in data]


def _args(ds: DpuSet, image: MemoryImage, rows: list[list[int]]) -> None:
    _put(ds, image, image.symbol("args"), [_u32(r).tobytes() for r in rows])


class _Heap:
    """Bump allocator over the DRAM-backed region after the image's own sections."""

    def __init__(self, image: MemoryImage):
        self.next = _align(image.symbol("__mram_heap"))

    def take(self, nbytes: int) -> int:
        addr = self.next
        self.next = _align(addr + max(nbytes, 8))
        return addr


# ---------------------------------------------------------------------------
# generators


def _gen_va(rng, n, scale) -> Dataset:
    n = n or 2048 * scale
    a = rng.integers(-(1 << 31), 1 << 31, n, dtype=np.int64)
    b = rng.integers(-(1 << 31), 1 << 31, n, dtype=np.int64)
    return Dataset("VA", 0, {"A": _u32(a), "B": _u32(b)}, _u32(a + b))


def _gen_red(rng, n, scale) -> Dataset:
    n = n or 2048 * scale
    a = rng.integers(-(1 << 20), 1 << 20, n, dtype=np.int64)
    return Dataset("RED", 0, {"A": _u32(a)}, _u32([a.sum()]))


def _gen_bs(rng, n, scale) -> Dataset:
    nkeys = 4096
    keys = np.sort(rng.choice(1 << 24, nkeys, replace=False)).astype(np.int64)
    nq = n or 256 * scale
    hits = rng.choice(keys, nq // 2)
    misses = rng.integers(0, 1 << 24, nq - nq // 2)
    queries = np.concatenate([hits, misses])
    rng.shuffle(queries)
    expected = np.searchsorted(keys, queries, side="left")
    return Dataset("BS", 0, {"keys": _u32(keys), "queries": _u32(queries)}, _u32(expected))


def _gen_hst(rng, n, scale) -> Dataset:
    n = n or 2048 * scale
    v = rng.integers(0, 4096, n, dtype=np.int64)
    return Dataset("HST", 0, {"A": _u32(v)}, _u32(np.bincount(v >> 4, minlength=HST_BINS)))


def _gen_gemv(rng, n, scale) -> Dataset:
    rows = n or 64 * scale
    a = rng.integers(-64, 64, (rows, GEMV_K), dtype=np.int64)
    x = rng.integers(-64, 64, GEMV_K, dtype=np.int64)
    return Dataset("GEMV", 0, {"A": _u32(a), "x": _u32(x)}, _u32(a @ x))


def _gen_scan(rng, n, scale) -> Dataset:
    n = n or 2048 * scale
    a = rng.integers(-(1 << 16), 1 << 16, n, dtype=np.int64)
    return Dataset("SCAN", 0, {"A": _u32(a)}, _u32(np.cumsum(a)))


# ---------------------------------------------------------------------------
# host drivers


def _drive_va(ds: DpuSet, image: MemoryImage, data: Dataset, threads: int) -> np.ndarray:
    a, b = data.inputs["A"], data.inputs["B"]
    parts = _split(-(-len(a) // CHUNK_WORDS), len(ds))
    span = max(c for _, c in parts) * CHUNK
    heap = _Heap(image)
    pa, pb, pc = heap.take(span), heap.take(span), heap.take(span)
    sl = [(s * CHUNK_WORDS, c * CHUNK_WORDS) for s, c in parts]
    _put(ds, image, pa, [_pad(a[s:s + c], c).tobytes() for s, c in sl])
    _put(ds, image, pb, [_pad(b[s:s + c], c).tobytes() for s, c in sl])
    _args(ds, image, [[c, pa, pb, pc, threads] for _, c in parts])
    ds.launch(threads)
    out = _get(ds, image, pc, [c * 4 for _, c in sl])
    return np.concatenate(out)[: len(a)]


def _drive_red(ds: DpuSet, image: MemoryImage, data: Dataset, threads: int) -> np.ndarray:
    a = data.inputs["A"]
    parts = _split(-(-len(a) // CHUNK_WORDS), len(ds))
    heap = _Heap(image)
    pa = heap.take(max(c for _, c in parts) * CHUNK)
    sl = [(s * CHUNK_WORDS, c * CHUNK_WORDS) for s, c in parts]
    _put(ds, image, pa, [_pad(a[s:s + c], c).tobytes() for s, c in sl])
    _args(ds, image, [[c, pa, threads] for _, c in parts])
    ds.launch(threads)
    totals = _get(ds, image, image.symbol("total"), 8)
    return _u32([sum(int(t[0]) for t in totals)])


def _drive_bs(ds: DpuSet, image: MemoryImage, data: Dataset, threads: int) -> np.ndarray:
    keys, queries = data.inputs["keys"], data.inputs["queries"]
    nkeys = len(keys)
    kpad = _pad(keys, _align(nkeys, KEY_BLOCK_WORDS), 0x7FFFFFFF)
    parts = _split(-(-len(queries) // QUERY_CHUNK), len(ds))
    span = max(c for _, c in parts) * QUERY_CHUNK * 4
    heap = _Heap(image)
    pk, pq, pr = heap.take(len(kpad) * 4), heap.take(span), heap.take(span)
    sl = [(s * QUERY_CHUNK, c * QUERY_CHUNK) for s, c in parts]
    _put(ds, image, pk, [kpad.tobytes()] * len(ds))
    _put(ds, image, pq, [_pad(queries[s:s + c], c).tobytes() for s, c in sl])
    _args(ds, image, [[c, pk, pq, pr, threads, nkeys] for _, c in parts])
    ds.launch(threads)
    out = _get(ds, image, pr, [c * 4 for _, c in sl])
    return np.concatenate(out)[: len(queries)]


def _drive_hst(ds: DpuSet, image: MemoryImage, data: Dataset, threads: int) -> np.ndarray:
    a = data.inputs["A"]
    parts = _split(-(-len(a) // CHUNK_WORDS), len(ds))
    heap = _Heap(image)
    pa = heap.take(max(c for _, c in parts) * CHUNK)
    sl = [(s * CHUNK_WORDS, c * CHUNK_WORDS) for s, c in parts]
    # padding values are zeros; their bin-0 hits are removed on the host
    padding = sum(c for _, c in sl) - len(a)
    _put(ds, image, pa, [_pad(a[s:s + c], c).tobytes() for s, c in sl])
    _args(ds, image, [[c, pa, threads] for _, c in parts])
    ds.launch(threads)
    hists = _get(ds, image, image.symbol("hist"), HST_BINS * 4)
    total = np.sum([h.astype(np.int64) for h in hists], axis=0)
    total[0] -= padding
    return _u32(total)


def _drive_gemv(ds: DpuSet, image: MemoryImage, data: Dataset, threads: int) -> np.ndarray:
    a, x = data.inputs["A"], data.inputs["x"]
    rows = a.shape[0]
    parts = _split(-(-rows // 2), len(ds))
    heap = _Heap(image)
    pairs = max(c for _, c in parts)
    pa, px, py = heap.take(pairs * 2 * GEMV_K * 4), heap.take(GEMV_K * 4), heap.take(pairs * 8)
    bufs = []
    for s, c in parts:
        block = np.zeros((2 * c, GEMV_K), dtype=np.uint32)
        chunk = a[2 * s: 2 * (s + c)]
        block[: len(chunk)] = chunk
        bufs.append(block.tobytes())
    _put(ds, image, pa, bufs)
    _put(ds, image, px, [x.tobytes()] * len(ds))
    _args(ds, image, [[c, pa, px, py, threads] for _, c in parts])
    ds.launch(threads)
    out = _get(ds, image, py, [c * 8 for _, c in parts])
    return np.concatenate(out)[:rows]


def _drive_scan(ds: DpuSet, image: MemoryImage, data: Dataset, threads: int) -> np.ndarray:
    a = data.inputs["A"]
    parts = _split(-(-len(a) // CHUNK_WORDS), len(ds))
    heap = _Heap(image)
    pa = heap.take(max(c for _, c in parts) * CHUNK)
    sl = [(s * CHUNK_WORDS, c * CHUNK_WORDS) for s, c in parts]
    _put(ds, image, pa, [_pad(a[s:s + c], c).tobytes() for s, c in sl])
    per = [-(-c // threads) for _, c in parts]
    _args(ds, image, [[1, p, c, pa, threads, 0] for p, (_, c) in zip(per, parts)])
    ds.launch(threads)
    # local totals travel through the host and come back as per-DPU offsets
    partials = _get(ds, image, image.symbol("partials"), threads * 4)
    sums = [int(p.astype(np.int64).sum()) for p in partials]
    offsets = np.cumsum([0] + sums[:-1])
    _args(ds, image, [[2, p, c, pa, threads, int(o) & 0xFFFFFFFF]
                      for p, (_, c), o in zip(per, parts, offsets)])
    ds.launch(threads)
    out = _get(ds, image, pa, [c * 4 for _, c in sl])
    return np.concatenate(out)[: len(a)]


KERNELS: dict[str, KernelSpec] = {
    "VA": KernelSpec("VA", "vector addition, streaming", _gen_va, _drive_va, streaming=True),
    "RED": KernelSpec("RED", "reduction with a locked merge", _gen_red, _drive_red, streaming=True),
    "BS": KernelSpec("BS", "binary search, random probes", _gen_bs, _drive_bs),
    "HST": KernelSpec("HST", "histogram under one global lock", _gen_hst, _drive_hst),
    "GEMV": KernelSpec("GEMV", "matrix-vector product", _gen_gemv, _drive_gemv),
    "SCAN": KernelSpec("SCAN", "two-launch prefix sum", _gen_scan, _drive_scan, streaming=True),
}


# ---------------------------------------------------------------------------
# public API


def kernel_names() -> list[str]:
    return list(KERNELS)


def spec(name: str) -> KernelSpec:
    try:
        return KERNELS[name.upper()]
    except KeyError:
        raise KeyError(f"unknown kernel {name!r}; choose from {', '.join(KERNELS)}") from None


def source(name: str, variant: str) -> str:
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    fname = f"{spec(name).name.lower()}_{variant}.s"
    return resources.files(__package__).joinpath("asm", fname).read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def image(name: str, variant: str, address_map: AddressMap = AddressMap()) -> MemoryImage:
    from ..frontend import SourceUnit

    text = source(name, variant)
    return build([SourceUnit(f"{name.lower()}_{variant}.s", text)], layout=address_map)


def generate(name: str, seed: int = 0, scale: int = 1, n: int | None = None) -> Dataset:
    """Deterministic inputs and reference outputs; ``n`` overrides the element count."""
    ks = spec(name)
    data = ks.generate(np.random.default_rng(seed), n, scale)
    data.seed = seed
    return data


def variant_for(config: RunConfig) -> str:
    return "cache" if config["cache.enabled"] else "spm"


def first_mismatch(name: str, got: np.ndarray, expected: np.ndarray) -> Mismatch | None:
    if len(got) != len(expected):
        return Mismatch(name, min(len(got), len(expected)), -1, -1)
    diff = np.nonzero(got != expected)[0]
    if len(diff):
        i = int(diff[0])
        return Mismatch(name, i, int(got[i]), int(expected[i]))
    return None


def run_and_check(name: str, dpus: int = 1, threads: int = 16, config: RunConfig | None = None,
                  seed: int = 0, scale: int = 1, n: int | None = None,
                  dataset: Dataset | None = None) -> KernelResult:
    config = config or RunConfig()
    ks = spec(name)
    data = dataset or generate(ks.name, seed, scale, n)
    variant = variant_for(config)
    img = image(ks.name, variant, config.address_map())
    ds = alloc(dpus, config)
    ds.load(img)
    out = ks.drive(ds, img, data, threads)
    result = KernelResult(ks.name, variant, dpus, threads, out, data.expected, ds.kernel_stats, ds)
    result.mismatch = first_mismatch(ks.name, out, data.expected)
    return result
