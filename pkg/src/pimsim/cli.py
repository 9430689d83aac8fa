"""Command-line entry point: asm, link, disasm, run, report, sweep."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, ilp_overrides, load_config, parse_value
from .core import SimError, SimFault
from .frontend import (
    LexError, LinkError, ObjectFile, ParseError, SourceUnit, assemble, disassemble, emit, link, load,
)
from .frontend.image import FormatError
from .kernels import KERNELS, run_and_check
from .memsys import BoundsFault
from .stats import export, merge, report_tables
from .system import alloc

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

MANIFEST_KEYS = {"kernel", "image", "dpus", "threads", "seed", "scale", "n", "config", "ilp",
                 "inputs", "outputs"}


class ManifestError(ValueError):
    pass


# ---------------------------------------------------------------------------
# toolchain commands


def cmd_asm(args) -> int:
    src = SourceUnit.from_file(args.source)
    obj = assemble(src, path=str(args.source))
    out = Path(args.output or Path(args.source).with_suffix(".obj"))
    out.write_text(obj.to_json(), encoding="utf-8")
    print(out)
    return EXIT_OK


def _load_object(path: str) -> ObjectFile:
    p = Path(path)
    if p.suffix == ".s":
        return assemble(SourceUnit.from_file(p), path=str(p))
    return ObjectFile.from_json(p.read_text(encoding="utf-8"))


def cmd_link(args) -> int:
    config = load_config(args.config)
    objects = [_load_object(p) for p in args.objects]
    image = link(objects, layout=config.address_map(), allow_overflow=args.allow_overflow,
                 threads=args.threads)
    out = emit(image, args.output)
    for entry in image.journal:
        print(f"relocated section {entry.section}: {entry.from_kind.value} -> {entry.to_kind.value} "
              f"at 0x{entry.address:08x} ({entry.size} bytes)", file=sys.stderr)
    print(out)
    return EXIT_OK


def cmd_disasm(args) -> int:
    config = load_config(args.config)
    sys.stdout.write(disassemble(load(args.image, config.address_map())))
    return EXIT_OK


# ---------------------------------------------------------------------------
# run


def _parse_sets(pairs: list[str] | None) -> dict[str, object]:
    out: dict[str, object] = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = parse_value(key.strip(), value.strip())
    return out


def read_manifest(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    unknown = set(data) - MANIFEST_KEYS
    if unknown:
        raise ManifestError(f"{path}: unknown manifest keys {sorted(unknown)}")
    if "config" in data and not isinstance(data["config"], dict):
        raise ManifestError(f"{path}: 'config' must be an object of dotted keys")
    return data


def resolve_run(args) -> tuple[dict, RunConfig]:
    """Merge manifest and flags into a run description plus its configuration."""
    m = read_manifest(args.manifest)
    run = {
        "kernel": args.kernel or m.get("kernel"),
        "image": args.image or m.get("image"),
        "dpus": args.dpus if args.dpus is not None else m.get("dpus", 1),
        "threads": args.threads if args.threads is not None else m.get("threads", 16),
        "seed": args.seed if args.seed is not None else m.get("seed", 0),
        "scale": args.scale if args.scale is not None else m.get("scale", 1),
        "n": args.n if args.n is not None else m.get("n"),
        "inputs": m.get("inputs", []),
        "outputs": m.get("outputs", []),
    }
    if bool(run["kernel"]) == bool(run["image"]):
        raise ManifestError("give exactly one of a kernel name or an image")
    if run["kernel"] and run["kernel"].upper() not in KERNELS:
        raise ManifestError(f"unknown kernel {run['kernel']!r}; choose from {', '.join(KERNELS)}")
    for key in ("dpus", "threads", "seed", "scale"):
        if not isinstance(run[key], int) or isinstance(run[key], bool) or run[key] < (0 if key == "seed" else 1):
            raise ManifestError(f"{key} must be a positive integer, got {run[key]!r}")
    overrides = dict(m.get("config", {}))
    ilp = args.ilp if args.ilp is not None else m.get("ilp")
    if ilp:
        overrides.update(ilp_overrides("" if ilp in ("-", "none", "base") else ilp))
    overrides.update(_parse_sets(args.set))
    if getattr(args, "trace", None):
        overrides["trace"] = True
    config = load_config(args.config, overrides)
    if run["kernel"]:
        run["kernel"] = run["kernel"].upper()
    return run, config


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def execute_run(run: dict, config: RunConfig) -> tuple[dict, bool, list[str]]:
    """Run one manifest; returns (results document, passed, trace lines)."""
    if run["kernel"]:
        res = run_and_check(run["kernel"], run["dpus"], run["threads"], config,
                            seed=run["seed"], scale=run["scale"], n=run["n"])
        ds = res.dset
        check = {"ok": res.ok, "mismatch": str(res.mismatch) if res.mismatch else None,
                 "elements": int(len(res.expected))}
        out_digest = _digest(np.ascontiguousarray(res.output).tobytes())
        variant = res.variant
        passed = res.ok
    else:
        image = load(run["image"], config.address_map())
        ds = alloc(run["dpus"], config)
        ds.load(image)
        for spec in run["inputs"]:
            data = _input_bytes(spec)
            region, offset = _locate(image, spec)
            ds.copy_to_dpus(data, region, offset)
        ds.launch(run["threads"])
        outputs = b""
        for spec in run["outputs"]:
            region, offset = _locate(image, spec)
            chunks, _ = ds.copy_from_dpus(region, offset, int(spec["size"]))
            outputs += b"".join(chunks)
        check = {"ok": True, "mismatch": None, "elements": len(outputs)}
        out_digest = _digest(outputs)
        variant = "image"
        passed = True
    last = ds.kernel_stats[-1]
    doc = {
        "version": __version__,
        "run": {k: run[k] for k in ("kernel", "image", "dpus", "threads", "seed", "scale", "n")},
        "variant": variant,
        "config": config.to_dict(),
        "config_changed": config.changed(),
        "dpus": [s.to_dict() for s in last],
        "launches": [[s.total_cycles for s in launch] for launch in ds.kernel_stats],
        "kernel_cycles": sum(max(s.total_cycles for s in launch) for launch in ds.kernel_stats),
        "aggregate": merge([s for launch in ds.kernel_stats for s in launch]),
        "phases": [p.to_dict() for p in ds.phases],
        "phase_totals": ds.phase_totals(),
        "end_to_end_seconds": ds.elapsed,
        "check": check,
        "output_digest": out_digest,
        "memory_digest": [d.mram.digest() for d in ds.dpus],
    }
    trace = [f"dpu{d.dpu_id} {line}" for d in ds.dpus for line in d.trace]
    return doc, passed, trace


def _input_bytes(spec: dict) -> bytes:
    if "file" in spec:
        return Path(spec["file"]).read_bytes()
    if "words" in spec:
        return np.asarray(spec["words"], dtype=np.int64).astype(np.uint32).tobytes()
    raise ManifestError("input spec needs 'file' or 'words'")


def _locate(image, spec: dict):
    if "symbol" in spec:
        addr = image.symbol(spec["symbol"]) + int(spec.get("offset", 0))
        kind = image.address_map.region_of(addr)
        return kind, addr - image.address_map.base(kind)
    return spec.get("region", "mram"), int(spec.get("offset", 0))


def cmd_run(args) -> int:
    run, config = resolve_run(args)
    doc, passed, trace = execute_run(run, config)
    text = export(doc, args.output)
    if args.output is None:
        sys.stdout.write(text)
    else:
        print(args.output)
    if args.trace:
        Path(args.trace).write_text("\n".join(trace) + ("\n" if trace else ""), encoding="utf-8")
    if not passed:
        print(f"FAIL: {doc['check']['mismatch']}", file=sys.stderr)
    return EXIT_OK if passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# report and sweep


def cmd_report(args) -> int:
    with open(args.results, encoding="utf-8") as fh:
        results = json.load(fh)
    tables = report_tables(results)
    names = [args.table] if args.table else list(tables)
    for name in names:
        if name not in tables:
            raise ManifestError(f"unknown table {name!r}; choose from {', '.join(tables)}")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in names:
            (out / f"{name}.csv").write_text(tables[name], encoding="utf-8")
            print(out / f"{name}.csv")
    else:
        for name in names:
            print(f"# {name}")
            sys.stdout.write(tables[name])
    return EXIT_OK


SWEEP_AXES = {"threads", "dpus", "mram-scale", "ilp", "seed"}


def _sweep_point(axis: str, value: str, run: dict, config: RunConfig) -> tuple[dict, RunConfig]:
    run = dict(run)
    if axis in ("threads", "dpus", "seed"):
        run[axis] = int(value)
    elif axis == "mram-scale":
        config = config.with_overrides({"dma.scale": int(value)})
    elif axis == "ilp":
        config = config.with_ilp("" if value in ("-", "none", "base") else value)
    else:
        config = config.with_overrides({axis: parse_value(axis, value)})
    return run, config


def cmd_sweep(args) -> int:
    run, config = resolve_run(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ManifestError("--values is empty")
    rows = []
    all_ok = True
    for value in values:
        r, c = _sweep_point(args.axis, value, run, config)
        doc, passed, _ = execute_run(r, c)
        all_ok &= passed
        agg = doc["aggregate"]
        cycles = doc["kernel_cycles"]
        freq = c.frequency_mhz
        dpu_cycles = sum(d["total_cycles"] for d in doc["dpus"])
        totals = doc["phase_totals"]
        rows.append([
            value, int(passed), cycles, f"{cycles / (freq * 1e6):.9g}",
            f"{agg['issued'] / max(1, sum(sum(l) for l in doc['launches'])):.6f}",
            f"{sum(d['issued'] for d in doc['dpus']) / max(1, dpu_cycles):.6f}",
            agg["dma_read_bytes"], agg["dram_read_bytes"], agg["cache_bytes_read"],
            *(f"{totals[k]:.9g}" for k in sorted(totals)),
            f"{doc['end_to_end_seconds']:.9g}",
        ])
    header = ["value", "ok", "kernel_cycles", "kernel_seconds", "ipc", "ipc_last_launch",
              "dma_read_bytes", "dram_read_bytes", "cache_bytes_read",
              *(f"phase:{k}" for k in sorted(totals)), "end_to_end_seconds"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([args.axis] + header[1:])
    writer.writerows(rows)
    if args.output:
        Path(args.output).write_text(buf.getvalue(), encoding="utf-8")
        print(args.output)
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK if all_ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# argument parsing


def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="run manifest (JSON)")
    p.add_argument("--kernel", help=f"bundled kernel: {', '.join(KERNELS)}")
    p.add_argument("--image", help="linked image instead of a bundled kernel")
    p.add_argument("--dpus", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--scale", type=int)
    p.add_argument("--n", type=int, help="element count override")
    p.add_argument("--ilp", help="ILP knobs, any of D R S F ('base' for none)")
    p.add_argument("--config", help="config file (default: $PIMSIM_CONFIG)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pimsim", description="PIM DPU toolchain and cycle-level simulator")
    parser.add_argument("--version", action="version", version=f"pimsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("asm", help="assemble a source file into an object (JSON)")
    p.add_argument("source")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_asm)

    p = sub.add_parser("link", help="link objects (or .s sources) into an image")
    p.add_argument("objects", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--threads", type=int, default=24, help="stacks to reserve")
    p.add_argument("--allow-overflow", action="store_true", help="move WRAM sections that do not fit to MRAM")
    p.add_argument("--config")
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("disasm", help="disassemble an image")
    p.add_argument("image")
    p.add_argument("--config")
    p.set_defaults(func=cmd_disasm)

    p = sub.add_parser("run", help="simulate a kernel or image end to end")
    _run_options(p)
    p.add_argument("-o", "--output", help="results JSON path (default: stdout)")
    p.add_argument("--trace", help="write the per-cycle issue trace here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="render a results JSON as CSV tables")
    p.add_argument("results")
    p.add_argument("--table", help="utilization, idle, tlp, mix or phases")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="one run per value of an axis, as CSV")
    _run_options(p)
    p.add_argument("--axis", required=True,
                   help="threads, dpus, mram-scale, ilp, seed, or any dotted config key")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ManifestError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LexError, ParseError, LinkError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (SimFault, SimError, BoundsFault) as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
