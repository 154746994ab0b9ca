"""Command-line front end: generate, simulate, analyze, compare, calibrate, config."""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .allocator import AllocationError
from .analysis import (
    analyze,
    build_heatmap,
    compute_cdf,
    write_cdf_csv,
    write_heatmap_csv,
    write_json,
)
from .config import ENV_VAR, ConfigError, SimConfig, dump_config, load_config, parse_size
from .experiment import (
    WORKLOADS,
    ComparisonError,
    ComparisonReport,
    RunResult,
    StackProfile,
    calibrate,
    compare,
    run,
    workload_spec,
)
from .osstack import UnknownKeyError
from .replay import ReplayStats
from .trace import IoTag, Op, Trace, TraceFormatError, emit_trace, parse_blkparse_text, parse_trace
from .workload import generate_workload, write_ops_csv

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_path(args) -> str | None:
    return args.config or os.environ.get(ENV_VAR) or None


def _config_sets(path: str | None, section: str, key: str) -> bool:
    if not path:
        return False
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read(path, encoding="utf-8")
    return parser.has_option(section, key)


def _load(args) -> SimConfig:
    cfg = load_config(_config_path(args))
    run_kw = {}
    for flag, key in (("seed", "seed"), ("objects", "object_count"), ("threads", "thread_count"),
                      ("osd", "osd_index")):
        v = getattr(args, flag, None)
        if v is not None:
            run_kw[key] = v
    if getattr(args, "size", None):
        run_kw["object_size"] = parse_size(args.size)
    return cfg.with_run(**run_kw) if run_kw else cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _workload(name: str) -> str:
    kind = name.upper()
    if kind not in (*WORKLOADS, "ENUM"):
        raise UsageError(f"unknown workload {name!r} (w-o, r-o, r-w or enum)")
    return kind


def _stack(text: str) -> StackProfile:
    try:
        return StackProfile.parse(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# -- commands -----------------------------------------------------------------


def cmd_generate(args) -> int:
    if args.objects is None and not _config_sets(_config_path(args), "run", "object_count"):
        raise UsageError("--objects is required when the config file does not set [run] object_count")
    cfg = _load(args)
    spec = workload_spec(cfg, _workload(args.workload))
    ops = generate_workload(spec, cfg.cluster)
    path = _out(args) / f"ops_{spec.kind.lower()}_seed{spec.seed}.csv"
    write_ops_csv(
        ops,
        path,
        {
            "workload": spec.kind,
            "seed": spec.seed,
            "object_size": spec.object_size,
            "object_count": spec.object_count,
            "threads": spec.thread_count,
            "key_distribution": spec.key_distribution,
            "theta": spec.theta,
        },
    )
    print(f"wrote {len(ops)} ops to {path}")
    return EXIT_OK


def _write_result(result: RunResult, out: Path, stem: str, fmt: str) -> Path:
    emit_trace(result.trace, out / f"{stem}.trace.csv")
    summary = result.summary()
    path = out / f"{stem}.json"
    write_json(summary, path)
    if fmt == "csv":
        for op in (None, Op.READ, Op.WRITE):
            try:
                cdf = compute_cdf(result.trace, None, op)
            except ValueError:
                continue
            write_cdf_csv(cdf, out / f"{stem}.cdf_{cdf.op.lower()}.csv")
        if result.trace.events:
            write_heatmap_csv(build_heatmap(result.trace, 32, 64), out / f"{stem}.heatmap.csv")
    return path


def cmd_simulate(args) -> int:
    cfg = _load(args)
    stack = _stack(args.stack)
    kind = _workload(args.workload)
    spec = workload_spec(cfg, kind)
    result = run(spec, cfg, stack, cfg.device(args.device))
    stem = f"{kind.lower()}_{str(stack).replace(':', '-')}_{args.device}_seed{spec.seed}"
    path = _write_result(result, _out(args), stem, args.format)
    print(
        f"{kind} {stack} {args.device}: {len(result.trace)} IOs, "
        f"total {result.total_time_us / 1e6:.3f} s, fsm_bytes={result.tag_bytes['FSM']} -> {path}"
    )
    return EXIT_OK


def cmd_analyze(args) -> int:
    if args.blkparse:
        if args.capacity is None:
            raise UsageError("--capacity is required with --blkparse")
        trace = parse_blkparse_text(args.trace, parse_size(args.capacity), args.tags)
    else:
        trace = parse_trace(args.trace)
    out = _out(args)
    stem = Path(args.trace).stem
    report = analyze(trace).to_dict()
    report["meta"] = dict(trace.meta)
    write_json(report, out / f"{stem}.analysis.json")
    if args.format == "csv":
        for op in (None, Op.READ, Op.WRITE):
            try:
                write_cdf_csv(compute_cdf(trace, None, op), out / f"{stem}.cdf_{(op.name if op else 'all').lower()}.csv")
            except ValueError:
                pass
        write_heatmap_csv(build_heatmap(trace, args.time_bins, args.lba_bins), out / f"{stem}.heatmap.csv")
    print(f"analyzed {len(trace)} events -> {out / (stem + '.analysis.json')}")
    return EXIT_OK


def load_result(path: str) -> RunResult:
    """Rebuild the parts of a RunResult that ``compare`` needs from a simulate JSON."""
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        stats = ReplayStats(
            makespan_us=d["makespan_us"],
            device_busy_us=d["device_busy_us"],
            total_latency_us=d["total_time_us"],
        )
        trace = Trace([], 1, dict(d["meta"]))
        return RunResult(
            trace, stats, d["total_time_us"], d["tag_bytes"], d["tag_counts"],
            d["tag_time_us"], None, {},
        )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: not a simulate result ({exc})") from None


def _write_comparison(rep: ComparisonReport, out: Path, stem: str) -> Path:
    path = out / f"{stem}.json"
    write_json(rep.to_dict(), path)
    with open(out / f"{stem}.breakdown.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["normalization", "stack", *[t.value for t in IoTag]])
        for norm, sides in rep.breakdown.items():
            for side, shares in sides.items():
                w.writerow([norm, side, *[f"{shares[t.value]:.6f}" for t in IoTag]])
    return path


def _one_line(rep: ComparisonReport) -> str:
    m = rep.os_result.meta
    return (
        f"savings {rep.savings_fraction * 100:.1f}% "
        f"({m.get('workload')}, {m.get('device')}, seed {m.get('seed')})"
    )


def cmd_compare(args) -> int:
    out = _out(args)
    if args.os_result or args.od_result:
        if not (args.os_result and args.od_result):
            raise UsageError("--os-result and --od-result go together")
        rep = compare(load_result(args.os_result), load_result(args.od_result))
        path = _write_comparison(rep, out, "comparison")
        print(_one_line(rep))
        return EXIT_OK
    cfg = _load(args)
    fs = args.fs
    if args.all:
        cells = [(w, d) for d in ("hdd", "ssd") for w in WORKLOADS]
    else:
        if not args.workload:
            raise UsageError("give --workload (or --all, or two prior results)")
        cells = [(_workload(args.workload), args.device)]

    def one(cell):
        w, d = cell
        spec = workload_spec(cfg, w)
        dev = cfg.device(d)
        return compare(run(spec, cfg, StackProfile("os-fs", fs), dev),
                       run(spec, cfg, StackProfile("object-drive"), dev))

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        reports = list(pool.map(one, cells))
    for (w, d), rep in zip(cells, reports):
        path = _write_comparison(rep, out, f"comparison_{w.lower()}_{d}_seed{cfg.run.seed}")
        print(_one_line(rep))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _load(args)
    targets = calibrate(cfg, jobs=args.jobs)
    rows = []
    for t in targets:
        status = "hit" if t.hit else "MISS"
        print(f"{t.name:<28} {t.value:10.4f}  band [{t.low:g}, {t.high:g}]  {status}")
        rows.append({"name": t.name, "value": t.value, "low": t.low,
                     "high": None if t.high == float("inf") else t.high, "hit": t.hit})
    if args.out:
        write_json({"targets": rows}, _out(args) / "calibration.json")
    return EXIT_OK


def cmd_config(args) -> int:
    cfg = load_config(_config_path(args))
    if args.dump:
        sys.stdout.write(dump_config(cfg))
    else:
        print(f"config: {_config_path(args) or '(built-in defaults)'}; use --dump to print it")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def _common(out_default: str | None) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"INI config file (default: ${ENV_VAR})")
    common.add_argument("--out", default=out_default, help=f"output directory (default: {out_default})")
    common.add_argument("--seed", type=int, help="override [run] seed")
    common.add_argument("--format", choices=("json", "csv"), default="json",
                        help="json only, or json plus plot-ready CSVs")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers for sweeps")
    return common


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="iostack-sim", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = _common("out")
    wl = argparse.ArgumentParser(add_help=False)
    wl.add_argument("--objects", type=int, help="object count")
    wl.add_argument("--size", help="object size, e.g. 8MiB")
    wl.add_argument("--threads", type=int, help="simulated client threads")
    wl.add_argument("--osd", type=int, help="OSD index to simulate")

    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common, wl], help="write a workload op stream")
    g.add_argument("--workload", required=True, help="w-o, r-o, r-w or enum")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("simulate", parents=[common, wl], help="run one stack on one device")
    s.add_argument("--stack", required=True, help="raw-block, object-drive or os-fs:<ag-extent|simple-extent>")
    s.add_argument("--device", choices=("hdd", "ssd"), required=True)
    s.add_argument("--workload", required=True)
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", parents=[common], help="metrics for an existing trace")
    a.add_argument("trace")
    a.add_argument("--blkparse", action="store_true", help="input is blkparse text")
    a.add_argument("--capacity", help="device capacity for blkparse input, e.g. 4GiB")
    a.add_argument("--tags", help="per-line tag overrides for blkparse input")
    a.add_argument("--time-bins", type=int, default=32)
    a.add_argument("--lba-bins", type=int, default=64)
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("compare", parents=[common, wl], help="OS stack vs object drive")
    c.add_argument("--os-result", help="simulate JSON of the OS run")
    c.add_argument("--od-result", help="simulate JSON of the object-drive run")
    c.add_argument("--workload")
    c.add_argument("--device", choices=("hdd", "ssd"), default="ssd")
    c.add_argument("--fs", choices=("ag-extent", "simple-extent"), default="ag-extent")
    c.add_argument("--all", action="store_true", help="W-O, R-O and R-W on both devices")
    c.set_defaults(func=cmd_compare)

    # calibrate prints to stdout and writes a file only when --out is given
    k = sub.add_parser("calibrate", parents=[_common(None)], help="check constants against target bands")
    k.set_defaults(func=cmd_calibrate)

    f = sub.add_parser("config", parents=[common], help="show the effective configuration")
    f.add_argument("--dump", action="store_true", help="print every setting as INI")
    f.set_defaults(func=cmd_config)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"iostack-sim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ComparisonError, TraceFormatError, UnknownKeyError,
            AllocationError, ValueError, OSError) as exc:
        print(f"iostack-sim: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
