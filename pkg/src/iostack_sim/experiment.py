"""End-to-end runs: workload -> per-OSD chunk stream -> stack model -> replay -> analysis.

Also the OS-vs-Object-Drive comparison, the device-utilisation sweep over thread
counts, and the calibration report that checks the shipped constants against
their target bands.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .analysis import AnalysisReport, analyze, detect_chains, layer_breakdown
from .config import SimConfig
from .device import HddProfile, SsdProfile
from .objdrive import ObjectDrive
from .osstack import OsStack, RawStack
from .replay import ReplayStats, replay
from .trace import IoTag, Op, Trace
from .workload import (
    ObjectOp,
    WorkloadSpec,
    generate_workload,
    population_ops,
    shard_to_osd,
)

STACK_KINDS = ("raw-block", "os-fs", "object-drive")
FS_NAMES = ("ag-extent", "simple-extent")
WORKLOADS = ("W-O", "R-O", "R-W")
# object count for the 128 MiB chain study (10.67 MiB per OSD each)
CHAIN_OBJECTS = 200
# metadata keys two runs must share to be comparable
COMPARE_KEYS = (
    "workload",
    "seed",
    "object_size",
    "object_count",
    "thread_count",
    "device",
    "osd_index",
)


class ComparisonError(ValueError):
    pass


@dataclass(frozen=True)
class StackProfile:
    kind: str
    fs: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in STACK_KINDS:
            raise ValueError(f"unknown stack {self.kind!r} (one of {', '.join(STACK_KINDS)})")
        if self.kind == "os-fs":
            if self.fs not in FS_NAMES:
                raise ValueError(f"os-fs needs a filesystem profile: {', '.join(FS_NAMES)}")
        elif self.fs is not None:
            raise ValueError(f"{self.kind} does not take a filesystem profile")

    @classmethod
    def parse(cls, text: str) -> "StackProfile":
        """``raw-block``, ``object-drive`` or ``os-fs:<profile>``."""
        kind, _, fs = text.partition(":")
        return cls(kind, fs or None)

    def __str__(self) -> str:
        return f"{self.kind}:{self.fs}" if self.fs else self.kind


def workload_spec(cfg: SimConfig, kind: str, **kw) -> WorkloadSpec:
    r = cfg.run
    base = dict(
        object_size=r.object_size,
        object_count=r.object_count,
        thread_count=r.thread_count,
        seed=r.seed,
        theta=r.theta,
        think_time_us=r.think_time_us,
    )
    base.update(kw)
    return WorkloadSpec.named(kind, **base)


def build_stack(stack: StackProfile, cfg: SimConfig):
    if stack.kind == "os-fs":
        c = cfg.cache
        return OsStack.fresh(
            cfg.fs(stack.fs),
            cfg.capacity_sectors,
            c.dcache_entries,
            c.pagecache_pages,
            c.dirty_ratio,
            cfg.costs,
        )
    if stack.kind == "object-drive":
        return ObjectDrive.fresh(cfg.drive, cfg.capacity_sectors, cfg.drive.host_cache_bytes // 4096)
    return RawStack(cfg.capacity_sectors, cfg.costs)


def _chunks(ops: list[ObjectOp], cfg: SimConfig, osd_index: int):
    out = []
    for op in ops:
        req = shard_to_osd(op, cfg.cluster, osd_index)
        if req is not None:
            out.append(req)
    return out


@dataclass
class RunResult:
    trace: Trace
    stats: ReplayStats
    total_time_us: float
    tag_bytes: dict[str, int]
    tag_counts: dict[str, int]
    tag_time_us: dict[str, float]
    analysis: AnalysisReport
    cache: dict[str, int] = field(default_factory=dict)

    @property
    def meta(self) -> dict[str, str]:
        return self.trace.meta

    def summary(self) -> dict:
        return {
            "meta": dict(self.meta),
            "total_time_us": self.total_time_us,
            "makespan_us": self.stats.makespan_us,
            "device_busy_us": self.stats.device_busy_us,
            "tag_bytes": self.tag_bytes,
            "tag_counts": self.tag_counts,
            "tag_time_us": self.tag_time_us,
            "fsm_bytes": self.tag_bytes["FSM"],
            "analysis": self.analysis.to_dict(),
        }


def result_from_trace(trace: Trace, stats: ReplayStats, cache=None, raw_count=None) -> RunResult:
    tag_time = {t.value: 0.0 for t in IoTag}
    for e in trace.events:
        tag_time[e.tag.value] += e.latency
    return RunResult(
        trace,
        stats,
        sum(tag_time.values()),
        {t.value: trace.total_bytes(t) for t in IoTag},
        {t.value: sum(1 for e in trace.events if e.tag is t) for t in IoTag},
        tag_time,
        analyze(trace, cache=cache, raw_count=raw_count),
        dict(cache or {}),
    )


def run(
    workload: WorkloadSpec,
    cfg: SimConfig,
    stack: StackProfile,
    device: HddProfile | SsdProfile,
    osd_index: int | None = None,
) -> RunResult:
    """One measured run on one OSD.

    Pre-populated workloads first push their key universe through the same stack
    untraced; caches are then dropped so the measured phase starts cold.
    """
    osd = cfg.run.osd_index if osd_index is None else osd_index
    st = build_stack(stack, cfg)
    if workload.prepopulated:
        st.translate(_chunks(population_ops(workload), cfg, osd))
    if hasattr(st, "drop_caches"):
        st.drop_caches()
    chunks = _chunks(generate_workload(workload, cfg.cluster), cfg, osd)
    meta = {
        "workload": workload.kind,
        "seed": str(workload.seed),
        "object_size": str(workload.object_size),
        "object_count": str(workload.object_count),
        "thread_count": str(workload.thread_count),
        "key_distribution": workload.key_distribution,
        "theta": f"{workload.theta:g}",
        "think_time_us": f"{workload.think_time_us:g}",
        "osd_index": str(osd),
        "profile": str(stack),
    }
    trace = st.translate(chunks, meta=meta)
    replayed, stats = replay(trace, device)
    cache = st.counters() if hasattr(st, "counters") else {}
    return result_from_trace(replayed, stats, cache, getattr(st, "last_raw_count", None))


@dataclass
class ComparisonReport:
    os_result: RunResult
    od_result: RunResult
    savings_fraction: float
    tag_delta_us: dict[str, float]
    breakdown: dict[str, dict[str, dict[str, float]]]
    savings_makespan: float
    savings_device_busy: float

    def to_dict(self) -> dict:
        return {
            "workload": self.os_result.meta.get("workload"),
            "device": self.os_result.meta.get("device"),
            "seed": self.os_result.meta.get("seed"),
            "os_profile": self.os_result.meta.get("profile"),
            "od_profile": self.od_result.meta.get("profile"),
            "os_total_us": self.os_result.total_time_us,
            "od_total_us": self.od_result.total_time_us,
            "savings_fraction": self.savings_fraction,
            "savings_makespan": self.savings_makespan,
            "savings_device_busy": self.savings_device_busy,
            "tag_delta_us": self.tag_delta_us,
            "breakdown": self.breakdown,
        }


def _savings(os_v: float, od_v: float) -> float:
    return 1.0 - od_v / os_v if os_v > 0 else 0.0


def compare(os: RunResult, od: RunResult) -> ComparisonReport:
    """Savings of ``od`` over ``os`` and per-tag breakdowns under both normalizations.

    ``per_workload`` divides both sides by the OS total, so the bars show the
    reduction; ``per_stack`` divides each side by its own total.
    """
    for k in COMPARE_KEYS:
        if os.meta.get(k) != od.meta.get(k):
            raise ComparisonError(
                f"results differ in {k}: {os.meta.get(k)!r} vs {od.meta.get(k)!r}"
            )
    tags = [t.value for t in IoTag]
    delta = {t: os.tag_time_us[t] - od.tag_time_us[t] for t in tags}

    def shares(r: RunResult, denom: float) -> dict[str, float]:
        return {t: (r.tag_time_us[t] / denom if denom > 0 else 0.0) for t in tags}

    base = os.total_time_us
    breakdown = {
        "per_workload": {"os": shares(os, base), "od": shares(od, base)},
        "per_stack": {"os": shares(os, base), "od": shares(od, od.total_time_us)},
    }
    return ComparisonReport(
        os,
        od,
        _savings(os.total_time_us, od.total_time_us),
        delta,
        breakdown,
        _savings(os.stats.makespan_us, od.stats.makespan_us),
        _savings(os.stats.device_busy_us, od.stats.device_busy_us),
    )


def compare_cell(cfg: SimConfig, workload: str, device: str, fs: str = "ag-extent") -> ComparisonReport:
    spec = workload_spec(cfg, workload)
    dev = cfg.device(device)
    os_r = run(spec, cfg, StackProfile("os-fs", fs), dev)
    od_r = run(spec, cfg, StackProfile("object-drive"), dev)
    return compare(os_r, od_r)


# -- device utilisation over thread counts -----------------------------------


@dataclass
class DuicPoint:
    stack: str
    io_bytes: int
    threads: int
    throughput_MBps: float
    kernel_share: float


def duic_point(
    cfg: SimConfig, stack: str, device: str, io_bytes: int, threads: int
) -> tuple[DuicPoint, Trace]:
    d = cfg.duic
    if stack == "raw-block":
        trace = RawStack(cfg.capacity_sectors, cfg.costs).sequential_writes(
            threads, io_bytes, d.ios_per_thread
        )
    else:
        st = build_stack(StackProfile("os-fs", "ag-extent"), cfg)
        trace = st.sequential_writes(threads, io_bytes, d.ios_per_thread, d.commit_every)
    replayed, stats = replay(trace, cfg.device(device))
    od_bytes = replayed.total_bytes(IoTag.OD, Op.WRITE)
    mbps = od_bytes / stats.makespan_us if stats.makespan_us else 0.0
    share = layer_breakdown(replayed).kernel_share
    return DuicPoint(stack, io_bytes, threads, mbps, share), replayed


def duic_sweep(cfg: SimConfig, device: str = "ssd", jobs: int = 1) -> list[DuicPoint]:
    d = cfg.duic
    cells = [
        (stack, io, t)
        for stack in ("raw-block", "os-fs")
        for io in d.io_size_list
        for t in d.thread_list
    ]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(lambda c: duic_point(cfg, c[0], device, c[1], c[2])[0], cells))


def saturation_threads(points: list[DuicPoint], frac: float = 0.9) -> int:
    """Fewest threads reaching ``frac`` of the curve's own maximum throughput."""
    peak = max(p.throughput_MBps for p in points)
    return min(p.threads for p in points if p.throughput_MBps >= frac * peak)


def reference_kernel_share(cfg: SimConfig, device: str = "ssd") -> float:
    d = cfg.duic
    point, _ = duic_point(cfg, "os-fs", device, d.reference_io_bytes, d.reference_threads)
    return point.kernel_share


def duic_checks(points: list[DuicPoint]) -> dict[str, bool]:
    def curve(stack, io):
        return sorted((p for p in points if p.stack == stack and p.io_bytes == io), key=lambda p: p.threads)

    sizes = sorted({p.io_bytes for p in points})
    raw_ge_os = all(
        r.throughput_MBps >= o.throughput_MBps
        for io in sizes
        for r, o in zip(curve("raw-block", io), curve("os-fs", io))
    )
    os_later = all(
        saturation_threads(curve("os-fs", io)) > saturation_threads(curve("raw-block", io))
        for io in sizes
    )
    small, large = sizes[0], sizes[-1]
    large_first = all(
        saturation_threads(curve(stack, large)) < saturation_threads(curve(stack, small))
        for stack in ("raw-block", "os-fs")
    )
    return {
        "raw_ge_os_every_T": raw_ge_os,
        "os_saturates_later": os_later,
        "large_io_saturates_first": large_first,
    }


# -- enumeration -----------------------------------------------------------------


def enum_pair(cfg: SimConfig, device: str = "ssd") -> dict[str, float]:
    spec = workload_spec(cfg, "ENUM")
    dev = cfg.device(device)
    ag = run(spec, cfg, StackProfile("os-fs", "ag-extent"), dev)
    simple = run(spec, cfg, StackProfile("os-fs", "simple-extent"), dev)
    return {
        "ag_total_us": ag.total_time_us,
        "simple_total_us": simple.total_time_us,
        "time_ratio": simple.total_time_us / ag.total_time_us,
        "ag_fsm_ios": ag.tag_counts["FSM"],
        "simple_fsm_ios": simple.tag_counts["FSM"],
        "fsm_ratio": simple.tag_counts["FSM"] / max(1, ag.tag_counts["FSM"]),
    }


def chain_fractions(cfg: SimConfig, device: str = "ssd", **kw) -> dict[str, float]:
    """OD-write chain fractions at or above NTS for the three stacks on W-O."""
    spec = workload_spec(cfg, "W-O", **kw)
    dev = cfg.device(device)
    out = {}
    for stack in ("os-fs:ag-extent", "os-fs:simple-extent", "object-drive"):
        r = run(spec, cfg, StackProfile.parse(stack), dev)
        out[stack] = detect_chains(r.trace, IoTag.OD, Op.WRITE).count_ge_nts_fraction
    return out


# -- calibration ---------------------------------------------------------------------


@dataclass
class Target:
    name: str
    value: float
    low: float
    high: float

    @property
    def hit(self) -> bool:
        return self.low <= self.value <= self.high and not math.isnan(self.value)


def calibrate(cfg: SimConfig, jobs: int = 1) -> list[Target]:
    """Evaluate the calibration targets under ``cfg``."""
    targets = [Target("kernel_share_128K_T64", reference_kernel_share(cfg), 0.35, 0.40)]
    cells = [(w, d) for d in ("hdd", "ssd") for w in WORKLOADS]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        reports = list(pool.map(lambda c: compare_cell(cfg, *c), cells))
    for (w, d), rep in zip(cells, reports):
        targets.append(Target(f"savings_{w}_{d}", rep.savings_fraction, 0.20, 0.38))
    e = enum_pair(cfg)
    targets.append(Target("enum_time_ratio", e["time_ratio"], 2.0, 4.0))
    targets.append(Target("enum_fsm_ratio", e["fsm_ratio"], 5.0, math.inf))
    # chain targets need chunks larger than NTS, so they use full-size objects
    ch = chain_fractions(cfg, object_size=128 << 20, object_count=CHAIN_OBJECTS)
    targets.append(Target("chains_ge_nts_ag_extent", ch["os-fs:ag-extent"], 0.70, 0.90))
    targets.append(Target("chains_ge_nts_simple_extent", ch["os-fs:simple-extent"], 0.20, 0.40))
    return targets
