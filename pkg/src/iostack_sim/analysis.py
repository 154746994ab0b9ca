"""Metric suite over traces: sequential chains, IO-size CDFs, LBA heatmaps,
per-layer latency shares and block-layer coalescing."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .device import NTS_DEFAULT
from .trace import LAYERS, IoEvent, IoTag, Op, Trace


def _select(trace: Trace, tag: IoTag | None, op: Op | None) -> list[IoEvent]:
    return [
        e for e in trace.events if (tag is None or e.tag is tag) and (op is None or e.op is op)
    ]


def trace_nts(trace: Trace) -> int:
    return int(trace.meta.get("nts_bytes", NTS_DEFAULT))


@dataclass
class ChainStats:
    chains: list[int]
    count_ge_nts_fraction: float
    byte_ge_nts_fraction: float
    nts_bytes: int = NTS_DEFAULT

    @property
    def total_bytes(self) -> int:
        return sum(self.chains)

    def summary(self) -> dict:
        c = self.chains
        return {
            "count": len(c),
            "total_bytes": sum(c),
            "mean_bytes": sum(c) / len(c) if c else 0.0,
            "max_bytes": max(c, default=0),
            "count_ge_nts_fraction": self.count_ge_nts_fraction,
            "byte_ge_nts_fraction": self.byte_ge_nts_fraction,
            "nts_bytes": self.nts_bytes,
        }


def chains_from_events(events: list[IoEvent], nts_bytes: int = NTS_DEFAULT) -> ChainStats:
    chains: list[int] = []
    prev_end = None
    for e in events:
        if prev_end is not None and e.lba == prev_end:
            chains[-1] += e.nbytes
        else:
            chains.append(e.nbytes)
        prev_end = e.end
    big = [c for c in chains if c >= nts_bytes]
    total = sum(chains)
    return ChainStats(
        chains,
        len(big) / len(chains) if chains else 0.0,
        sum(big) / total if total else 0.0,
        nts_bytes,
    )


def detect_chains(
    trace: Trace,
    tag_filter: IoTag | None = None,
    op_filter: Op | None = None,
    *,
    nts_bytes: int | None = None,
    order: str = "submission",
) -> ChainStats:
    """Maximal runs of events each starting where the previous one ended.

    ``order="completion"`` scans a replayed trace in completion order instead.
    """
    events = _select(trace, tag_filter, op_filter)
    if order == "completion":
        if not trace.replayed:
            raise ValueError("completion-order chains need a replayed trace")
        events = sorted(events, key=lambda e: (e.complete_ts, e.thread_id, e.lba))
    elif order != "submission":
        raise ValueError(f"unknown order {order!r}")
    return chains_from_events(events, nts_bytes or trace_nts(trace))


@dataclass
class SizeCdf:
    points: list[tuple[int, float]]
    op: str = "all"
    tag: str = "all"

    def fraction_at_most(self, size: int) -> float:
        frac = 0.0
        for s, f in self.points:
            if s > size:
                break
            frac = f
        return frac


def compute_cdf(trace: Trace, tag: IoTag | None = None, op: Op | None = None) -> SizeCdf:
    sizes = [e.nbytes for e in _select(trace, tag, op)]
    if not sizes:
        raise ValueError("no events match the CDF filter")
    counts = sorted(Counter(sizes).items())
    points, acc = [], 0
    for size, n in counts:
        acc += n
        points.append((size, acc / len(sizes)))
    points[-1] = (points[-1][0], 1.0)
    return SizeCdf(points, op.name if op else "all", tag.value if tag else "all")


@dataclass
class Heatmap:
    counts: np.ndarray  # time_bins x lba_bins
    t0_us: float
    time_bin_us: float
    lba_bin_sectors: float

    def lba_profile(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def band_count(self) -> int:
        """Number of contiguous runs of non-empty LBA bins."""
        occupied = self.lba_profile() > 0
        return int(np.sum(occupied[1:] & ~occupied[:-1]) + (1 if occupied[0] else 0))


def build_heatmap(
    trace: Trace, time_bins: int, lba_bins: int, tag: IoTag | None = None
) -> Heatmap:
    if time_bins < 1 or lba_bins < 1:
        raise ValueError("bin counts must be >= 1")
    events = _select(trace, tag, None)
    counts = np.zeros((time_bins, lba_bins), dtype=np.int64)
    cap = trace.device_capacity_sectors
    if not events:
        return Heatmap(counts, 0.0, 1.0, cap / lba_bins)
    t0 = min(e.submit_ts for e in events)
    span = max(e.submit_ts for e in events) - t0
    width = span / time_bins if span > 0 else 1.0
    for e in events:
        tb = min(int((e.submit_ts - t0) / width), time_bins - 1)
        lb = min(e.lba * lba_bins // cap, lba_bins - 1)
        counts[tb, lb] += 1
    return Heatmap(counts, t0, width, cap / lba_bins)


@dataclass
class LayerBreakdown:
    totals: dict[str, float]
    shares: dict[str, float]

    @property
    def kernel_share(self) -> float:
        return self.shares["vfs"] + self.shares["fs"] + self.shares["block"]


def layer_breakdown(trace: Trace, tag: IoTag | None = None) -> LayerBreakdown:
    if not trace.replayed:
        raise ValueError("layer breakdown needs a replayed trace")
    events = _select(trace, tag, None)
    totals = {layer: 0.0 for layer in LAYERS}
    for e in events:
        for layer, v in e.layer_lat.items():
            totals[layer] += v
    grand = sum(totals.values())
    if grand <= 0:
        raise ValueError("trace carries no latency")
    return LayerBreakdown(totals, {k: v / grand for k, v in totals.items()})


@dataclass
class CoalesceReport:
    raw_count: int
    bio_count: int
    mean_merge: float
    max_merge: int


def coalesce_stats(raw_count: int, emitted: Trace) -> CoalesceReport:
    n = len(emitted)
    if raw_count < n:
        raise ValueError(f"raw_count {raw_count} below emitted event count {n}")
    if n == 0:
        return CoalesceReport(raw_count, 0, 1.0, 1)
    return CoalesceReport(
        raw_count, n, raw_count / n, max(max(e.merged for e in emitted.events), 1)
    )


@dataclass
class AnalysisReport:
    events: int
    tag_bytes: dict[str, int]
    tag_counts: dict[str, int]
    chains: dict[str, dict]
    cdf: dict[str, list]
    layers: dict[str, dict] = field(default_factory=dict)
    cache: dict[str, int] = field(default_factory=dict)
    coalesce: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def analyze(
    trace: Trace, *, cache: dict[str, int] | None = None, raw_count: int | None = None
) -> AnalysisReport:
    tag_bytes = {t.value: trace.total_bytes(t) for t in IoTag}
    tag_counts = {t.value: sum(1 for e in trace.events if e.tag is t) for t in IoTag}
    chains = {
        "all": detect_chains(trace).summary(),
        "OD": detect_chains(trace, IoTag.OD).summary(),
        "OD_write": detect_chains(trace, IoTag.OD, Op.WRITE).summary(),
        "OD_read": detect_chains(trace, IoTag.OD, Op.READ).summary(),
    }
    cdf = {}
    for op in (None, Op.READ, Op.WRITE):
        try:
            c = compute_cdf(trace, None, op)
        except ValueError:
            continue
        cdf[c.op] = [list(p) for p in c.points]
    layers = {}
    if trace.replayed and trace.events:
        lb = layer_breakdown(trace)
        layers = {"totals": lb.totals, "shares": lb.shares, "kernel_share": lb.kernel_share}
    co = None
    if raw_count is not None:
        co = asdict(coalesce_stats(raw_count, trace))
    return AnalysisReport(len(trace), tag_bytes, tag_counts, chains, cdf, layers, cache or {}, co)


def write_json(obj, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_cdf_csv(cdf: SizeCdf, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["size_bytes", "cumulative_fraction"])
        for s, f in cdf.points:
            w.writerow([s, f"{f:.6f}"])


def write_heatmap_csv(hm: Heatmap, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time_bin"] + [f"lba_{j}" for j in range(hm.counts.shape[1])])
        for i, row in enumerate(hm.counts):
            w.writerow([i] + [int(x) for x in row])
