"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line."""

import functools
import json
import random
import time
from fractions import Fraction

import pytest

from iostack_sim.analysis import build_heatmap, compute_cdf, detect_chains
from iostack_sim.caches import DcacheModel, PageCacheModel
from iostack_sim.cli import main
from iostack_sim.config import SimConfig
from iostack_sim.experiment import (
    CHAIN_OBJECTS,
    WORKLOADS,
    chain_fractions,
    compare_cell,
    duic_checks,
    duic_sweep,
    enum_pair,
    reference_kernel_share,
)
from iostack_sim.trace import IoTag
from iostack_sim.workload import ClusterSpec, ObjectOp, OpKind, chunk_exact, shard_to_osd

from .conftest import random_trace
from .test_analysis import oracle_cdf, oracle_chains, oracle_heatmap
from .test_caches import LruOracle

MiB = 1 << 20
CELLS = [(w, d) for d in ("hdd", "ssd") for w in WORKLOADS]


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


@functools.lru_cache(maxsize=None)
def savings_cells():
    cfg = SimConfig()
    t0 = time.perf_counter()
    reports = {cell: compare_cell(cfg, *cell) for cell in CELLS}
    return reports, time.perf_counter() - t0


def test_criterion_1_savings_band(capsys):
    reports, elapsed = savings_cells()
    vals = {f"{w}/{d}": round(r.savings_fraction, 3) for (w, d), r in reports.items()}
    ok = all(0.20 <= r.savings_fraction <= 0.38 for r in reports.values()) and elapsed < 60
    report(capsys, 1, ok, f"savings {vals} in {elapsed:.1f} s (band [0.20, 0.38], budget 60 s)")


def test_criterion_2_kernel_share(capsys):
    share = reference_kernel_share(SimConfig(), "ssd")
    report(capsys, 2, 0.35 <= share <= 0.40, f"kernel share {share:.3f} (band [0.35, 0.40])")


def test_criterion_3_duic_ordering(capsys):
    checks = duic_checks(duic_sweep(SimConfig(), "ssd"))
    report(capsys, 3, all(checks.values()), f"{checks}")


def test_criterion_4_enumeration(capsys):
    e = enum_pair(SimConfig(), "ssd")
    ok = 2.0 <= e["time_ratio"] <= 4.0 and e["simple_fsm_ios"] >= 5 * e["ag_fsm_ios"]
    report(
        capsys, 4, ok,
        f"time ratio {e['time_ratio']:.2f} (band [2, 4]), FSM IOs "
        f"{e['simple_fsm_ios']} vs {e['ag_fsm_ios']} (need >= 5x)",
    )


def test_criterion_5_chain_dominance(capsys):
    ch = chain_fractions(SimConfig(), "ssd", object_size=128 * MiB, object_count=CHAIN_OBJECTS)
    ag, simple, od = ch["os-fs:ag-extent"], ch["os-fs:simple-extent"], ch["object-drive"]
    ok = ag > simple and od >= ag
    report(capsys, 5, ok, f"count >= NTS: ag {ag:.3f} > simple {simple:.3f}; drive {od:.3f} >= ag")


def test_criterion_6_oracles(capsys):
    rng = random.Random(2024)
    mismatches = {"chains": 0, "cdf": 0, "heatmap": 0, "lru": 0}
    for i in range(1000):
        t = random_trace(rng, rng.randrange(1, 200), capacity=rng.choice((1 << 12, 1 << 20)))
        if detect_chains(t).chains != oracle_chains(t.events):
            mismatches["chains"] += 1
        got = compute_cdf(t).points
        want = oracle_cdf([e.nbytes for e in t.events])
        if [s for s, _ in got] != [s for s, _ in want] or any(
            abs(a - b) > 1e-12 for (_, a), (_, b) in zip(got, want)
        ):
            mismatches["cdf"] += 1
        tb, lb = rng.randrange(1, 9), rng.randrange(1, 33)
        hm = build_heatmap(t, tb, lb)
        if hm.counts.tolist() != oracle_heatmap(t.events, tb, lb, t.device_capacity_sectors):
            mismatches["heatmap"] += 1
        # LRU counters: dcache over paths and page cache over (file, page)
        cap = rng.randrange(1, 16)
        d, pc, o = DcacheModel(cap), PageCacheModel(cap), LruOracle(cap)
        hits = 0
        for e in t.events:
            key = e.lba % 40
            h = o.access(key)
            hits += h
            if d.lookup(str(key)) != h or pc.lookup("f", key) != h:
                mismatches["lru"] += 1
                break
            pc.insert("f", key)
        if (d.hits, d.misses) != (hits, len(t) - hits) or (pc.hits, pc.misses) != (hits, len(t) - hits):
            mismatches["lru"] += 1
    report(capsys, 6, not any(mismatches.values()), f"mismatches over 1,000 traces: {mismatches}")


def test_criterion_7_conservation(capsys):
    reports, _ = savings_cells()
    worst_gap = 0.0
    chains_ok = bios_ok = fsm_ok = True
    for rep in reports.values():
        for res in (rep.os_result, rep.od_result):
            tr = res.trace
            for e in tr.events:
                worst_gap = max(worst_gap, abs(sum(e.layer_lat.values()) - e.latency))
            for tag in (None, *IoTag):
                if detect_chains(tr, tag).total_bytes != tr.total_bytes(tag):
                    chains_ok = False
        # the 256 KiB limit belongs to the block layer; drive commands bypass it
        if any(e.nbytes > 256 * 1024 for e in rep.os_result.trace.events):
            bios_ok = False
        if any(e.tag is IoTag.FSM for e in rep.od_result.trace.events):
            fsm_ok = False
    ok = worst_gap <= 1.0 and chains_ok and bios_ok and fsm_ok
    report(
        capsys, 7, ok,
        f"max |layers - latency| {worst_gap:.2e} us, chain bytes ok {chains_ok}, "
        f"BIOs <= 256 KiB {bios_ok}, drive FSM-free {fsm_ok}",
    )


def test_criterion_8_chunk_exactness(capsys):
    c = ClusterSpec(12, 4, 16, 4)
    exact = chunk_exact(128 * MiB, c)
    first = exact == Fraction(128 * MiB, 12)
    rng = random.Random(8)
    sums_ok = True
    for _ in range(200):
        size = rng.randrange(1, 1 << 32)
        op = ObjectOp(0.0, OpKind.PUT, f"k{rng.random()}", size, 0)
        total = sum(
            r.exact_bytes for i in range(c.num_osds) if (r := shard_to_osd(op, c, i)) is not None
        )
        sums_ok &= total == Fraction(size * (c.data_shards + c.parity_shards), c.data_shards)
    report(capsys, 8, first and sums_ok, f"chunk {exact} B == 128/12 MiB: {first}; OSD sums exact: {sums_ok}")


def test_criterion_9_determinism(capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("IOSTACK_SIM_CONFIG", raising=False)
    small = ["--objects", "150", "--seed", "11"]
    for out in ("a", "b"):
        for stack in ("os-fs:ag-extent", "os-fs:simple-extent", "object-drive", "raw-block"):
            assert main(["simulate", "--stack", stack, "--device", "hdd", "--workload", "r-w",
                         "--out", out, *small]) == 0
        assert main(["compare", "--workload", "w-o", "--device", "ssd", "--out", out, *small]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = names == sorted(p.name for p in (tmp_path / "b").iterdir()) and all(
        (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names
    )
    json.loads((tmp_path / "a" / "comparison_w-o_ssd_seed11.json").read_text())
    report(capsys, 9, same, f"{len(names)} output files byte-identical across two runs: {same}")
