"""Object-level workload generation and erasure-coded chunking."""

from __future__ import annotations

import csv
import enum
import hashlib
import math
import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

PAGE = 4096
KEY_WIDTH = 12

# PUT:GET percentages per named workload
WORKLOAD_RATIOS = {
    "W-O": (95, 5),
    "R-O": (5, 95),
    "R-W": (50, 50),
}


class OpKind(str, enum.Enum):
    PUT = "PUT"
    GET = "GET"
    LIST = "LIST"


@dataclass(frozen=True)
class ClusterSpec:
    data_shards: int = 12
    parity_shards: int = 4
    num_osds: int = 16
    num_nodes: int = 4

    def __post_init__(self) -> None:
        if self.data_shards < 1:
            raise ValueError("data_shards must be >= 1")
        if self.parity_shards < 0:
            raise ValueError("parity_shards must be >= 0")
        if self.num_osds < self.data_shards + self.parity_shards:
            raise ValueError("num_osds must be >= data_shards + parity_shards")
        if self.num_nodes < 1 or self.num_osds % self.num_nodes:
            raise ValueError("num_osds must be a positive multiple of num_nodes")

    @property
    def width(self) -> int:
        return self.data_shards + self.parity_shards


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str
    object_size: int
    object_count: int
    key_distribution: str = "uniform"
    theta: float = 0.99
    thread_count: int = 1
    seed: int = 0
    think_time_us: float = 0.0
    # measured ops; defaults to object_count
    op_count: int | None = None

    def __post_init__(self) -> None:
        kind = self.kind.upper()
        if kind not in (*WORKLOAD_RATIOS, "ENUM"):
            raise ValueError(f"unknown workload kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.object_size <= 0:
            raise ValueError("object_size must be positive")
        if self.key_distribution not in ("uniform", "zipfian"):
            raise ValueError(f"unknown key distribution {self.key_distribution!r}")
        if self.key_distribution == "zipfian" and not 0.0 < self.theta < 1.0:
            raise ValueError("zipfian theta must lie in (0, 1)")
        if self.thread_count < 1:
            raise ValueError("thread_count must be >= 1")
        if self.think_time_us < 0:
            raise ValueError("think_time_us must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    @property
    def put_get_ratio(self) -> tuple[int, int] | None:
        return WORKLOAD_RATIOS.get(self.kind)

    @property
    def prepopulated(self) -> bool:
        return self.kind != "W-O"

    @property
    def n_ops(self) -> int:
        return self.object_count if self.op_count is None else self.op_count

    @classmethod
    def named(cls, kind: str, **kw) -> "WorkloadSpec":
        """Named workload with its customary key distribution (W-O uniform, reads zipfian)."""
        kind = kind.upper()
        kw.setdefault("key_distribution", "uniform" if kind in ("W-O", "ENUM") else "zipfian")
        return cls(kind=kind, **kw)


@dataclass(frozen=True)
class ObjectOp:
    ts: float
    kind: OpKind
    key: str
    size: int
    thread_id: int
    # LIST only: number of keys covered
    key_count: int = 0


@dataclass(frozen=True)
class ChunkRequest:
    kind: OpKind
    key: str
    chunk_bytes: int
    thread_id: int
    ts: float = 0.0
    exact_bytes: Fraction = Fraction(0)
    key_count: int = 0


def make_key(index: int) -> str:
    return f"{index:0{KEY_WIDTH}d}"


def chunk_exact(object_size: int, cluster: ClusterSpec) -> Fraction:
    """Ideal per-OSD share of one object: O(D+P) / (D * D_i), as an exact rational."""
    if object_size <= 0:
        raise ValueError("object_size must be positive")
    return Fraction(object_size * cluster.width, cluster.data_shards * cluster.num_osds)


def chunk_object(object_size: int, cluster: ClusterSpec) -> int:
    """Per-OSD chunk in bytes, rounded up to a whole 4 KiB page."""
    exact = chunk_exact(object_size, cluster)
    return math.ceil(exact / PAGE) * PAGE


def zipf_ranks(n: int, theta: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw 1-based ranks with P(r) proportional to 1/r**theta over 1..n."""
    weights = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** theta
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    u = rng.random(size)
    return np.searchsorted(cdf, u, side="right") + 1


def generate_workload(spec: WorkloadSpec, cluster: ClusterSpec | None = None) -> list[ObjectOp]:
    """Deterministic op stream for ``spec``.

    R-O, R-W and ENUM address a pre-populated universe of ``object_count`` keys
    (see :func:`population_ops`); their PUTs create new keys past that universe.
    W-O creates keys as it goes and reads back uniformly among keys already
    written, so a GET drawn before the first PUT is issued as a PUT instead.
    Ops are dealt round-robin to threads; each thread's timestamps advance by the
    think time.
    """
    if spec.object_count <= 0:
        raise ValueError("object_count must be positive")
    n = spec.object_count
    if spec.kind == "ENUM":
        return [ObjectOp(0.0, OpKind.LIST, "", 0, 0, key_count=n)]

    rng = np.random.default_rng(spec.seed)
    n_ops = spec.n_ops
    put_pct = spec.put_get_ratio[0]
    is_put = rng.random(n_ops) < put_pct / 100.0
    if spec.key_distribution == "zipfian":
        # scrambled so hot keys are spread over the key space
        perm = rng.permutation(n)
        picks = perm[zipf_ranks(n, spec.theta, n_ops, rng) - 1]
    else:
        picks = rng.integers(0, n, size=n_ops)
    uniform_u = rng.random(n_ops)

    ops: list[ObjectOp] = []
    next_new = 0 if spec.kind == "W-O" else n
    per_thread = [0] * spec.thread_count
    for i in range(n_ops):
        tid = i % spec.thread_count
        ts = per_thread[tid] * spec.think_time_us
        per_thread[tid] += 1
        if spec.kind == "W-O":
            if is_put[i] or next_new == 0:
                key, kind = make_key(next_new), OpKind.PUT
                next_new += 1
            else:
                key, kind = make_key(int(uniform_u[i] * next_new)), OpKind.GET
        elif is_put[i]:
            key, kind = make_key(next_new), OpKind.PUT
            next_new += 1
        else:
            key, kind = make_key(int(picks[i])), OpKind.GET
        ops.append(ObjectOp(ts, kind, key, spec.object_size, tid))
    return ops


def population_ops(spec: WorkloadSpec) -> list[ObjectOp]:
    """PUTs that create the pre-populated key universe, dealt round-robin to threads."""
    return [
        ObjectOp(0.0, OpKind.PUT, make_key(i), spec.object_size, i % spec.thread_count)
        for i in range(spec.object_count)
    ]


def _stripe_start(key: str, cluster: ClusterSpec) -> int:
    digest = hashlib.blake2b(key.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") % cluster.num_osds


def shard_to_osd(op: ObjectOp, cluster: ClusterSpec, osd_index: int) -> ChunkRequest | None:
    """The request OSD ``osd_index`` receives for ``op``, or None if it holds no shard.

    The D+P shards of an object land on distinct OSDs, a run of consecutive OSDs
    starting at a key hash. LIST passes through to every OSD.
    """
    if not 0 <= osd_index < cluster.num_osds:
        raise ValueError(f"osd_index {osd_index} outside [0, {cluster.num_osds})")
    if op.kind is OpKind.LIST:
        return ChunkRequest(OpKind.LIST, op.key, 0, op.thread_id, op.ts, key_count=op.key_count)
    offset = (osd_index - _stripe_start(op.key, cluster)) % cluster.num_osds
    if offset >= cluster.width:
        return None
    return ChunkRequest(
        op.kind,
        op.key,
        chunk_object(op.size, cluster),
        op.thread_id,
        op.ts,
        exact_bytes=chunk_exact(op.size, cluster),
    )


def write_ops_csv(ops: list[ObjectOp], path: str | os.PathLike, meta: dict | None = None) -> None:
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        if meta:
            fh.write("# " + " ".join(f"{k}={meta[k]}" for k in sorted(meta)) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ts_us", "kind", "key", "size", "thread_id", "key_count"])
        for o in ops:
            w.writerow([f"{o.ts:.3f}", o.kind.value, o.key, o.size, o.thread_id, o.key_count])
