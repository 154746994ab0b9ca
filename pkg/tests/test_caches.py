import random
from collections import OrderedDict

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iostack_sim.caches import DcacheModel, PageCacheModel


class LruOracle:
    """Reference LRU set written independently of the model under test."""

    def __init__(self, cap):
        self.cap = cap
        self.items = []

    def access(self, k):
        if k in self.items:
            self.items.remove(k)
            self.items.append(k)
            return True
        if self.cap:
            self.items.append(k)
            if len(self.items) > self.cap:
                self.items.pop(0)
        return False


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 12), st.lists(st.integers(0, 30), max_size=300))
def test_dcache_matches_oracle(cap, seq):
    d, o = DcacheModel(cap), LruOracle(cap)
    for k in seq:
        assert d.lookup(str(k)) == o.access(str(k))
    assert len(d) == len(o.items)
    assert d.hits + d.misses == len(seq)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=1, max_size=400), st.integers(1, 10))
def test_lru_inclusion(seq, small):
    # a larger LRU never misses where a smaller one hits
    a, b = DcacheModel(small), DcacheModel(small * 2)
    for k in seq:
        ha = a.lookup(str(k))
        hb = b.lookup(str(k))
        assert hb or not ha


def test_dcache_drop():
    d = DcacheModel(4)
    d.lookup("a")
    d.drop()
    assert not d.lookup("a")
    assert d.counters() == {"dcache_hits": 0, "dcache_misses": 2}


def test_dcache_negative_capacity():
    with pytest.raises(ValueError):
        DcacheModel(-1)


def test_pagecache_lru_against_oracle():
    rng = random.Random(3)
    cap = 16
    pc, o = PageCacheModel(cap), LruOracle(cap)
    for _ in range(2000):
        k = ("f", rng.randrange(40))
        hit = pc.lookup(*k)
        assert hit == (k in o.items)
        o.access(k)
        pc.insert(*k)
        assert len(pc) == len(o.items)
    assert set(pc._lru) == set(o.items)


def test_dirty_eviction_calls_writeback():
    flushed = []
    pc = PageCacheModel(2)

    def wb(f):
        flushed.append(f)
        pc.clean(f)

    pc.writeback = wb
    pc.insert("a", 0, dirty=True)
    pc.insert("b", 0)
    pc.insert("c", 0)
    assert flushed == ["a"]
    assert ("a", 0) not in pc and pc.n_dirty == 0


def test_dirty_eviction_without_hook_fails():
    pc = PageCacheModel(1)
    pc.insert("a", 0, dirty=True)
    with pytest.raises(RuntimeError):
        pc.insert("b", 0)


def test_dirty_accounting():
    pc = PageCacheModel(100, 0.05)
    for p in range(6):
        pc.insert("f", p, dirty=True)
    pc.insert("f", 0, dirty=True)
    assert pc.n_dirty == 6
    assert pc.over_dirty_threshold()
    assert pc.dirty_pages("f") == list(range(6))
    pc.clean("f", [0, 1])
    assert pc.n_dirty == 4 and pc.dirty_files() == ["f"]
    pc.invalidate("f")
    assert pc.n_dirty == 0 and len(pc) == 0


def test_drop_clean_keeps_dirty():
    pc = PageCacheModel(10)
    pc.insert("a", 0)
    pc.insert("b", 0, dirty=True)
    pc.drop_clean()
    assert ("a", 0) not in pc and ("b", 0) in pc


@pytest.mark.parametrize("kw", [dict(capacity_pages=0), dict(capacity_pages=4, dirty_ratio_threshold=0)])
def test_pagecache_validation(kw):
    with pytest.raises(ValueError):
        PageCacheModel(**kw)
