from collections import Counter

import pytest

from cachelab.policies import (
    FifoCache,
    GdsfCache,
    LfudaCache,
    LruCache,
    LrukCache,
    S4LruCache,
    make_fifo,
    make_lru,
    make_s4lru,
    make_thlru,
    policy_from_name,
    simulate,
)
from cachelab.trace import ConfigError, Request

from conftest import random_trace, req_seq

ALL_NAMES = ["lru", "fifo", "s4lru", "lfuda", "lruk", "gdsf"]


class TestLru:
    def test_aba_capacity_one(self):
        rep = simulate("lru", req_seq("ABA"), 1)
        assert rep.counters.hits == 0
        assert rep.counters.misses == 3
        assert rep.eviction_log == [(1, "A"), (2, "B")]

    def test_victim_is_always_tail(self, rng):
        # shadow recency list: the reported victims must match its tail
        tr = random_trace(rng, 500, 30, max_size=5)
        cache = LruCache(25)
        shadow = []
        for req in tr:
            res = cache.access(req)
            if res.hit:
                shadow.remove(req.key)
                shadow.append(req.key)
            elif res.admitted:
                shadow.append(req.key)
            for victim in res.evicted:
                assert victim == shadow[0]
                shadow.pop(0)

    def test_tail_view_order(self):
        cache = LruCache(10)
        for r in req_seq("ABC"):
            cache.access(r)
        cache.access(req_seq("ABCA")[3])  # hit A -> most recent
        assert cache.tail_view(2) == ["B", "C"]


class TestS4Lru:
    def test_hit_promotes_one_level(self):
        cache = S4LruCache(40, segments=4)
        cache.access(Request(0, "x", 1))
        assert cache._level["x"] == 0
        cache.access(Request(1, "x", 1))
        assert cache._level["x"] == 1
        cache.access(Request(2, "x", 1))
        cache.access(Request(3, "x", 1))
        cache.access(Request(4, "x", 1))
        assert cache._level["x"] == 3  # capped at the top segment

    def test_single_segment_equals_lru(self, rng):
        for trial in range(10):
            tr = random_trace(rng, 300, 20, max_size=6)
            a = simulate(make_s4lru(segments=1), tr, 30)
            b = simulate("lru", tr, 30)
            assert a.counters == b.counters
            assert a.eviction_log == b.eviction_log

    def test_promotion_cascade_pushes_tail_down(self):
        # quotas of 1 byte per segment: promoting b into segment 1 pushes
        # the previously promoted a back down to segment 0
        cache = S4LruCache(4, segments=4)
        cache.access(Request(0, "a", 1))
        cache.access(Request(1, "b", 1))
        cache.access(Request(2, "a", 1))  # a -> segment 1
        assert cache._level["a"] == 1
        cache.access(Request(3, "b", 1))  # b -> segment 1, a spills down
        assert cache._level["b"] == 1
        assert cache._level["a"] == 0

    def test_hits_never_evict(self, rng):
        tr = random_trace(rng, 400, 25, max_size=6)
        cache = S4LruCache(30, segments=4)
        for req in tr:
            res = cache.access(req)
            if res.hit:
                assert not res.evicted


class TestThLru:
    def test_oversized_for_threshold_not_admitted(self):
        factory = make_thlru(threshold_bytes=100)
        cache = factory.build(1000)
        res = cache.access(Request(0, "big", 101))
        assert not res.hit and not res.admitted and not res.evicted
        assert cache.occupancy() == 0

    def test_small_objects_behave_as_lru(self, rng):
        tr = random_trace(rng, 300, 20, max_size=6)
        a = simulate(make_thlru(threshold_bytes=6), tr, 30)
        b = simulate("lru", tr, 30)
        assert a.counters == b.counters

    def test_invalid_threshold(self):
        with pytest.raises(ConfigError):
            make_thlru(0)


class TestGdsf:
    def test_hand_priorities(self):
        # A(2) B(1) C(2) A(2), capacity 4.
        # Admissions give A,C priority 0.5 and B priority 1.0; the first
        # eviction ties A/C at 0.5 and takes the least recent (A), clock 0.5.
        # Re-admitting A at 0.5+0.5=1.0 then evicts C (0.5 minimum).
        tr = [Request(0, "A", 2), Request(1, "B", 1), Request(2, "C", 2),
              Request(3, "A", 2)]
        rep = simulate("gdsf", tr, 4)
        assert rep.eviction_log == [(2, "A"), (3, "C")]
        cache = GdsfCache(4)
        for r in tr:
            cache.access(r)
        assert sorted(k for k, _ in cache.contents()) == ["A", "B"]


class TestLfuda:
    def test_aging_offset_jump(self):
        # A B A C D, unit sizes, capacity 2: C's admission evicts B
        # (tie at priority 1 broken to the least recent), aging offset 1;
        # D enters at priority 2 and evicts C (priority 1).
        rep = simulate("lfuda", req_seq("ABACD"), 2)
        assert rep.eviction_log == [(3, "B"), (4, "C")]


class TestLruk:
    def test_once_accessed_evicted_first(self):
        rep = simulate("lruk", req_seq("ABAC"), 2)
        assert rep.eviction_log == [(3, "B")]

    def test_bare_lru_below_k(self):
        rep = simulate("lruk", req_seq("ABC"), 2)
        assert rep.eviction_log == [(2, "A")]

    def test_invalid_k(self):
        with pytest.raises(ConfigError):
            policy_from_name("lruk", {"k": 0})


class TestProperties:
    @pytest.mark.parametrize("name", ALL_NAMES)
    def test_admitted_minus_evicted_is_contents(self, name, rng):
        tr = random_trace(rng, 400, 25, max_size=7)
        factory = policy_from_name(name, {"threshold_bytes": 5})
        cache = factory.build(30)
        live = Counter()
        for req in tr:
            res = cache.access(req)
            if res.admitted:
                live[req.key] += 1
            for k in res.evicted:
                live[k] -= 1
        expected = Counter(k for k, _ in cache.contents())
        assert +live == expected
        assert cache.occupancy() == sum(s for _, s in cache.contents())
        assert cache.occupancy() <= 30

    def test_fifo_equals_lru_without_repeats(self, rng):
        tr = [Request(i, f"u{i}", int(rng.integers(1, 5))) for i in range(200)]
        a = simulate("fifo", tr, 20)
        b = simulate("lru", tr, 20)
        assert a.counters == b.counters
        assert a.eviction_log == b.eviction_log

    @pytest.mark.parametrize("name", ALL_NAMES)
    def test_cold_misses_only_when_everything_fits(self, name, rng):
        tr = random_trace(rng, 300, 15, max_size=9)
        unique_bytes = sum({r.key: r.size for r in tr}.values())
        rep = simulate(policy_from_name(name), tr, unique_bytes)
        assert rep.counters.misses == 15
        assert not rep.eviction_log


class TestSimulate:
    def test_kernel_matches_object_policies(self, rng):
        for factory in (make_lru(), make_fifo(), make_thlru(4)):
            for trial in range(5):
                tr = random_trace(rng, 400, 30, max_size=6)
                cap = int(rng.integers(8, 80))
                warm = int(rng.integers(0, 100))
                fast = simulate(factory, tr, cap, warm, use_kernel=True)
                slow = simulate(factory, tr, cap, warm, use_kernel=False)
                assert fast.counters == slow.counters
                assert fast.eviction_log == slow.eviction_log

    def test_bypass_disabled_rejects_oversized(self):
        tr = [Request(0, "big", 100)]
        with pytest.raises(ConfigError):
            simulate("lru", tr, 50, bypass_oversized=False)
        rep = simulate("lru", tr, 50)  # bypass on: a miss, nothing admitted
        assert rep.counters.misses == 1

    def test_warmup_excluded_from_counters(self):
        tr = req_seq("AAABBB")
        rep = simulate("lru", tr, 10, warmup=3)
        assert rep.counters.requests == 3
        assert rep.counters.hits == 2  # B B after the warmup miss

    def test_oversized_objects_bypass(self):
        tr = [Request(0, "big", 100), Request(1, "a", 1), Request(2, "big", 100)]
        rep = simulate("lru", tr, 10)
        assert rep.counters.misses == 3  # big never admitted

    def test_unknown_policy(self):
        with pytest.raises(ConfigError):
            policy_from_name("clairvoyant")

    def test_thlru_requires_threshold(self):
        with pytest.raises(ConfigError):
            policy_from_name("thlru")
