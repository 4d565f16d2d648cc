import numpy as np
import pytest

from cachelab._encode import encode_trace
from cachelab.metrics import bmr, omr
from cachelab.offline import (
    InstanceTooLarge,
    belady,
    belady_size,
    brute_force_optimal,
    flat_region_experiment,
    pfoo_l,
    relaxed_topn,
    search_separating_instance,
)
from cachelab.policies import policy_from_name, simulate
from cachelab.trace import Request, SyntheticConfig, generate_synthetic

from conftest import random_trace, req_seq


def unit_random_trace(rng, n, n_keys):
    keys = rng.integers(0, n_keys, n)
    return [Request(i, f"k{keys[i]}", 1) for i in range(n)]


class TestNextUse:
    def test_invariant_after_position(self, rng):
        tr = random_trace(rng, 300, 20)
        enc = encode_trace(tr)
        nu = enc.next_use()
        n = enc.n
        for i in range(n):
            assert nu[i] > i
            if nu[i] <= n:
                assert enc.keys[nu[i]] == enc.keys[i]

    def test_sentinel_for_last_occurrence(self):
        enc = encode_trace(req_seq("ABA"))
        assert list(enc.next_use()) == [2, 4, 4]


class TestBelady:
    def test_everything_fits_cold_misses_only(self, rng):
        tr = random_trace(rng, 200, 12, max_size=6)
        unique = sum({r.key: r.size for r in tr}.values())
        rep = belady(tr, unique)
        assert rep.counters.misses == 12

    def test_small_instance_matches_brute_force(self):
        tr = req_seq("ABACAB")
        rep = belady(tr, 2)
        assert rep.counters.misses == brute_force_optimal(tr, 2)

    def test_never_beaten_by_lru_on_object_misses(self, rng):
        for _ in range(50):
            n, nk = int(rng.integers(50, 300)), int(rng.integers(5, 25))
            tr = random_trace(rng, n, nk, max_size=8)
            cap = int(rng.integers(8, 100))
            b = belady(tr, cap)
            l = simulate("lru", tr, cap)
            assert omr(b.counters) <= omr(l.counters) + 1e-12


class TestBeladySize:
    def test_uniform_sizes_identical_to_belady(self, rng):
        for _ in range(10):
            tr = unit_random_trace(rng, 200, 15)
            cap = int(rng.integers(2, 14))
            a = belady(tr, cap)
            b = belady_size(tr, cap)
            assert a.eviction_log == b.eviction_log
            assert a.counters == b.counters

    def test_large_object_evicted_earlier(self):
        # one 4-byte object among 1-byte objects, capacity 5: the size-
        # weighted variant drops the big object at the first replacement
        # while plain farthest-next-use holds it until the end
        sizes = {"A": 4, "B": 1, "C": 1}
        tr = [Request(i, k, sizes[k]) for i, k in enumerate("ABCCAB")]
        plain = belady(tr, 5)
        weighted = belady_size(tr, 5)
        first_a_plain = min(i for i, k in plain.eviction_log if k == "A")
        first_a_weighted = min(i for i, k in weighted.eviction_log if k == "A")
        assert first_a_weighted < first_a_plain

    def test_everything_fits_cold_misses_only(self, rng):
        tr = random_trace(rng, 150, 10, max_size=5)
        unique = sum({r.key: r.size for r in tr}.values())
        assert belady_size(tr, unique).counters.misses == 10


class TestRelaxedTopn:
    def test_n1_identical_to_belady(self, rng):
        for seed in (0, 1, 99):
            tr = random_trace(rng, 300, 20, max_size=6)
            cap = 30
            a = belady(tr, cap)
            b = relaxed_topn(tr, cap, 1, seed=seed)
            assert a.eviction_log == b.eviction_log
            assert a.counters == b.counters

    def test_seed_determinism(self, rng):
        tr = random_trace(rng, 300, 20, max_size=6)
        a = relaxed_topn(tr, 30, 8, seed=5)
        b = relaxed_topn(tr, 30, 8, seed=5)
        assert a.eviction_log == b.eviction_log
        assert a.counters == b.counters

    def test_wide_n_is_random_over_all_cached(self, rng):
        tr = random_trace(rng, 400, 30, max_size=4)
        a = relaxed_topn(tr, 40, 10**6, seed=1)
        b = relaxed_topn(tr, 40, 10**6, seed=2)
        assert a.eviction_log != b.eviction_log  # seeds actually matter


class TestFlatRegion:
    def test_n1_degenerate_envelope(self, rng):
        tr = random_trace(rng, 300, 25, max_size=4)
        stats = flat_region_experiment(tr, 25, [1], repeats=20, seed=0)
        b_omr = omr(belady(tr, 25).counters)
        assert stats[0].mean_omr == stats[0].min_omr == stats[0].max_omr == b_omr

    def test_wider_relaxation_does_not_help(self, rng):
        cfg = SyntheticConfig(300, 0.8, ("two_class", 2, 8, 0.3), 4000, 1, seed=5)
        tr = generate_synthetic(cfg)
        unique = sum({r.key: r.size for r in tr}.values())
        stats = flat_region_experiment(tr, max(4, unique // 20), [1, 4, 64],
                                       repeats=15, seed=3)
        assert stats[2].mean_omr >= stats[0].mean_omr - 1e-9
        assert stats[0].min_omr <= stats[1].mean_omr + 0.05


class TestPfooL:
    def test_everything_fits_cold_only(self, rng):
        tr = random_trace(rng, 200, 12, max_size=6)
        unique = sum({r.key: r.size for r in tr}.values())
        bound = pfoo_l(tr, unique)
        total_bytes = sum(r.size for r in tr)
        assert bound.omr_bound == pytest.approx(12 / 200)
        assert bound.bmr_bound == pytest.approx(unique / total_bytes)

    def test_single_key_bound(self):
        tr = req_seq("AAAAA", sizes={"A": 3})
        bound = pfoo_l(tr, 3)
        assert bound.omr_bound == pytest.approx(1 / 5)
        bound = pfoo_l(tr, 1000)
        assert bound.omr_bound == pytest.approx(1 / 5)

    def test_dominates_policies_and_belady(self, rng):
        names = ["lru", "fifo", "s4lru", "lfuda", "lruk", "gdsf"]
        for _ in range(10):
            tr = random_trace(rng, 300, 20, max_size=8)
            cap = int(rng.integers(10, 60))
            bound = pfoo_l(tr, cap)
            for name in names:
                rep = simulate(name, tr, cap)
                assert bound.bmr_bound <= bmr(rep.counters) + 1e-12
                assert bound.omr_bound <= omr(rep.counters) + 1e-12
            b = belady(tr, cap)
            assert bound.bmr_bound <= bmr(b.counters) + 1e-12
            assert bound.omr_bound <= omr(b.counters) + 1e-12


class TestBruteForce:
    def test_single_request(self):
        assert brute_force_optimal([Request(0, "A", 1)], 1) == 1

    def test_refusal_bounds(self):
        too_long = req_seq("AB" * 8)
        with pytest.raises(InstanceTooLarge):
            brute_force_optimal(too_long, 2)
        too_many = req_seq("ABCDEFG")
        with pytest.raises(InstanceTooLarge):
            brute_force_optimal(too_many, 2)

    def test_belady_object_optimal_unit_sizes(self, rng):
        for _ in range(30):
            n = int(rng.integers(4, 13))
            nk = int(rng.integers(2, 6))
            tr = unit_random_trace(rng, n, nk)
            cap = int(rng.integers(1, nk + 1))
            assert belady(tr, cap).counters.misses == \
                brute_force_optimal(tr, cap, "object_misses")

    def test_byte_objective_not_above_object_weighted(self, rng):
        tr = req_seq("ABCABC", sizes={"A": 2, "B": 1, "C": 1})
        by_obj = brute_force_optimal(tr, 3, "object_misses")
        by_bytes = brute_force_optimal(tr, 3, "byte_misses")
        assert by_bytes >= by_obj  # bytes weight every miss at >= 1

    def test_unknown_objective(self):
        with pytest.raises(Exception):
            brute_force_optimal(req_seq("A"), 1, "latency")


def test_separating_instance_certificates():
    found = search_separating_instance(seed=7, max_instances=2000)
    assert found is not None
    tr, cap, cert = found
    rep = belady(tr, cap)
    assert rep.counters.misses == cert["belady_object_misses"]
    assert rep.counters.bytes_missed == cert["belady_byte_misses"]
    assert cert["optimal_object_misses"] == cert["belady_object_misses"]
    assert cert["optimal_byte_misses"] < cert["belady_byte_misses"]
    # re-certify with the oracle
    assert brute_force_optimal(tr, cap, "byte_misses") == cert["optimal_byte_misses"]
