import io

import numpy as np
import pytest

from cachelab.metrics import (
    Counters,
    Ecdf,
    EmptyEcdfError,
    UndefinedRatioError,
    bmr,
    eviction_position_ecdf,
    omr,
    rear_fraction,
    report_rows_to_csv,
    reuse_distance_histogram,
    windowed_bmr_series,
)
from cachelab.policies import simulate
from cachelab.trace import Request

from conftest import random_trace, req_seq


class TestRatios:
    def test_bmr_production_figure(self):
        # 214.846 download units vs 73.166 missed units, scaled to integers
        c = Counters(requests=1, hits=0, bytes_requested=214_846,
                     bytes_hit=214_846 - 73_166)
        assert abs(bmr(c) - 0.3406) <= 5e-5

    def test_all_hits(self):
        c = Counters(requests=10, hits=10, bytes_requested=100, bytes_hit=100)
        assert omr(c) == 0.0
        assert bmr(c) == 0.0

    def test_zero_denominator(self):
        with pytest.raises(UndefinedRatioError):
            omr(Counters())
        with pytest.raises(UndefinedRatioError):
            bmr(Counters())

    def test_bytes_conservation_random_runs(self, rng):
        for _ in range(20):
            tr = random_trace(rng, 300, 25, max_size=10)
            cap = int(rng.integers(5, 60))
            rep = simulate("lru", tr, cap)
            c = rep.counters
            assert c.bytes_hit + c.bytes_missed == c.bytes_requested
            assert 0 <= omr(c) <= 1
            assert 0 <= bmr(c) <= 1
            assert omr(c) == pytest.approx(1 - c.hits / c.requests, abs=1e-12)


class TestReuseHistogram:
    def test_hand_tally_six_requests(self):
        # LRU, capacity 2, unit sizes: evictions (2,A) (3,B) (4,C) (5,A).
        # Max finite gap is 3, so the three reused evictions land in the
        # [0.3, 0.4) bucket and the final A is never seen again.
        tr = req_seq("ABCABC")
        rep = simulate("lru", tr, 2)
        assert rep.eviction_log == [(2, "A"), (3, "B"), (4, "C"), (5, "A")]
        hist = reuse_distance_histogram(tr, rep.eviction_log)
        assert hist.bucket_counts[3] == 3
        assert sum(hist.bucket_counts) == 3
        assert hist.never_reused == 1

    def test_never_reused_all_overflow(self):
        tr = req_seq("ABCDE")
        rep = simulate("lru", tr, 2)
        hist = reuse_distance_histogram(tr, rep.eviction_log)
        assert hist.bucket_counts == [0] * 10
        assert hist.never_reused == len(rep.eviction_log) == 3

    def test_max_distance_closed_bucket(self):
        # Synthesized log: B evicted while it was being requested (an
        # offline policy may bypass-evict the incoming object), so its
        # forward distance equals the trace's maximum gap exactly.
        tr = req_seq("ABACB")
        hist = reuse_distance_histogram(tr, [(1, "B")])
        assert hist.bucket_counts[9] == 1
        assert sum(hist.bucket_counts) == 1

    def test_relabeling_invariance(self, rng):
        tr = random_trace(rng, 200, 12, max_size=4)
        rep = simulate("lru", tr, 20)
        hist1 = reuse_distance_histogram(tr, rep.eviction_log)
        mapping = {f"k{i}": f"obj-{i * 7}" for i in range(12)}
        tr2 = [Request(r.timestamp, mapping[r.key], r.size) for r in tr]
        log2 = [(i, mapping[k]) for i, k in rep.eviction_log]
        hist2 = reuse_distance_histogram(tr2, log2)
        assert hist1.bucket_counts == hist2.bucket_counts
        assert hist1.never_reused == hist2.never_reused


class TestEcdf:
    def test_quantile_order_statistics(self):
        rng = np.random.default_rng(0)
        e = Ecdf(rng.random(10_000))
        assert abs(e.quantile(0.5) - 0.5) <= 0.02
        assert e.quantile(1.0) == float(np.max(e.samples))

    def test_quantile_monotone(self, rng):
        e = Ecdf(rng.random(500))
        qs = [e.quantile(q) for q in np.linspace(0, 1, 50)]
        assert qs == sorted(qs)

    def test_all_distinct_keys_victims_at_tail(self):
        # With no reuse anywhere, every cached object is a never-reused
        # candidate and the rear-most one is the LRU tail itself.
        tr = [Request(i, f"u{i}", 1) for i in range(50)]
        e = eviction_position_ecdf(tr, 5)
        assert np.all(e.samples == 0.0)
        assert rear_fraction(e) == 0.0

    def test_empty_ecdf_error(self):
        tr = req_seq("ABAB")
        with pytest.raises(EmptyEcdfError):
            eviction_position_ecdf(tr, 100)

    def test_sample_count_matches_evictions(self, rng):
        tr = random_trace(rng, 400, 30, max_size=6)
        cap = 40
        e = eviction_position_ecdf(tr, cap)
        rep = simulate("lru", tr, cap)
        assert len(e) == len(rep.eviction_log)

    def test_csv_dump(self):
        e = Ecdf(np.array([0.0, 0.5, 0.5, 1.0]))
        buf = io.StringIO()
        e.to_csv(buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "x,F"
        assert lines[1] == "0,0.25"
        assert lines[2] == "0.5,0.75"
        assert lines[3] == "1,1"


class TestWindowedBmr:
    def test_single_window_equals_overall(self, rng):
        tr = random_trace(rng, 200, 20, max_size=8)
        series = windowed_bmr_series(tr, "lru", 30, window=len(tr))
        rep = simulate("lru", tr, 30)
        assert series == [bmr(rep.counters)]

    def test_all_hit_window_is_zero(self):
        tr = req_seq("A" * 10, sizes={"A": 10})
        series = windowed_bmr_series(tr, "lru", 10, window=5)
        assert series == [0.2, 0.0]

    def test_hand_tally_two_windows(self):
        # capacity 1 byte, unit sizes: A B A B A | B A A A A
        # window 1: misses at A,B,A,B,A -> bmr 1.0
        # window 2: B,A miss then A,A,A hit -> bmr 2/5
        tr = req_seq("ABABABAAAA")
        series = windowed_bmr_series(tr, "lru", 1, window=5)
        assert series == [1.0, 0.4]

    def test_partial_last_window(self, rng):
        tr = random_trace(rng, 103, 10)
        series = windowed_bmr_series(tr, "lru", 5, window=10)
        assert len(series) == 11


def test_report_csv_format():
    buf = io.StringIO()
    report_rows_to_csv([("lru", 1024, 0.25, 0.5, 100, 2000)], buf)
    assert buf.getvalue() == (
        "policy,capacity,omr,bmr,requests,bytes\n"
        "lru,1024,0.250000,0.500000,100,2000\n"
    )
