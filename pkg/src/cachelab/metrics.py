"""Miss-ratio accounting and offline profiling of eviction behavior.

Object miss ratio (OMR) is the fraction of requests not served from cache;
byte miss ratio (BMR) is the fraction of requested bytes not served from
cache.  Both are tallied from integer Counters so reports are exact.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from ._encode import encode_trace
from .trace import Request


class UndefinedRatioError(ArithmeticError):
    """Requested a miss ratio with a zero denominator."""


class EmptyEcdfError(ValueError):
    """Profiling run produced no replacement events."""


@dataclass
class Counters:
    """Hit/miss tallies behind OMR and BMR."""

    requests: int = 0
    hits: int = 0
    bytes_requested: int = 0
    bytes_hit: int = 0

    def record(self, size: int, hit: bool) -> None:
        self.requests += 1
        self.bytes_requested += size
        if hit:
            self.hits += 1
            self.bytes_hit += size

    @property
    def misses(self) -> int:
        return self.requests - self.hits

    @property
    def bytes_missed(self) -> int:
        return self.bytes_requested - self.bytes_hit

    def merged(self, other: "Counters") -> "Counters":
        return Counters(
            self.requests + other.requests,
            self.hits + other.hits,
            self.bytes_requested + other.bytes_requested,
            self.bytes_hit + other.bytes_hit,
        )


def omr(c: Counters) -> float:
    if c.requests <= 0:
        raise UndefinedRatioError("no requests recorded")
    return (c.requests - c.hits) / c.requests


def bmr(c: Counters) -> float:
    if c.bytes_requested <= 0:
        raise UndefinedRatioError("no bytes recorded")
    return (c.bytes_requested - c.bytes_hit) / c.bytes_requested


@dataclass
class ReuseHistogram:
    """Counts of evicted objects per normalized forward-reuse-distance decile.

    Distances are normalized by the trace's largest finite reuse distance and
    bucketed into [0,0.1) .. [0.9,1]; evictions of objects never requested
    again are tallied separately in never_reused.
    """

    bucket_counts: list = field(default_factory=lambda: [0] * 10)
    never_reused: int = 0

    @property
    def total_finite(self) -> int:
        return sum(self.bucket_counts)


def reuse_distance_histogram(trace: Sequence[Request], eviction_log) -> ReuseHistogram:
    """Buckets each evicted object's forward reuse distance at eviction time.

    eviction_log holds (request_index, key) pairs: the object `key` was
    evicted while request_index was being served.  The distance is measured
    from the eviction point to the key's next request.
    """
    positions: dict = {}
    for i, req in enumerate(trace):
        positions.setdefault(req.key, []).append(i)

    max_gap = 0
    for pos_list in positions.values():
        for a, b in zip(pos_list, pos_list[1:]):
            max_gap = max(max_gap, b - a)

    hist = ReuseHistogram()
    for idx, key in eviction_log:
        pos_list = positions.get(key)
        if pos_list is None:
            continue
        j = bisect.bisect_right(pos_list, idx)
        if j >= len(pos_list):
            hist.never_reused += 1
            continue
        distance = pos_list[j] - idx
        x = distance / max_gap
        bucket = min(int(x * 10), 9)
        hist.bucket_counts[bucket] += 1
    return hist


@dataclass
class Ecdf:
    """Empirical CDF over normalized queue positions in [0, 1]."""

    samples: np.ndarray  # sorted ascending

    def __post_init__(self):
        self.samples = np.sort(np.asarray(self.samples, dtype=np.float64))
        if len(self.samples) == 0:
            raise EmptyEcdfError("no samples")

    def __len__(self) -> int:
        return len(self.samples)

    def value_at(self, x: float) -> float:
        """F(x) = fraction of samples <= x."""
        return float(np.searchsorted(self.samples, x, side="right")) / len(self.samples)

    def quantile(self, q: float) -> float:
        """Smallest sample s with F(s) >= q; quantile(1) is the max sample."""
        if not (0 <= q <= 1):
            raise ValueError("q must be in [0, 1]")
        idx = max(0, math.ceil(q * len(self.samples)) - 1)
        return float(self.samples[idx])

    def to_csv(self, sink) -> None:
        """Two-column CSV of the step points: x, F(x)."""
        xs = np.unique(self.samples)
        own = isinstance(sink, str)
        out = open(sink, "w") if own else sink
        try:
            out.write("x,F\n")
            for x in xs:
                out.write(f"{x:.10g},{self.value_at(float(x)):.10g}\n")
        finally:
            if own:
                out.close()


def eviction_position_ecdf(trace: Sequence[Request], capacity: int,
                           warmup: int = 0) -> Ecdf:
    """Profiles where the farthest-next-use victim sits in an LRU queue.

    Replays the trace under plain LRU; before every eviction the cached
    object an offline-optimal policy would pick (farthest next use; nearest
    the tail among never-reused ties) is located and its distance from the
    queue tail, normalized by the current queue length, is recorded.
    """
    enc = encode_trace(trace)
    samples = _kernels.ecdf_replay(enc.keys, enc.key_sizes, enc.next_use(),
                                   capacity, warmup)
    if len(samples) == 0:
        raise EmptyEcdfError("no replacements occurred at this capacity")
    return Ecdf(samples)


def rear_fraction(ecdf: Ecdf, q: float = 0.99999) -> float:
    """Queue fraction that contains the eviction candidates up to quantile q.

    Multiplied by the queue object count this gives the rear-section width
    the learning agent decides over.
    """
    return ecdf.quantile(q)


def windowed_bmr_series(trace: Sequence[Request], policy, capacity: int,
                        window: int) -> list:
    """BMR over disjoint consecutive windows of `window` requests.

    `policy` is anything accepted by policies.simulate; the final partial
    window is included.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    from .policies import resolve_policy

    built = resolve_policy(policy).build(capacity)
    series = []
    win = Counters()
    for req in trace:
        res = built.access(req)
        win.record(req.size, res.hit)
        if win.requests == window:
            series.append(bmr(win))
            win = Counters()
    if win.requests:
        series.append(bmr(win))
    return series


def report_rows_to_csv(rows, sink, deterministic: bool = True,
                       header_note: str = "") -> None:
    """Writes `policy,capacity,omr,bmr,requests,bytes` rows.

    Each row is (policy, capacity, omr, bmr, requests, bytes_requested).
    """
    own = isinstance(sink, str)
    out = open(sink, "w") if own else sink
    try:
        if header_note and not deterministic:
            out.write(f"# {header_note}\n")
        out.write("policy,capacity,omr,bmr,requests,bytes\n")
        for policy, capacity, o, b, req, byt in rows:
            out.write(f"{policy},{capacity},{o:.6f},{b:.6f},{req},{byt}\n")
    finally:
        if own:
            out.close()


def report_to_json(report) -> str:
    c = report.counters
    payload = {
        "policy": report.policy,
        "capacity": report.capacity,
        "requests": c.requests,
        "hits": c.hits,
        "bytes_requested": c.bytes_requested,
        "bytes_hit": c.bytes_hit,
        "omr": omr(c) if c.requests else None,
        "bmr": bmr(c) if c.bytes_requested else None,
        "evictions": len(report.eviction_log),
        "wall_time_s": report.wall_time_s,
    }
    return json.dumps(payload, sort_keys=True)
