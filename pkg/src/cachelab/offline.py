"""Offline analyzers that need future knowledge: farthest-next-use eviction
(Belady), its size-weighted variant, relaxed top-N eviction, the flat-region
experiment, an interval-relaxation lower bound, and a brute-force optimal
oracle for tiny instances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from ._encode import EncodedTrace, encode_trace
from .metrics import Counters
from .policies import SimulationReport
from .trace import ConfigError, Request

_MIX1 = 0x9E3779B97F4A7C15
_MIX2 = 0xBF58476D1CE4E5B9
_U64 = (1 << 64) - 1


class InstanceTooLarge(ValueError):
    """Brute-force search refused: instance exceeds the feasible bounds."""


def _derived_seed(seed: int, *parts: int) -> int:
    s = seed & _U64
    for p in parts:
        s = (s ^ ((p + 1) * _MIX1)) & _U64
        s = (s * _MIX2) & _U64
    return s


def _report(name: str, capacity: int, raw, enc: EncodedTrace) -> SimulationReport:
    requests, hits, bytes_req, bytes_hit, evict_at, evict_key = raw
    names = enc.key_names
    log = [(int(i), names[int(k)]) for i, k in zip(evict_at, evict_key)]
    return SimulationReport(
        policy=name,
        capacity=capacity,
        counters=Counters(requests, hits, bytes_req, bytes_hit),
        eviction_log=log,
    )


def belady(trace: Sequence[Request], capacity: int, warmup: int = 0) -> SimulationReport:
    """Evicts the cached object whose next use is farthest in the future.

    Objects never requested again rank above every finite next use; among
    them the larger object goes first, then the older admission.  The object
    just admitted by the current miss is itself a candidate, so never-reused
    one-shot objects are effectively bypassed.
    """
    enc = encode_trace(trace)
    raw = _kernels.topn_replay(enc.keys, enc.key_sizes, enc.next_use(),
                               capacity, warmup, 1, 0)
    return _report("belady", capacity, raw, enc)


def relaxed_topn(trace: Sequence[Request], capacity: int, n: int, seed: int = 0,
                 warmup: int = 0) -> SimulationReport:
    """Evicts uniformly among the n cached objects with farthest next use.

    n=1 reproduces belady() exactly (no random draw is consumed); when fewer
    than n objects are cached the pick is among all of them.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    enc = encode_trace(trace)
    raw = _kernels.topn_replay(enc.keys, enc.key_sizes, enc.next_use(),
                               capacity, warmup, n, seed)
    return _report(f"topn{n}", capacity, raw, enc)


def belady_size(trace: Sequence[Request], capacity: int, warmup: int = 0) -> SimulationReport:
    """Evicts the cached object maximizing reuse distance times size.

    A never-reused object's distance counts as (trace length - position + 1),
    and ties break like belady(): larger size first, then older admission.
    """
    enc = encode_trace(trace)
    n = enc.n
    next_use = enc.next_use()
    key_sizes = enc.key_sizes
    names = enc.key_names

    cur_next: dict = {}
    admit_seq: dict = {}
    seq = 0
    occupancy = 0
    counters = Counters()
    log = []

    for i in range(n):
        k = int(enc.keys[i])
        s = int(key_sizes[k])
        counted = i >= warmup
        hit = k in cur_next
        if counted:
            counters.record(s, hit)
        if hit:
            cur_next[k] = int(next_use[i])
            continue
        if s > capacity:
            continue
        cur_next[k] = int(next_use[i])
        admit_seq[k] = seq
        seq += 1
        occupancy += s
        while occupancy > capacity:
            victim = max(
                cur_next,
                key=lambda c: ((cur_next[c] - i) * int(key_sizes[c]),
                               int(key_sizes[c]), -admit_seq[c]),
            )
            occupancy -= int(key_sizes[victim])
            del cur_next[victim], admit_seq[victim]
            if counted:
                log.append((i, names[victim]))
    return SimulationReport("belady-size", capacity, counters, log)


@dataclass(frozen=True)
class FlatRegionStat:
    n: int
    mean_omr: float
    min_omr: float
    max_omr: float


def flat_region_experiment(trace: Sequence[Request], capacity: int,
                           n_values: Sequence[int], repeats: int = 500,
                           seed: int = 0, warmup: int = 0) -> list:
    """Envelope statistics of relaxed top-N OMR over repeated random runs.

    Each (N, repeat) cell gets a derived seed; N=1 is deterministic so a
    single run supplies its (degenerate) envelope.
    """
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    enc = encode_trace(trace)
    nu = enc.next_use()
    stats = []
    for n in n_values:
        if n < 1:
            raise ConfigError("n values must be >= 1")
        omrs = []
        runs = 1 if n == 1 else repeats
        for r in range(runs):
            raw = _kernels.topn_replay(enc.keys, enc.key_sizes, nu, capacity,
                                       warmup, n, _derived_seed(seed, n, r))
            requests, hits = raw[0], raw[1]
            omrs.append((requests - hits) / requests)
        stats.append(FlatRegionStat(n, float(np.mean(omrs)),
                                    float(np.min(omrs)), float(np.max(omrs))))
    return stats


def flat_region_to_csv(stats: Sequence[FlatRegionStat], sink) -> None:
    own = isinstance(sink, str)
    out = open(sink, "w") if own else sink
    try:
        out.write("N,mean_omr,min_omr,max_omr\n")
        for st in stats:
            out.write(f"{st.n},{st.mean_omr:.6f},{st.min_omr:.6f},{st.max_omr:.6f}\n")
    finally:
        if own:
            out.close()


@dataclass(frozen=True)
class PfooBound:
    """Interval-relaxation lower bound on achievable miss ratios."""

    omr_bound: float
    bmr_bound: float
    budget: int
    intervals: int
    marked: int


def pfoo_l(trace: Sequence[Request], capacity: int) -> PfooBound:
    """Lower-bounds OMR/BMR by relaxing caching to an interval-packing.

    Every pair of consecutive requests to a key is an interval with footprint
    size x (requests strictly between + 1); intervals are marked as hits in
    ascending footprint order while the cumulative footprint fits within
    capacity x trace-length.  Misses are the cold misses plus the unmarked
    intervals.
    """
    enc = encode_trace(trace)
    n = enc.n
    if n == 0:
        raise ConfigError("trace must be non-empty")
    nu = enc.next_use()
    sizes = enc.key_sizes[enc.keys]
    finite = nu <= n
    footprints = (nu[finite] - np.nonzero(finite)[0]) * sizes[finite]
    int_sizes = sizes[finite]

    order = np.lexsort((np.nonzero(finite)[0], int_sizes, footprints))
    budget = capacity * n
    csum = np.cumsum(footprints[order])
    marked = int(np.searchsorted(csum, budget, side="right"))

    intervals = int(finite.sum())
    cold = len(enc.key_names)
    cold_bytes = enc.unique_bytes
    unmarked_bytes = int(int_sizes[order][marked:].sum())

    omr_bound = (cold + intervals - marked) / n
    bmr_bound = (cold_bytes + unmarked_bytes) / enc.total_bytes
    return PfooBound(omr_bound, bmr_bound, int(budget), intervals, marked)


MAX_BRUTE_REQUESTS = 14
MAX_BRUTE_KEYS = 6


def brute_force_optimal(trace: Sequence[Request], capacity: int,
                        objective: str = "object_misses") -> int:
    """Global minimum miss count over every admission/eviction choice.

    Exhaustive with memoization on (position, cached set); refuses instances
    beyond 14 requests or 6 distinct keys.  Not admitting and evicting the
    just-admitted object are both in the search space, so the result is a
    true optimum, bypass included.
    """
    if objective not in ("object_misses", "byte_misses"):
        raise ConfigError(f"unknown objective {objective!r}")
    enc = encode_trace(trace)
    n = enc.n
    if n > MAX_BRUTE_REQUESTS or len(enc.key_names) > MAX_BRUTE_KEYS:
        raise InstanceTooLarge(
            f"{n} requests / {len(enc.key_names)} keys exceeds the "
            f"{MAX_BRUTE_REQUESTS}-request / {MAX_BRUTE_KEYS}-key search bounds")
    keys = [int(k) for k in enc.keys]
    sizes = [int(s) for s in enc.key_sizes]
    by_object = objective == "object_misses"
    memo: dict = {}

    def best(i: int, cached: frozenset) -> int:
        if i == n:
            return 0
        state = (i, cached)
        hit = memo.get(state)
        if hit is not None:
            return hit
        k = keys[i]
        if k in cached:
            result = best(i + 1, cached)
        else:
            cost = 1 if by_object else sizes[k]
            result = cost + best(i + 1, cached)  # bypass
            if sizes[k] <= capacity:
                members = list(cached)
                free = capacity - sum(sizes[c] for c in members) - sizes[k]
                for mask in range(1 << len(members)):
                    freed = sum(sizes[members[b]] for b in range(len(members))
                                if mask & (1 << b))
                    if free + freed < 0:
                        continue
                    keep = frozenset(
                        [c for b, c in enumerate(members) if not mask & (1 << b)]
                        + [k])
                    result = min(result, cost + best(i + 1, keep))
        memo[state] = result
        return result

    return best(0, frozenset())


def search_separating_instance(seed: int = 0, max_instances: int = 10_000):
    """Random search for a tiny instance where farthest-next-use eviction is
    object-optimal yet strictly beats no minimum on bytes.

    Returns (trace, capacity, certificates) or None when the budget is
    exhausted.  Certificates carry the brute-force minima for both
    objectives alongside belady's realized counts.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_instances):
        n_keys = int(rng.integers(3, 6))
        n_req = int(rng.integers(6, 13))
        key_ids = rng.integers(0, n_keys, n_req)
        sizes = rng.integers(1, 5, n_keys)
        if len(np.unique(sizes)) < 2:
            continue
        total = int(sizes.sum())
        lo = int(sizes.max())
        if lo + 1 > total - 1:
            continue
        capacity = int(rng.integers(lo + 1, total))
        trace = [Request(i, f"k{key_ids[i]}", int(sizes[key_ids[i]]))
                 for i in range(n_req)]

        rep = belady(trace, capacity)
        belady_obj = rep.counters.misses
        belady_bytes = rep.counters.bytes_missed
        obj_min = brute_force_optimal(trace, capacity, "object_misses")
        if belady_obj != obj_min:
            continue
        byte_min = brute_force_optimal(trace, capacity, "byte_misses")
        if byte_min < belady_bytes:
            certificates = {
                "capacity": capacity,
                "belady_object_misses": belady_obj,
                "belady_byte_misses": belady_bytes,
                "optimal_object_misses": obj_min,
                "optimal_byte_misses": byte_min,
            }
            return trace, capacity, certificates
    return None
