"""Online cache replacement policies behind one interface, plus the replay
loop that drives any policy over a trace.

All policies share the hit-path/miss-path split: a hit updates bookkeeping,
a miss admits the object (subject to the policy's admission rule) and then
evicts until the cache fits.  Objects larger than the capacity are bypassed:
counted as misses, never admitted.
"""

from __future__ import annotations

import heapq
import resource
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from . import _kernels
from ._encode import encode_trace
from .metrics import Counters
from .trace import ConfigError, Request


@dataclass(frozen=True)
class AccessResult:
    hit: bool
    admitted: bool = False
    evicted: tuple = ()


@dataclass
class SimulationReport:
    """Post-warmup counters and eviction log for one (policy, capacity) run."""

    policy: str
    capacity: int
    counters: Counters
    eviction_log: list = field(default_factory=list)
    wall_time_s: float = 0.0
    peak_rss_kb: Optional[int] = None


class Policy:
    """Behavioral interface: access/occupancy/contents."""

    name = "policy"

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("capacity must be >= 1 byte")
        self.capacity = capacity

    def access(self, request: Request) -> AccessResult:
        raise NotImplementedError

    def occupancy(self) -> int:
        raise NotImplementedError

    def contents(self) -> list:
        """(key, size) pairs, least-eviction-protected first where meaningful."""
        raise NotImplementedError


class LruCache(Policy):
    """Promote on hit, evict the queue tail.  Doubles as FIFO (promote off)
    and as the threshold-admission variant (admit_threshold)."""

    name = "lru"
    promote_on_hit = True

    def __init__(self, capacity: int, admit_threshold: Optional[int] = None):
        super().__init__(capacity)
        if admit_threshold is not None and admit_threshold < 1:
            raise ConfigError("admission threshold must be >= 1 byte")
        self.admit_threshold = admit_threshold
        self._queue: OrderedDict = OrderedDict()  # tail first, head (MRU) last
        self._occupancy = 0

    def access(self, request: Request) -> AccessResult:
        key, size = request.key, request.size
        if key in self._queue:
            if self.promote_on_hit:
                self._queue.move_to_end(key)
            return AccessResult(True)
        limit = self.capacity if self.admit_threshold is None \
            else min(self.capacity, self.admit_threshold)
        if size > limit:
            return AccessResult(False)
        self._queue[key] = size
        self._occupancy += size
        evicted = []
        while self._occupancy > self.capacity:
            k, s = self._queue.popitem(last=False)
            self._occupancy -= s
            evicted.append(k)
        return AccessResult(False, True, tuple(evicted))

    def occupancy(self) -> int:
        return self._occupancy

    def contents(self) -> list:
        return list(self._queue.items())

    def tail_view(self, count: int) -> list:
        """Up to `count` keys from the tail (next LRU victims first)."""
        out = []
        for key in self._queue:
            if len(out) >= count:
                break
            out.append(key)
        return out


class FifoCache(LruCache):
    name = "fifo"
    promote_on_hit = False


class S4LruCache(Policy):
    """Segmented LRU: admission at the lowest segment's head, a hit promotes
    to the next-higher segment's head, per-segment overflow cascades down.

    Segment 0 is the spill level: it absorbs downward overflow without a
    quota of its own, and the cache evicts from its tail only when total
    occupancy exceeds capacity (so a cache big enough for everything never
    evicts)."""

    name = "s4lru"

    def __init__(self, capacity: int, segments: int = 4):
        super().__init__(capacity)
        if segments < 1:
            raise ConfigError("segments must be >= 1")
        self.segments = segments
        self._caps = [capacity // segments] * segments
        self._queues = [OrderedDict() for _ in range(segments)]
        self._bytes = [0] * segments
        self._total = 0
        self._level: dict = {}

    def access(self, request: Request) -> AccessResult:
        key, size = request.key, request.size
        level = self._level.get(key)
        if level is not None:
            target = min(level + 1, self.segments - 1)
            del self._queues[level][key]
            self._bytes[level] -= size
            self._queues[target][key] = size
            self._bytes[target] += size
            self._level[key] = target
            self._cascade(target)
            return AccessResult(True)
        if size > self.capacity:
            return AccessResult(False)
        self._queues[0][key] = size
        self._bytes[0] += size
        self._total += size
        self._level[key] = 0
        evicted = []
        while self._total > self.capacity:
            k, s = self._queues[0].popitem(last=False)
            self._bytes[0] -= s
            self._total -= s
            del self._level[k]
            evicted.append(k)
        return AccessResult(False, True, tuple(evicted))

    def _cascade(self, start: int) -> None:
        # per-segment quotas push tails down; segment 0 has no quota of its
        # own, so promotions never evict (total bytes are unchanged)
        for lvl in range(start, 0, -1):
            while self._bytes[lvl] > self._caps[lvl]:
                k, s = self._queues[lvl].popitem(last=False)
                self._bytes[lvl] -= s
                self._queues[lvl - 1][k] = s
                self._bytes[lvl - 1] += s
                self._level[k] = lvl - 1

    def occupancy(self) -> int:
        return self._total

    def contents(self) -> list:
        out = []
        for q in self._queues:
            out.extend(q.items())
        return out


class _RankedPolicy(Policy):
    """Shared machinery for priority-evicting policies with lazy heaps.

    Subclasses supply _priority(key) on access; eviction pops the minimum
    (priority, last-access order) pair, so ties go to the least recently
    used object.
    """

    def __init__(self, capacity: int):
        super().__init__(capacity)
        self._sizes: dict = {}
        self._freq: dict = {}
        self._pri: dict = {}
        self._last: dict = {}
        self._heap: list = []
        self._clock_seq = 0
        self._occupancy = 0

    def _touch(self, key) -> None:
        self._clock_seq += 1
        self._last[key] = self._clock_seq
        pri = self._priority(key)
        self._pri[key] = pri
        heapq.heappush(self._heap, (pri, self._last[key], key))

    def _priority(self, key) -> float:
        raise NotImplementedError

    def _on_evict(self, key) -> None:
        pass

    def access(self, request: Request) -> AccessResult:
        key, size = request.key, request.size
        if key in self._sizes:
            self._freq[key] += 1
            self._touch(key)
            return AccessResult(True)
        if size > self.capacity:
            return AccessResult(False)
        self._sizes[key] = size
        self._freq[key] = 1
        self._occupancy += size
        self._touch(key)
        evicted = []
        while self._occupancy > self.capacity:
            pri, last, k = heapq.heappop(self._heap)
            if k not in self._sizes or self._pri[k] != pri or self._last[k] != last:
                continue  # stale entry
            self._occupancy -= self._sizes[k]
            del self._sizes[k], self._freq[k], self._pri[k], self._last[k]
            self._on_evict_entry(pri)
            self._on_evict(k)
            evicted.append(k)
        return AccessResult(False, True, tuple(evicted))

    def _on_evict_entry(self, priority: float) -> None:
        pass

    def occupancy(self) -> int:
        return self._occupancy

    def contents(self) -> list:
        return list(self._sizes.items())


class LfudaCache(_RankedPolicy):
    """Frequency with dynamic aging: priority = hit count + aging offset;
    the offset jumps to the victim's priority on every eviction."""

    name = "lfuda"

    def __init__(self, capacity: int):
        super().__init__(capacity)
        self._age = 0.0

    def _priority(self, key) -> float:
        return self._freq[key] + self._age

    def _on_evict_entry(self, priority: float) -> None:
        self._age = priority


class GdsfCache(_RankedPolicy):
    """Greedy-Dual-Size-Frequency: priority = clock + frequency / size."""

    name = "gdsf"

    def __init__(self, capacity: int):
        super().__init__(capacity)
        self._clock = 0.0

    def _priority(self, key) -> float:
        return self._clock + self._freq[key] / self._sizes[key]

    def _on_evict_entry(self, priority: float) -> None:
        self._clock = priority


class LrukCache(_RankedPolicy):
    """LRU-K: evict the oldest k-th-last access; objects with fewer than k
    accesses rank first and fall back to plain LRU order among themselves."""

    name = "lruk"

    def __init__(self, capacity: int, k: int = 2):
        super().__init__(capacity)
        if k < 1:
            raise ConfigError("k must be >= 1")
        self.k = k
        self._history: dict = {}

    def _priority(self, key) -> float:
        hist = self._history.setdefault(key, [])
        hist.append(self._clock_seq)
        if len(hist) > self.k:
            del hist[0]
        return hist[0] if len(hist) == self.k else -1

    def _on_evict(self, key) -> None:
        self._history.pop(key, None)


@dataclass(frozen=True)
class PolicyFactory:
    """Builds policy instances for a given capacity; `kernel` tags factories
    whose replay can be routed to the compiled queue kernel."""

    name: str
    build: Callable[[int], Policy]
    kernel: Optional[tuple] = None  # (promote_on_hit, admit_threshold)


def make_lru() -> PolicyFactory:
    return PolicyFactory("lru", LruCache, (True, None))


def make_fifo() -> PolicyFactory:
    return PolicyFactory("fifo", FifoCache, (False, None))


def make_s4lru(segments: int = 4) -> PolicyFactory:
    if segments < 1:
        raise ConfigError("segments must be >= 1")
    return PolicyFactory("s4lru", lambda cap: S4LruCache(cap, segments))


def make_lfuda() -> PolicyFactory:
    return PolicyFactory("lfuda", LfudaCache)


def make_lruk(k: int = 2) -> PolicyFactory:
    if k < 1:
        raise ConfigError("k must be >= 1")
    return PolicyFactory("lruk", lambda cap: LrukCache(cap, k))


def make_gdsf() -> PolicyFactory:
    return PolicyFactory("gdsf", GdsfCache)


def make_thlru(threshold_bytes: int) -> PolicyFactory:
    if threshold_bytes < 1:
        raise ConfigError("threshold_bytes must be >= 1")
    return PolicyFactory(
        "thlru",
        lambda cap: LruCache(cap, admit_threshold=threshold_bytes),
        (True, threshold_bytes),
    )


def policy_from_name(name: str, params: Optional[dict] = None) -> PolicyFactory:
    """Resolves a registry name (`lru|fifo|s4lru|lfuda|lruk|gdsf|thlru|lru-base`)."""
    params = params or {}
    if name == "lru":
        return make_lru()
    if name == "fifo":
        return make_fifo()
    if name == "s4lru":
        return make_s4lru(int(params.get("segments", 4)))
    if name == "lfuda":
        return make_lfuda()
    if name == "lruk":
        return make_lruk(int(params.get("k", 2)))
    if name == "gdsf":
        return make_gdsf()
    if name == "thlru":
        if "threshold_bytes" not in params:
            raise ConfigError("thlru requires threshold_bytes")
        return make_thlru(int(params["threshold_bytes"]))
    if name == "lru-base":
        from .lrubase import make_lrubase

        return make_lrubase(params.get("lrubase_config"))
    raise ConfigError(f"unknown policy {name!r}")


def resolve_policy(policy) -> PolicyFactory:
    if isinstance(policy, PolicyFactory):
        return policy
    if isinstance(policy, str):
        return policy_from_name(policy)
    raise ConfigError(f"cannot resolve policy {policy!r}")


def simulate(policy, trace: Sequence[Request], capacity: int, warmup: int = 0,
             *, bypass_oversized: bool = True, use_kernel: bool = True,
             collect_eviction_log: bool = True) -> SimulationReport:
    """Replays the trace through a policy and reports post-warmup counters.

    Warmup requests mutate cache state but are excluded from the counters
    and the eviction log.
    """
    factory = resolve_policy(policy)
    if warmup < 0:
        raise ConfigError("warmup must be >= 0")
    if not bypass_oversized:
        worst = max((r.size for r in trace), default=0)
        if worst > capacity:
            raise ConfigError(
                f"object of {worst} bytes exceeds capacity {capacity} "
                "and oversized bypass is disabled")

    start = time.perf_counter()
    if factory.kernel is not None and use_kernel:
        promote, threshold = factory.kernel
        enc = encode_trace(trace)
        limit = capacity if threshold is None else min(capacity, threshold)
        requests, hits, bytes_req, bytes_hit, evict_at, evict_key = \
            _kernels.lru_replay(enc.keys, enc.key_sizes, capacity, warmup,
                                promote, limit)
        counters = Counters(requests, hits, bytes_req, bytes_hit)
        log = []
        if collect_eviction_log:
            names = enc.key_names
            log = [(int(i), names[int(k)]) for i, k in zip(evict_at, evict_key)]
    else:
        built = factory.build(capacity)
        counters = Counters()
        log = []
        for i, req in enumerate(trace):
            res = built.access(req)
            if i >= warmup:
                counters.record(req.size, res.hit)
                if collect_eviction_log and res.evicted:
                    log.extend((i, k) for k in res.evicted)
    wall = time.perf_counter() - start
    return SimulationReport(
        policy=factory.name,
        capacity=capacity,
        counters=counters,
        eviction_log=log,
        wall_time_s=wall,
        peak_rss_kb=resource.getrusage(resource.RUSAGE_SELF).ru_maxrss,
    )
