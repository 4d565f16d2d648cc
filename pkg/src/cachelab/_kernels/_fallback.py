"""Pure-Python replay kernels.

These are the reference implementations of the hot loops; the compiled
extension in _core.pyx mirrors them operation-for-operation (including the
random number stream), so both backends produce bit-identical results.
"""

from __future__ import annotations

import heapq

import numpy as np

_U64 = (1 << 64) - 1


class SplitMix64:
    """Tiny deterministic PRNG shared verbatim with the compiled kernel."""

    def __init__(self, seed: int):
        self.state = seed & _U64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _U64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
        return z ^ (z >> 31)

    def bounded(self, m: int) -> int:
        """Uniform integer in [0, m) by rejection; no draw when m <= 1."""
        if m <= 1:
            return 0
        limit = (1 << 64) - ((1 << 64) % m)
        while True:
            z = self.next_u64()
            if z < limit:
                return z % m


class _Bit:
    """Fenwick tree of non-negative counts over positions 1..size."""

    def __init__(self, size: int):
        self.size = size
        self.tree = [0] * (size + 1)
        self.log2 = size.bit_length()

    def add(self, pos: int, delta: int) -> None:
        while pos <= self.size:
            self.tree[pos] += delta
            pos += pos & (-pos)

    def prefix(self, pos: int) -> int:
        s = 0
        while pos > 0:
            s += self.tree[pos]
            pos -= pos & (-pos)
        return s

    def select(self, rank: int) -> int:
        """Smallest position with prefix(pos) >= rank (rank >= 1)."""
        pos = 0
        remaining = rank
        step = 1 << self.log2
        while step > 0:
            nxt = pos + step
            if nxt <= self.size and self.tree[nxt] < remaining:
                pos = nxt
                remaining -= self.tree[nxt]
            step >>= 1
        return pos + 1


def lru_replay(keys, key_sizes, capacity, warmup=0, promote_on_hit=True,
               admit_limit=-1):
    """Replays an LRU-family queue over an id-encoded trace.

    promote_on_hit=False gives FIFO; admit_limit caps the admissible object
    size (ThLRU), defaulting to the capacity (oversized objects bypass).

    Returns (requests, hits, bytes_requested, bytes_hit, evict_at, evict_key)
    with counters and the eviction log restricted to post-warmup requests.
    """
    keys = np.asarray(keys, dtype=np.int64)
    key_sizes = np.asarray(key_sizes, dtype=np.int64)
    n = len(keys)
    nkeys = len(key_sizes)
    if admit_limit < 0:
        admit_limit = capacity

    head = nkeys
    tail = nkeys + 1
    nxt = [0] * (nkeys + 2)
    prv = [0] * (nkeys + 2)
    nxt[head] = tail
    prv[tail] = head
    in_cache = [False] * nkeys
    occupancy = 0

    requests = hits = 0
    bytes_requested = bytes_hit = 0
    evict_at = []
    evict_key = []

    for i in range(n):
        k = int(keys[i])
        s = int(key_sizes[k])
        counted = i >= warmup
        if counted:
            requests += 1
            bytes_requested += s
        if in_cache[k]:
            if counted:
                hits += 1
                bytes_hit += s
            if promote_on_hit:
                prv[nxt[k]] = prv[k]
                nxt[prv[k]] = nxt[k]
                nxt[k] = nxt[head]
                prv[k] = head
                prv[nxt[head]] = k
                nxt[head] = k
            continue
        if s > admit_limit:
            continue
        nxt[k] = nxt[head]
        prv[k] = head
        prv[nxt[head]] = k
        nxt[head] = k
        in_cache[k] = True
        occupancy += s
        while occupancy > capacity:
            v = prv[tail]
            prv[tail] = prv[v]
            nxt[prv[v]] = tail
            in_cache[v] = False
            occupancy -= int(key_sizes[v])
            if counted:
                evict_at.append(i)
                evict_key.append(v)

    return (requests, hits, bytes_requested, bytes_hit,
            np.asarray(evict_at, dtype=np.int64),
            np.asarray(evict_key, dtype=np.int64))


def topn_replay(keys, key_sizes, next_use, capacity, warmup=0, top_n=1,
                seed=0):
    """Offline replay evicting uniformly among the top_n farthest-next-use
    objects (top_n=1 is exact farthest-next-use eviction).

    next_use[i] is the position of the next request to keys[i], or n+1 when
    there is none.  Candidate order is (next use desc, size desc, admission
    asc); never-reused objects rank above every finite next use.

    Returns (requests, hits, bytes_requested, bytes_hit, evict_at, evict_key).
    """
    keys = np.asarray(keys, dtype=np.int64)
    key_sizes = np.asarray(key_sizes, dtype=np.int64)
    next_use = np.asarray(next_use, dtype=np.int64)
    n = len(keys)
    sentinel = n + 1

    rng = SplitMix64(seed)
    bit = _Bit(n + 2)          # finite next-use positions, +2 shift
    owner = [0] * (n + 2)
    cur_next = [-1] * len(key_sizes)
    sentinels: list = []       # heap of (-size, admit_seq, key); no stale entries
    count_finite = 0
    occupancy = 0
    seq = 0

    requests = hits = 0
    bytes_requested = bytes_hit = 0
    evict_at = []
    evict_key = []

    def _track(k: int, nu: int) -> None:
        nonlocal count_finite
        if nu >= sentinel:
            heapq.heappush(sentinels, (-int(key_sizes[k]), admit_seq[k], k))
        else:
            bit.add(nu + 2, 1)
            owner[nu + 2] = k
            count_finite += 1

    admit_seq = [0] * len(key_sizes)

    for i in range(n):
        k = int(keys[i])
        s = int(key_sizes[k])
        counted = i >= warmup
        if counted:
            requests += 1
            bytes_requested += s
        nu = int(next_use[i])
        if cur_next[k] >= 0:
            if counted:
                hits += 1
                bytes_hit += s
            old = cur_next[k]
            bit.add(old + 2, -1)   # the old next use was this very position
            count_finite -= 1
            cur_next[k] = nu
            _track(k, nu)
            continue
        if s > capacity:
            continue
        admit_seq[k] = seq
        seq += 1
        cur_next[k] = nu
        occupancy += s
        _track(k, nu)
        while occupancy > capacity:
            n_sent = len(sentinels)
            cached = count_finite + n_sent
            m = min(top_n, cached)
            j = rng.bounded(m)
            if j < n_sent:
                popped = [heapq.heappop(sentinels) for _ in range(j + 1)]
                victim = popped[-1][2]
                for entry in popped[:-1]:
                    heapq.heappush(sentinels, entry)
            else:
                rank = count_finite - (j - n_sent)
                pos = bit.select(rank)
                victim = owner[pos]
                bit.add(pos, -1)
                count_finite -= 1
            cur_next[victim] = -1
            occupancy -= int(key_sizes[victim])
            if counted:
                evict_at.append(i)
                evict_key.append(victim)

    return (requests, hits, bytes_requested, bytes_hit,
            np.asarray(evict_at, dtype=np.int64),
            np.asarray(evict_key, dtype=np.int64))


def ecdf_replay(keys, key_sizes, next_use, capacity, warmup=0):
    """LRU replay that records, before each eviction, the normalized queue
    position of the farthest-next-use (offline-optimal) victim.

    The recorded value is tail_distance / queue_length with the tail at 0.
    Among never-reused objects the one nearest the tail is measured.  The
    eviction itself follows LRU.  Returns a float64 array of samples.
    """
    keys = np.asarray(keys, dtype=np.int64)
    key_sizes = np.asarray(key_sizes, dtype=np.int64)
    next_use = np.asarray(next_use, dtype=np.int64)
    n = len(keys)
    nkeys = len(key_sizes)
    sentinel = n + 1

    rec_bit = _Bit(n + 2)       # recency sequence slots currently cached
    nu_bit = _Bit(n + 2)        # finite next-use positions
    owner = [0] * (n + 2)
    seq_owner = [0] * (n + 2)
    rec_seq = [-1] * nkeys      # -1 = not cached
    cur_next = [-1] * nkeys
    sent_heap: list = []        # (rec_seq, key); stale entries skipped lazily
    n_sent = 0
    is_sent = [False] * nkeys
    count_finite = 0
    cached = 0
    occupancy = 0
    seq = 0
    samples = []

    def _track_next(k: int, nu: int) -> None:
        nonlocal count_finite, n_sent
        if nu >= sentinel:
            heapq.heappush(sent_heap, (rec_seq[k], k))
            is_sent[k] = True
            n_sent += 1
        else:
            nu_bit.add(nu + 2, 1)
            owner[nu + 2] = k
            count_finite += 1

    for i in range(n):
        k = int(keys[i])
        s = int(key_sizes[k])
        nu = int(next_use[i])
        if rec_seq[k] >= 0:
            # hit: promote, then refresh the next-use bookkeeping
            rec_bit.add(rec_seq[k] + 1, -1)
            seq += 1
            rec_seq[k] = seq
            rec_bit.add(seq + 1, 1)
            seq_owner[seq] = k
            old = cur_next[k]
            nu_bit.add(old + 2, -1)
            count_finite -= 1
            cur_next[k] = nu
            _track_next(k, nu)
            continue
        if s > capacity:
            continue
        while occupancy + s > capacity:
            # farthest-next-use victim; nearest the tail among never-reused
            if n_sent > 0:
                while True:
                    rseq, cand = sent_heap[0]
                    if is_sent[cand] and rec_seq[cand] == rseq:
                        victim_b = cand
                        break
                    heapq.heappop(sent_heap)
            else:
                pos = nu_bit.select(count_finite)
                victim_b = owner[pos]
            rank = rec_bit.prefix(rec_seq[victim_b])  # cached with smaller seq
            if i >= warmup:
                samples.append(rank / cached)
            # LRU evicts the queue tail
            tail_seq = rec_bit.select(1) - 1
            v = seq_owner[tail_seq]
            rec_bit.add(tail_seq + 1, -1)
            rec_seq[v] = -1
            if is_sent[v]:
                is_sent[v] = False
                n_sent -= 1
            else:
                nu_bit.add(cur_next[v] + 2, -1)
                count_finite -= 1
            cur_next[v] = -1
            occupancy -= int(key_sizes[v])
            cached -= 1
        seq += 1
        rec_seq[k] = seq
        rec_bit.add(seq + 1, 1)
        seq_owner[seq] = k
        cur_next[k] = nu
        occupancy += s
        cached += 1
        _track_next(k, nu)

    return np.asarray(samples, dtype=np.float64)
