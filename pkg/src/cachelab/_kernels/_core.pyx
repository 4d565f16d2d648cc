# Compiled replay kernels. These mirror _fallback.py operation-for-operation,
# including the PRNG stream, so both backends give bit-identical results.

import numpy as np

cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t

cnp.import_array()


cdef uint64_t _SM_GAMMA = 0x9E3779B97F4A7C15UL
cdef uint64_t _SM_MIX1 = 0xBF58476D1CE4E5B9UL
cdef uint64_t _SM_MIX2 = 0x94D049BB133111EBUL


cdef inline uint64_t _sm_next(uint64_t *state) nogil:
    state[0] = state[0] + _SM_GAMMA
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * _SM_MIX1
    z = (z ^ (z >> 27)) * _SM_MIX2
    return z ^ (z >> 31)


cdef inline uint64_t _sm_bounded(uint64_t *state, uint64_t m) nogil:
    if m <= 1:
        return 0
    cdef uint64_t rem = (0 - m) % m      # == 2**64 mod m
    cdef uint64_t z
    while True:
        z = _sm_next(state)
        if rem == 0 or z < (0 - rem):
            return z % m


# ---------------------------------------------------------------------------
# Fenwick tree over int64 counts, positions 1..size.

cdef inline void _bit_add(int64_t[::1] tree, int64_t size, int64_t pos,
                          int64_t delta) nogil:
    while pos <= size:
        tree[pos] += delta
        pos += pos & (-pos)


cdef inline int64_t _bit_prefix(int64_t[::1] tree, int64_t pos) nogil:
    cdef int64_t s = 0
    while pos > 0:
        s += tree[pos]
        pos -= pos & (-pos)
    return s


cdef inline int64_t _bit_select(int64_t[::1] tree, int64_t size,
                                int64_t log2, int64_t rank) nogil:
    cdef int64_t pos = 0
    cdef int64_t remaining = rank
    cdef int64_t step = (<int64_t>1) << log2
    cdef int64_t nxt
    while step > 0:
        nxt = pos + step
        if nxt <= size and tree[nxt] < remaining:
            pos = nxt
            remaining -= tree[nxt]
        step >>= 1
    return pos + 1


cdef inline int64_t _bit_log2(int64_t size) nogil:
    cdef int64_t b = 0
    while (<int64_t>1 << b) <= size:
        b += 1
    return b


# ---------------------------------------------------------------------------
# Binary min-heaps with strict total orders (pop order matches heapq).

cdef inline bint _sent_less(int64_t sa, int64_t qa, int64_t sb, int64_t qb) nogil:
    # orders by (size desc, admission seq asc)
    if sa != sb:
        return sa > sb
    return qa < qb


cdef void _sent_push(int64_t[::1] hsize, int64_t[::1] hseq, int64_t[::1] hkey,
                     int64_t *hn, int64_t size, int64_t seq, int64_t key) nogil:
    cdef int64_t i = hn[0]
    cdef int64_t parent
    hsize[i] = size
    hseq[i] = seq
    hkey[i] = key
    hn[0] += 1
    while i > 0:
        parent = (i - 1) >> 1
        if _sent_less(hsize[i], hseq[i], hsize[parent], hseq[parent]):
            hsize[i], hsize[parent] = hsize[parent], hsize[i]
            hseq[i], hseq[parent] = hseq[parent], hseq[i]
            hkey[i], hkey[parent] = hkey[parent], hkey[i]
            i = parent
        else:
            break


cdef void _sent_pop(int64_t[::1] hsize, int64_t[::1] hseq, int64_t[::1] hkey,
                    int64_t *hn) nogil:
    cdef int64_t last = hn[0] - 1
    cdef int64_t i = 0
    cdef int64_t child
    hsize[0] = hsize[last]
    hseq[0] = hseq[last]
    hkey[0] = hkey[last]
    hn[0] = last
    while True:
        child = 2 * i + 1
        if child >= last:
            break
        if child + 1 < last and _sent_less(hsize[child + 1], hseq[child + 1],
                                           hsize[child], hseq[child]):
            child += 1
        if _sent_less(hsize[child], hseq[child], hsize[i], hseq[i]):
            hsize[i], hsize[child] = hsize[child], hsize[i]
            hseq[i], hseq[child] = hseq[child], hseq[i]
            hkey[i], hkey[child] = hkey[child], hkey[i]
            i = child
        else:
            break


cdef void _mh_push(int64_t[::1] hval, int64_t[::1] hkey, int64_t *hn,
                   int64_t val, int64_t key) nogil:
    cdef int64_t i = hn[0]
    cdef int64_t parent
    hval[i] = val
    hkey[i] = key
    hn[0] += 1
    while i > 0:
        parent = (i - 1) >> 1
        if hval[i] < hval[parent]:
            hval[i], hval[parent] = hval[parent], hval[i]
            hkey[i], hkey[parent] = hkey[parent], hkey[i]
            i = parent
        else:
            break


cdef void _mh_pop(int64_t[::1] hval, int64_t[::1] hkey, int64_t *hn) nogil:
    cdef int64_t last = hn[0] - 1
    cdef int64_t i = 0
    cdef int64_t child
    hval[0] = hval[last]
    hkey[0] = hkey[last]
    hn[0] = last
    while True:
        child = 2 * i + 1
        if child >= last:
            break
        if child + 1 < last and hval[child + 1] < hval[child]:
            child += 1
        if hval[child] < hval[i]:
            hval[i], hval[child] = hval[child], hval[i]
            hkey[i], hkey[child] = hkey[child], hkey[i]
            i = child
        else:
            break


# ---------------------------------------------------------------------------


def lru_replay(keys, key_sizes, capacity, warmup=0, promote_on_hit=True,
               admit_limit=-1):
    """Compiled counterpart of _fallback.lru_replay."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1] keys_a = np.ascontiguousarray(keys, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] sizes_a = np.ascontiguousarray(key_sizes, dtype=np.int64)
    cdef int64_t n = keys_a.shape[0]
    cdef int64_t nkeys = sizes_a.shape[0]
    cdef int64_t cap = capacity
    cdef int64_t warm = warmup
    cdef int64_t limit = admit_limit
    cdef bint promote = promote_on_hit
    if limit < 0:
        limit = cap

    cdef cnp.ndarray[cnp.int64_t, ndim=1] nxt_a = np.zeros(nkeys + 2, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] prv_a = np.zeros(nkeys + 2, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] in_cache_a = np.zeros(nkeys, dtype=np.uint8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] evict_at_a = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] evict_key_a = np.empty(n, dtype=np.int64)

    cdef int64_t[::1] K = keys_a
    cdef int64_t[::1] S = sizes_a
    cdef int64_t[::1] nxt = nxt_a
    cdef int64_t[::1] prv = prv_a
    cdef cnp.uint8_t[::1] in_cache = in_cache_a
    cdef int64_t[::1] evict_at = evict_at_a
    cdef int64_t[::1] evict_key = evict_key_a

    cdef int64_t head = nkeys
    cdef int64_t tail = nkeys + 1
    cdef int64_t occupancy = 0
    cdef int64_t requests = 0, hits = 0
    cdef int64_t bytes_requested = 0, bytes_hit = 0
    cdef int64_t n_evict = 0
    cdef int64_t i, k, s, v
    cdef bint counted

    nxt[head] = tail
    prv[tail] = head

    with nogil:
        for i in range(n):
            k = K[i]
            s = S[k]
            counted = i >= warm
            if counted:
                requests += 1
                bytes_requested += s
            if in_cache[k]:
                if counted:
                    hits += 1
                    bytes_hit += s
                if promote:
                    prv[nxt[k]] = prv[k]
                    nxt[prv[k]] = nxt[k]
                    nxt[k] = nxt[head]
                    prv[k] = head
                    prv[nxt[head]] = k
                    nxt[head] = k
                continue
            if s > limit:
                continue
            nxt[k] = nxt[head]
            prv[k] = head
            prv[nxt[head]] = k
            nxt[head] = k
            in_cache[k] = 1
            occupancy += s
            while occupancy > cap:
                v = prv[tail]
                prv[tail] = prv[v]
                nxt[prv[v]] = tail
                in_cache[v] = 0
                occupancy -= S[v]
                if counted:
                    evict_at[n_evict] = i
                    evict_key[n_evict] = v
                    n_evict += 1

    return (int(requests), int(hits), int(bytes_requested), int(bytes_hit),
            evict_at_a[:n_evict].copy(), evict_key_a[:n_evict].copy())


def topn_replay(keys, key_sizes, next_use, capacity, warmup=0, top_n=1,
                seed=0):
    """Compiled counterpart of _fallback.topn_replay."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1] keys_a = np.ascontiguousarray(keys, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] sizes_a = np.ascontiguousarray(key_sizes, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] nu_a = np.ascontiguousarray(next_use, dtype=np.int64)
    cdef int64_t n = keys_a.shape[0]
    cdef int64_t nkeys = sizes_a.shape[0]
    cdef int64_t cap = capacity
    cdef int64_t warm = warmup
    cdef int64_t N = top_n
    cdef int64_t sentinel = n + 1

    cdef int64_t bit_size = n + 2
    cdef cnp.ndarray[cnp.int64_t, ndim=1] tree_a = np.zeros(bit_size + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] owner_a = np.zeros(bit_size + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cur_next_a = np.full(nkeys, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] admit_seq_a = np.zeros(nkeys, dtype=np.int64)
    # sentinel heap never outgrows the number of concurrently cached objects
    cdef cnp.ndarray[cnp.int64_t, ndim=1] hsize_a = np.empty(nkeys + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] hseq_a = np.empty(nkeys + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] hkey_a = np.empty(nkeys + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] tmps_a = np.empty(nkeys + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] tmpq_a = np.empty(nkeys + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] tmpk_a = np.empty(nkeys + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] evict_at_a = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] evict_key_a = np.empty(n, dtype=np.int64)

    cdef int64_t[::1] K = keys_a
    cdef int64_t[::1] S = sizes_a
    cdef int64_t[::1] NU = nu_a
    cdef int64_t[::1] tree = tree_a
    cdef int64_t[::1] owner = owner_a
    cdef int64_t[::1] cur_next = cur_next_a
    cdef int64_t[::1] admit_seq = admit_seq_a
    cdef int64_t[::1] hsize = hsize_a
    cdef int64_t[::1] hseq = hseq_a
    cdef int64_t[::1] hkey = hkey_a
    cdef int64_t[::1] tmps = tmps_a
    cdef int64_t[::1] tmpq = tmpq_a
    cdef int64_t[::1] tmpk = tmpk_a
    cdef int64_t[::1] evict_at = evict_at_a
    cdef int64_t[::1] evict_key = evict_key_a

    cdef int64_t log2 = _bit_log2(bit_size)
    cdef uint64_t rng_state = <uint64_t>seed
    cdef int64_t hn = 0
    cdef int64_t count_finite = 0
    cdef int64_t occupancy = 0
    cdef int64_t seq = 0
    cdef int64_t requests = 0, hits = 0
    cdef int64_t bytes_requested = 0, bytes_hit = 0
    cdef int64_t n_evict = 0
    cdef int64_t i, k, s, nu, old, cached, m, j, t, rank, pos, victim
    cdef bint counted

    with nogil:
        for i in range(n):
            k = K[i]
            s = S[k]
            counted = i >= warm
            if counted:
                requests += 1
                bytes_requested += s
            nu = NU[i]
            if cur_next[k] >= 0:
                if counted:
                    hits += 1
                    bytes_hit += s
                old = cur_next[k]
                _bit_add(tree, bit_size, old + 2, -1)
                count_finite -= 1
                cur_next[k] = nu
                if nu >= sentinel:
                    _sent_push(hsize, hseq, hkey, &hn, S[k], admit_seq[k], k)
                else:
                    _bit_add(tree, bit_size, nu + 2, 1)
                    owner[nu + 2] = k
                    count_finite += 1
                continue
            if s > cap:
                continue
            admit_seq[k] = seq
            seq += 1
            cur_next[k] = nu
            occupancy += s
            if nu >= sentinel:
                _sent_push(hsize, hseq, hkey, &hn, S[k], admit_seq[k], k)
            else:
                _bit_add(tree, bit_size, nu + 2, 1)
                owner[nu + 2] = k
                count_finite += 1
            while occupancy > cap:
                cached = count_finite + hn
                m = N if N < cached else cached
                j = <int64_t>_sm_bounded(&rng_state, <uint64_t>m)
                if j < hn:
                    for t in range(j + 1):
                        tmps[t] = hsize[0]
                        tmpq[t] = hseq[0]
                        tmpk[t] = hkey[0]
                        _sent_pop(hsize, hseq, hkey, &hn)
                    victim = tmpk[j]
                    for t in range(j):
                        _sent_push(hsize, hseq, hkey, &hn, tmps[t], tmpq[t], tmpk[t])
                else:
                    rank = count_finite - (j - hn)
                    pos = _bit_select(tree, bit_size, log2, rank)
                    victim = owner[pos]
                    _bit_add(tree, bit_size, pos, -1)
                    count_finite -= 1
                cur_next[victim] = -1
                occupancy -= S[victim]
                if counted:
                    evict_at[n_evict] = i
                    evict_key[n_evict] = victim
                    n_evict += 1

    return (int(requests), int(hits), int(bytes_requested), int(bytes_hit),
            evict_at_a[:n_evict].copy(), evict_key_a[:n_evict].copy())


def ecdf_replay(keys, key_sizes, next_use, capacity, warmup=0):
    """Compiled counterpart of _fallback.ecdf_replay."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1] keys_a = np.ascontiguousarray(keys, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] sizes_a = np.ascontiguousarray(key_sizes, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] nu_a = np.ascontiguousarray(next_use, dtype=np.int64)
    cdef int64_t n = keys_a.shape[0]
    cdef int64_t nkeys = sizes_a.shape[0]
    cdef int64_t cap = capacity
    cdef int64_t warm = warmup
    cdef int64_t sentinel = n + 1

    cdef int64_t bit_size = n + 2
    cdef cnp.ndarray[cnp.int64_t, ndim=1] rec_tree_a = np.zeros(bit_size + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] nu_tree_a = np.zeros(bit_size + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] owner_a = np.zeros(bit_size + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] seq_owner_a = np.zeros(bit_size + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] rec_seq_a = np.full(nkeys, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cur_next_a = np.full(nkeys, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] is_sent_a = np.zeros(nkeys, dtype=np.uint8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] hval_a = np.empty(nkeys + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] hkey_a = np.empty(nkeys + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] samples_a = np.empty(n, dtype=np.float64)

    cdef int64_t[::1] K = keys_a
    cdef int64_t[::1] S = sizes_a
    cdef int64_t[::1] NU = nu_a
    cdef int64_t[::1] rec_tree = rec_tree_a
    cdef int64_t[::1] nu_tree = nu_tree_a
    cdef int64_t[::1] owner = owner_a
    cdef int64_t[::1] seq_owner = seq_owner_a
    cdef int64_t[::1] rec_seq = rec_seq_a
    cdef int64_t[::1] cur_next = cur_next_a
    cdef cnp.uint8_t[::1] is_sent = is_sent_a
    cdef int64_t[::1] hval = hval_a
    cdef int64_t[::1] hkey = hkey_a
    cdef double[::1] samples = samples_a

    cdef int64_t log2 = _bit_log2(bit_size)
    cdef int64_t hn = 0
    cdef int64_t n_sent = 0
    cdef int64_t count_finite = 0
    cdef int64_t cached = 0
    cdef int64_t occupancy = 0
    cdef int64_t seq = 0
    cdef int64_t n_samples = 0
    cdef int64_t i, k, s, nu, old, pos, victim_b, rank, tail_seq, v, rs, cand
    cdef bint found

    with nogil:
        for i in range(n):
            k = K[i]
            s = S[k]
            nu = NU[i]
            if rec_seq[k] >= 0:
                _bit_add(rec_tree, bit_size, rec_seq[k] + 1, -1)
                seq += 1
                rec_seq[k] = seq
                _bit_add(rec_tree, bit_size, seq + 1, 1)
                seq_owner[seq] = k
                old = cur_next[k]
                _bit_add(nu_tree, bit_size, old + 2, -1)
                count_finite -= 1
                cur_next[k] = nu
                if nu >= sentinel:
                    _mh_push(hval, hkey, &hn, rec_seq[k], k)
                    is_sent[k] = 1
                    n_sent += 1
                else:
                    _bit_add(nu_tree, bit_size, nu + 2, 1)
                    owner[nu + 2] = k
                    count_finite += 1
                continue
            if s > cap:
                continue
            while occupancy + s > cap:
                if n_sent > 0:
                    while True:
                        rs = hval[0]
                        cand = hkey[0]
                        if is_sent[cand] and rec_seq[cand] == rs:
                            victim_b = cand
                            break
                        _mh_pop(hval, hkey, &hn)
                else:
                    pos = _bit_select(nu_tree, bit_size, log2, count_finite)
                    victim_b = owner[pos]
                rank = _bit_prefix(rec_tree, rec_seq[victim_b])
                if i >= warm:
                    samples[n_samples] = (<double>rank) / (<double>cached)
                    n_samples += 1
                tail_seq = _bit_select(rec_tree, bit_size, log2, 1) - 1
                v = seq_owner[tail_seq]
                _bit_add(rec_tree, bit_size, tail_seq + 1, -1)
                rec_seq[v] = -1
                if is_sent[v]:
                    is_sent[v] = 0
                    n_sent -= 1
                else:
                    _bit_add(nu_tree, bit_size, cur_next[v] + 2, -1)
                    count_finite -= 1
                cur_next[v] = -1
                occupancy -= S[v]
                cached -= 1
            seq += 1
            rec_seq[k] = seq
            _bit_add(rec_tree, bit_size, seq + 1, 1)
            seq_owner[seq] = k
            cur_next[k] = nu
            occupancy += s
            cached += 1
            if nu >= sentinel:
                _mh_push(hval, hkey, &hn, rec_seq[k], k)
                is_sent[k] = 1
                n_sent += 1
            else:
                _bit_add(nu_tree, bit_size, nu + 2, 1)
                owner[nu + 2] = k
                count_finite += 1

    return samples_a[:n_samples].copy()
