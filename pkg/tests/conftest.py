import numpy as np
import pytest

from cachelab.trace import Request


def req_seq(pattern, sizes=None, t0=0, step=1):
    """Requests from a key pattern like "ABAC" or ["a", "b"].

    sizes maps key -> bytes (default 1); timestamps are t0, t0+step, ...
    """
    sizes = sizes or {}
    return [Request(t0 + i * step, k, sizes.get(k, 1))
            for i, k in enumerate(pattern)]


def random_trace(rng, n_requests, n_keys, max_size=8, t_step=1):
    keys = rng.integers(0, n_keys, n_requests)
    sizes = rng.integers(1, max_size + 1, n_keys)
    return [Request(i * t_step, f"k{keys[i]}", int(sizes[keys[i]]))
            for i in range(n_requests)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
