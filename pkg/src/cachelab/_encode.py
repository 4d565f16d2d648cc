"""Internal trace encoding: Request sequences to flat id/size arrays.

The replay kernels and offline analyzers work on integer-encoded traces;
this module is the single place where keys are interned and per-key sizes
are canonicalized (latest size wins, matching the parser's warning rule).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .trace import Request


@dataclass
class EncodedTrace:
    timestamps: np.ndarray      # int64[n]
    keys: np.ndarray            # int64[n], interned ids
    key_sizes: np.ndarray       # int64[n_keys]
    key_names: list             # id -> original key
    n: int
    total_bytes: int
    unique_bytes: int

    _next_use: np.ndarray | None = None

    def next_use(self) -> np.ndarray:
        """next_use[i] = position of the next request to keys[i]; n+1 if none.

        One backward pass; cached after the first call.
        """
        if self._next_use is None:
            n = self.n
            nu = np.full(n, n + 1, dtype=np.int64)
            if n:
                by_key = np.argsort(self.keys, kind="stable")
                grouped = self.keys[by_key]
                same = grouped[:-1] == grouped[1:]
                nu[by_key[:-1][same]] = by_key[1:][same]
            self._next_use = nu
        return self._next_use

    def max_finite_reuse_distance(self) -> int:
        """Largest request gap between consecutive accesses to one key."""
        nu = self.next_use()
        finite = nu <= self.n
        if not finite.any():
            return 0
        gaps = nu[finite] - np.nonzero(finite)[0]
        return int(gaps.max())


def encode_trace(trace: Sequence[Request]) -> EncodedTrace:
    n = len(trace)
    ids: dict = {}
    keys = np.empty(n, dtype=np.int64)
    sizes: list = []
    names: list = []
    conflict = False
    for i, req in enumerate(trace):
        kid = ids.get(req.key)
        if kid is None:
            kid = len(names)
            ids[req.key] = kid
            names.append(req.key)
            sizes.append(req.size)
        elif sizes[kid] != req.size:
            conflict = True
            sizes[kid] = req.size
        keys[i] = kid
    if conflict:
        warnings.warn("trace has keys with inconsistent sizes; latest size wins",
                      stacklevel=2)
    key_sizes = np.asarray(sizes, dtype=np.int64)
    timestamps = np.fromiter((r.timestamp for r in trace), dtype=np.int64, count=n)
    total_bytes = int(key_sizes[keys].sum()) if n else 0
    return EncodedTrace(
        timestamps=timestamps,
        keys=keys,
        key_sizes=key_sizes,
        key_names=names,
        n=n,
        total_bytes=total_bytes,
        unique_bytes=int(key_sizes.sum()),
    )
