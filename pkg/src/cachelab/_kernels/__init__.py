"""Replay kernel backend selection.

The compiled extension is preferred; the pure-Python fallback is selected
when the extension is unavailable or when CACHELAB_PURE_PYTHON=1 is set.
Both backends are bit-for-bit equivalent (see tests/test_kernels.py).
"""

import os

from . import _fallback

if os.environ.get("CACHELAB_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

lru_replay = _impl.lru_replay
topn_replay = _impl.topn_replay
ecdf_replay = _impl.ecdf_replay

__all__ = ["BACKEND", "lru_replay", "topn_replay", "ecdf_replay", "_fallback"]
