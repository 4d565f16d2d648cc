"""cachelab: a trace-driven laboratory for CDN cache replacement policies.

Classical online policies, offline-optimal analyzers, a deep Q-learning
eviction agent layered on an LRU queue, and an experiment harness that
replays traces and emits plot-ready reports.
"""

from ._kernels import BACKEND as kernel_backend
from .metrics import Counters, Ecdf, bmr, omr
from .policies import PolicyFactory, SimulationReport, policy_from_name, simulate
from .trace import Request, SyntheticConfig, generate_synthetic, parse_trace

__version__ = "0.1.0"

__all__ = [
    "Counters",
    "Ecdf",
    "PolicyFactory",
    "Request",
    "SimulationReport",
    "SyntheticConfig",
    "bmr",
    "generate_synthetic",
    "kernel_backend",
    "omr",
    "parse_trace",
    "policy_from_name",
    "simulate",
    "__version__",
]
