"""Trace data model: parsing, writing, synthetic workloads, splicing, sampling.

The on-disk trace format is line-oriented text, one request per line:

    timestamp key size [extra columns ignored]

with integer timestamps (seconds, non-decreasing), opaque keys and positive
integer sizes in bytes.  Gzip-compressed files are detected by magic bytes.
"""

from __future__ import annotations

import gzip
import io
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence, Union

import numpy as np

Key = Union[str, int]

GZIP_MAGIC = b"\x1f\x8b"


class TraceParseError(ValueError):
    """Malformed trace input; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ConfigError(ValueError):
    """Invalid configuration value."""


@dataclass(frozen=True)
class Request:
    """One trace record: arrival second, object key, object size in bytes."""

    timestamp: int
    key: Key
    size: int


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters for the Zipf + diurnal synthetic workload generator.

    size_model is either ("lognormal", mu, sigma) for log-normal byte sizes
    or ("two_class", small_bytes, large_bytes, large_fraction) for a bimodal
    population.  Sizes are drawn once per object, so a key's size is constant.

    temporal_locality is the probability that a request re-references a key
    drawn uniformly from the previous locality_window requests instead of a
    fresh popularity draw; 0 (the default) gives independent draws and leaves
    the random stream of older configs untouched.  Production traces show
    strong short-range re-reference that independent draws lack.
    """

    object_count: int
    zipf_exponent: float
    size_model: tuple
    requests_per_day: int
    days: int
    diurnal_amplitude: float = 0.0
    seed: int = 0
    temporal_locality: float = 0.0
    locality_window: int = 256

    def validate(self) -> None:
        if self.object_count <= 0:
            raise ConfigError("object_count must be positive")
        if self.zipf_exponent <= 0:
            raise ConfigError("zipf_exponent must be positive")
        if not (0 <= self.diurnal_amplitude < 1):
            raise ConfigError("diurnal_amplitude must be in [0, 1)")
        if not (0 <= self.temporal_locality < 1):
            raise ConfigError("temporal_locality must be in [0, 1)")
        if self.locality_window < 1:
            raise ConfigError("locality_window must be >= 1")
        if self.requests_per_day <= 0 or self.days <= 0:
            raise ConfigError("requests_per_day and days must be positive")
        kind = self.size_model[0]
        if kind == "lognormal":
            _, mu, sigma = self.size_model
            if sigma < 0:
                raise ConfigError("lognormal sigma must be non-negative")
        elif kind == "two_class":
            _, small, large, frac = self.size_model
            if small < 1 or large < 1:
                raise ConfigError("two_class sizes must be >= 1 byte")
            if not (0 <= frac <= 1):
                raise ConfigError("large_fraction must be in [0, 1]")
        else:
            raise ConfigError(f"unknown size_model {kind!r}")


@dataclass
class TrainingSet:
    """Requests restricted to a reservoir-sampled subset of object ids."""

    sampled_ids: set
    records: list
    size_histogram: Counter
    ks_distance: float = 0.0
    attempts: int = 1


def _open_source(source) -> IO[bytes]:
    """Accepts a path, bytes, or binary file object; transparently gunzips."""
    if isinstance(source, (str, Path)):
        raw: IO[bytes] = open(source, "rb")
    elif isinstance(source, bytes):
        raw = io.BytesIO(source)
    else:
        raw = source
    head = raw.read(2)
    if head == GZIP_MAGIC:
        raw.seek(0)
        return gzip.open(raw, "rb")
    buffered = io.BufferedReader(_Prepend(head, raw))  # type: ignore[arg-type]
    return buffered


class _Prepend(io.RawIOBase):
    """Raw stream that replays a sniffed prefix before the underlying stream."""

    def __init__(self, head: bytes, rest: IO[bytes]):
        self._head = head
        self._rest = rest

    def readable(self) -> bool:
        return True

    def readinto(self, b) -> int:
        if self._head:
            n = min(len(b), len(self._head))
            b[:n] = self._head[:n]
            self._head = self._head[n:]
            return n
        data = self._rest.read(len(b))
        b[: len(data)] = data
        return len(data)


def parse_trace(source, format: str = "lrb_text") -> Iterator[Request]:
    """Streams Requests from a text trace (path, bytes, or binary file).

    Extra columns beyond the third are ignored.  A key whose size changes
    mid-trace triggers a warning; the latest size wins for later consumers.
    """
    if format != "lrb_text":
        raise ConfigError(f"unknown trace format {format!r}")
    stream = _open_source(source)
    seen_sizes: dict = {}
    for lineno, raw_line in enumerate(stream, start=1):
        line = raw_line.decode("utf-8", errors="strict").strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 3:
            raise TraceParseError(lineno, f"expected 'timestamp key size', got {line!r}")
        try:
            ts = int(parts[0])
            size = int(parts[2])
        except ValueError as exc:
            raise TraceParseError(lineno, str(exc)) from None
        if size <= 0:
            raise TraceParseError(lineno, f"non-positive size {size}")
        key = parts[1]
        prev = seen_sizes.get(key)
        if prev is not None and prev != size:
            warnings.warn(
                f"key {key!r} changes size {prev} -> {size} at line {lineno}; "
                "latest size wins",
                stacklevel=2,
            )
        seen_sizes[key] = size
        yield Request(ts, key, size)


def write_trace(trace: Iterable[Request], sink) -> None:
    """Writes lrb_text lines; parse(write(parse(x))) round-trips exactly."""
    own = isinstance(sink, (str, Path))
    out = open(sink, "w") if own else sink
    try:
        for req in trace:
            out.write(f"{req.timestamp} {req.key} {req.size}\n")
    finally:
        if own:
            out.close()


def load_trace(source) -> list:
    return list(parse_trace(source))


def generate_synthetic(config: SyntheticConfig) -> list:
    """Zipf-popularity requests with a sinusoidal 24-hour arrival profile.

    Deterministic under config.seed: identical configs produce byte-identical
    traces.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    m = config.object_count

    ranks = np.arange(1, m + 1, dtype=np.float64)
    weights = ranks ** (-config.zipf_exponent)
    popularity_cdf = np.cumsum(weights)
    popularity_cdf /= popularity_cdf[-1]

    sizes = _draw_sizes(rng, m, config.size_model)

    hours = np.arange(24, dtype=np.float64)
    hour_weights = 1.0 + config.diurnal_amplitude * np.sin(2.0 * np.pi * hours / 24.0)
    hour_p = hour_weights / hour_weights.sum()

    out = []
    emitted: list = []
    q = config.temporal_locality
    window = config.locality_window
    for day in range(config.days):
        r = config.requests_per_day
        keys = np.searchsorted(popularity_cdf, rng.random(r))
        req_hours = rng.choice(24, size=r, p=hour_p)
        seconds = rng.integers(0, 3600, size=r)
        ts = day * 86400 + req_hours * 3600 + seconds
        order = np.argsort(ts, kind="stable")
        if q > 0:
            reuse = rng.random(r) < q
            back = rng.random(r)
        for pos, idx in enumerate(order):
            k = int(keys[idx])
            if q > 0 and reuse[pos] and emitted:
                span = min(window, len(emitted))
                k = emitted[-1 - int(back[pos] * span)]
            emitted.append(k)
            out.append(Request(int(ts[idx]), k, int(sizes[k])))
    return out


def _draw_sizes(rng: np.random.Generator, m: int, size_model: tuple) -> np.ndarray:
    kind = size_model[0]
    if kind == "lognormal":
        _, mu, sigma = size_model
        sizes = np.maximum(1, np.round(rng.lognormal(mu, sigma, size=m))).astype(np.int64)
    else:
        _, small, large, frac = size_model
        is_large = rng.random(m) < frac
        sizes = np.where(is_large, np.int64(large), np.int64(small))
    return sizes


def splice_traces(a: Sequence[Request], b: Sequence[Request]) -> list:
    """Concatenates two traces into one workload with a hard drift point.

    b's timestamps are shifted so that b starts one second after a ends, and
    keys are namespaced ("a/<key>", "b/<key>") so that the halves share no
    objects.
    """
    if not a or not b:
        raise ConfigError("both traces must be non-empty")
    shift = a[-1].timestamp + 1 - b[0].timestamp
    out = [Request(r.timestamp, f"a/{r.key}", r.size) for r in a]
    out.extend(Request(r.timestamp + shift, f"b/{r.key}", r.size) for r in b)
    return out


def _reservoir_sample(ids: Sequence[Key], k: int, rng: np.random.Generator) -> set:
    """Vitter's algorithm R over a stream of ids (fixed-size reservoir)."""
    n = len(ids)
    reservoir = list(ids[:k])
    if n > k:
        # replacement slot for stream element i is uniform over [0, i]
        slots = np.floor(rng.random(n - k) * np.arange(k + 1, n + 1)).astype(np.int64)
        for offset in np.nonzero(slots < k)[0]:
            reservoir[slots[offset]] = ids[k + offset]
    return set(reservoir)


def ks_distance(sample_a: Sequence[int], sample_b: Sequence[int]) -> float:
    """Two-sample Kolmogorov-Smirnov distance between size distributions."""
    a = np.sort(np.asarray(sample_a, dtype=np.float64))
    b = np.sort(np.asarray(sample_b, dtype=np.float64))
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / len(a)
    cdf_b = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(cdf_a - cdf_b)))


def extract_training_set(
    trace: Sequence[Request],
    sampling_rate: float,
    seed: int = 0,
    *,
    ks_tolerance: float = 0.05,
    max_attempts: int = 50,
) -> TrainingSet:
    """Reservoir-samples object ids and extracts their requests in order.

    The sampler rejects and resamples (with derived seeds) until the sampled
    records' byte-size distribution is within ks_tolerance of the full
    trace's; after max_attempts the best attempt is returned with a warning.
    """
    if not trace:
        raise ConfigError("trace must be non-empty")
    if not (0 < sampling_rate <= 1):
        raise ConfigError("sampling_rate must be in (0, 1]")

    unique_ids = list(dict.fromkeys(r.key for r in trace))
    k = max(1, round(sampling_rate * len(unique_ids)))
    full_sizes = [r.size for r in trace]

    best: TrainingSet | None = None
    seed_seq = np.random.SeedSequence(seed)
    for attempt in range(1, max_attempts + 1):
        rng = np.random.default_rng(seed_seq.spawn(1)[0])
        sampled = _reservoir_sample(unique_ids, k, rng)
        records = [r for r in trace if r.key in sampled]
        dist = ks_distance([r.size for r in records], full_sizes)
        candidate = TrainingSet(
            sampled_ids=sampled,
            records=records,
            size_histogram=Counter(r.size for r in records),
            ks_distance=dist,
            attempts=attempt,
        )
        if best is None or dist < best.ks_distance:
            best = candidate
        if dist <= ks_tolerance:
            return candidate
    assert best is not None
    warnings.warn(
        f"size-distribution match not reached after {max_attempts} attempts "
        f"(best KS distance {best.ks_distance:.4f} > {ks_tolerance})",
        stacklevel=2,
    )
    return best


def load_synthetic_config(source) -> SyntheticConfig:
    """Reads a SyntheticConfig from a flat key=value text file."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
    else:
        text = source.read()
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return synthetic_config_from_dict(pairs)


def synthetic_config_from_dict(pairs: dict) -> SyntheticConfig:
    try:
        kind = pairs.get("size_model", "lognormal")
        if kind == "lognormal":
            size_model = (
                "lognormal",
                float(pairs.get("lognormal_mu", 9.0)),
                float(pairs.get("lognormal_sigma", 1.0)),
            )
        elif kind == "two_class":
            size_model = (
                "two_class",
                int(pairs.get("small_bytes", 16384)),
                int(pairs.get("large_bytes", 1048576)),
                float(pairs.get("large_fraction", 0.1)),
            )
        else:
            raise ConfigError(f"unknown size_model {kind!r}")
        return SyntheticConfig(
            object_count=int(pairs["object_count"]),
            zipf_exponent=float(pairs["zipf_exponent"]),
            size_model=size_model,
            requests_per_day=int(pairs["requests_per_day"]),
            days=int(pairs.get("days", 1)),
            diurnal_amplitude=float(pairs.get("diurnal_amplitude", 0.0)),
            seed=int(pairs.get("seed", 0)),
            temporal_locality=float(pairs.get("temporal_locality", 0.0)),
            locality_window=int(pairs.get("locality_window", 256)),
        )
    except KeyError as exc:
        raise ConfigError(f"missing synthetic config key {exc.args[0]!r}") from None
