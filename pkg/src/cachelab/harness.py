"""Experiment runner: config parsing, sweeps, and report emission.

Configs are sectioned key=value text; section names prefix the keys, so
`[lrubase]\ntop_t = 1` and a flat `lrubase.top_t = 1` are equivalent.  Every
experiment writes flat CSVs mirroring the quantities it measures, plus the
data needed to re-plot them.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import metrics, offline, trace as trace_mod
from .agent import AgentHyperparams, RewardParams
from .lrubase import LruBaseConfig, TimeRegionSchedule, run_day_cycle
from .metrics import bmr, omr, rear_fraction, report_rows_to_csv
from .policies import policy_from_name, simulate
from .trace import ConfigError, Request, load_synthetic_config, write_trace

EXPERIMENT_KINDS = (
    "compare", "ecdf", "flat_region", "time_span_sweep", "begin_hour_sweep",
    "drift", "separation_search",
)

_SIZE_SUFFIXES = {"kb": 1 << 10, "mb": 1 << 20, "gb": 1 << 30, "tb": 1 << 40}


def parse_bytes(text: str) -> int:
    t = str(text).strip().lower()
    for suffix, mult in _SIZE_SUFFIXES.items():
        if t.endswith(suffix):
            return int(float(t[: -len(suffix)]) * mult)
    if t.endswith("b"):
        t = t[:-1]
    return int(t)


def parse_config_text(text: str) -> dict:
    """Sectioned or flat key=value text to a flat dotted-key dict."""
    out: dict = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        key = key.strip()
        if section:
            key = f"{section}.{key}"
        out[key] = value.strip()
    return out


class Config:
    """Typed access over the flat config dict."""

    def __init__(self, pairs: dict):
        self.pairs = pairs

    @classmethod
    def from_file(cls, path) -> "Config":
        return cls(parse_config_text(Path(path).read_text()))

    def get(self, key: str, default=None) -> Optional[str]:
        return self.pairs.get(key, default)

    def get_int(self, key: str, default=None) -> Optional[int]:
        v = self.get(key)
        return default if v is None else int(v)

    def get_float(self, key: str, default=None) -> Optional[float]:
        v = self.get(key)
        return default if v is None else float(v)

    def get_bool(self, key: str, default=False) -> bool:
        v = self.get(key)
        if v is None:
            return default
        if v.lower() in ("1", "true", "yes", "on"):
            return True
        if v.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: cannot parse boolean {v!r}")

    def get_list(self, key: str, default=()) -> list:
        v = self.get(key)
        if v is None:
            return list(default)
        return [item.strip() for item in v.split(",") if item.strip()]

    def section(self, name: str) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.pairs.items()
                if k.startswith(prefix)}

    # experiment keys may be written with or without the [experiment] section
    def exp(self, key: str, default=None) -> Optional[str]:
        v = self.get(f"experiment.{key}")
        return self.get(key, default) if v is None else v

    def exp_int(self, key: str, default=None) -> Optional[int]:
        v = self.exp(key)
        return default if v is None else int(v)

    def exp_float(self, key: str, default=None) -> Optional[float]:
        v = self.exp(key)
        return default if v is None else float(v)

    def exp_list(self, key: str, default=()) -> list:
        v = self.exp(key)
        if v is None:
            return list(default)
        return [item.strip() for item in v.split(",") if item.strip()]


@dataclass
class ExperimentConfig:
    kind: str
    out_dir: Path
    deterministic: bool = False
    seed: int = 0
    warmup: int = 0
    capacities: list = field(default_factory=list)
    policies: list = field(default_factory=list)
    workers: int = 1
    raw: Config = None  # type: ignore[assignment]


def _experiment_config(cfg: Config, out_dir, deterministic: bool) -> ExperimentConfig:
    kind = cfg.exp("kind")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; "
                          f"expected one of {', '.join(EXPERIMENT_KINDS)}")
    caps = [parse_bytes(c) for c in cfg.exp_list("capacities")]
    policies = cfg.exp_list("policies")
    return ExperimentConfig(
        kind=kind,
        out_dir=Path(out_dir),
        deterministic=deterministic,
        seed=cfg.exp_int("seed", 0),
        warmup=cfg.exp_int("warmup", 0),
        capacities=caps,
        policies=policies,
        workers=cfg.exp_int("workers", 1),
        raw=cfg,
    )


def _load_trace_for(cfg: Config, section: str = "synthetic",
                    trace_key: str = "trace") -> list:
    path = cfg.exp(trace_key)
    if path:
        return trace_mod.load_trace(path)
    synth_path = cfg.exp("synthetic_config")
    if synth_path:
        return trace_mod.generate_synthetic(load_synthetic_config(synth_path))
    pairs = cfg.section(section)
    if pairs:
        return trace_mod.generate_synthetic(
            trace_mod.synthetic_config_from_dict(pairs))
    raise ConfigError(f"no trace source: set {trace_key} or a [{section}] section")


def _policy_params(cfg: Config, exp: ExperimentConfig) -> dict:
    params = {
        "segments": cfg.get_int("policy.segments", 4),
        "k": cfg.get_int("policy.k", 2),
        "lrubase_config": _lrubase_config(cfg, exp),
    }
    threshold = cfg.get("policy.thlru_threshold")
    if threshold is not None:
        params["threshold_bytes"] = parse_bytes(threshold)
    return params


def _lrubase_config(cfg: Config, exp: ExperimentConfig,
                    span_hours: Optional[int] = None,
                    begin_hour: Optional[int] = None) -> LruBaseConfig:
    sec = cfg.section("lrubase")
    reward = RewardParams(
        alpha=float(sec.get("alpha", 0.4)),
        beta=float(sec.get("beta", 0.4)),
        gamma=float(sec.get("gamma", 0.2)),
    )
    hyper = AgentHyperparams(
        replay_capacity=int(sec.get("replay_capacity", 100_000)),
        batch_size=int(sec.get("batch_size", 64)),
        discount=float(sec.get("discount", 0.95)),
        epsilon_start=float(sec.get("epsilon_start", 1.0)),
        epsilon_final=float(sec.get("epsilon_final", 0.05)),
        epsilon_anneal_frac=float(sec.get("epsilon_anneal_frac", 0.2)),
        epsilon_anneal_steps=(int(sec["epsilon_anneal_steps"])
                              if "epsilon_anneal_steps" in sec else None),
        target_sync=int(sec.get("target_sync", 1000)),
        learning_rate=float(sec.get("learning_rate", 1e-3)),
        train_interval=int(sec.get("train_interval", 1)),
        min_replay=int(sec.get("min_replay", 64)),
        hidden=int(sec.get("hidden", 512)),
    )
    schedule = TimeRegionSchedule(
        span_hours=span_hours if span_hours is not None
        else int(sec.get("span_hours", 6)),
        begin_hour=begin_hour if begin_hour is not None
        else int(sec.get("begin_hour", 2)),
    )
    return LruBaseConfig(
        rear_n=int(sec["rear_n"]) if "rear_n" in sec else None,
        rear_fraction=float(sec.get("rear_fraction", 0.1)),
        warm_replacements_before_agent=int(sec.get("warm_replacements", 1000)),
        top_t=int(sec.get("top_t", 1)),
        reward_params=reward,
        hyper=hyper,
        schedule=schedule,
        training_sampling_rate=float(sec.get("sampling_rate", 0.01)),
        training_capacity_scale=(float(sec["capacity_scale"])
                                 if "capacity_scale" in sec else None),
        agent_enabled=sec.get("agent_enabled", "true").lower()
        in ("1", "true", "yes", "on"),
        seed=int(sec.get("seed", exp.seed)),
    )


def run(config_path, out_dir=None, deterministic: bool = False) -> list:
    """Runs the configured experiment; returns the written file paths."""
    cfg = Config.from_file(config_path)
    out = out_dir or cfg.exp("out_dir") or "out"
    exp = _experiment_config(cfg, out, deterministic)
    exp.out_dir.mkdir(parents=True, exist_ok=True)
    runner = _RUNNERS[exp.kind]
    return runner(exp)


# -- experiment kinds ---------------------------------------------------------


def _run_compare(exp: ExperimentConfig) -> list:
    cfg = exp.raw
    tr = _load_trace_for(cfg)
    if not exp.policies or not exp.capacities:
        raise ConfigError("compare needs policies and capacities")
    params = _policy_params(cfg, exp)
    factories = [policy_from_name(name, params) for name in exp.policies]

    cells = [(f, cap) for cap in exp.capacities for f in factories]

    def run_cell(cell):
        factory, cap = cell
        rep = simulate(factory, tr, cap, exp.warmup, collect_eviction_log=False)
        return (rep.policy, cap, omr(rep.counters), bmr(rep.counters),
                rep.counters.requests, rep.counters.bytes_requested)

    if exp.workers > 1:
        with ThreadPoolExecutor(max_workers=exp.workers) as pool:
            rows = list(pool.map(run_cell, cells))
    else:
        rows = [run_cell(c) for c in cells]

    for cap in exp.capacities:
        rep = offline.belady(tr, cap, exp.warmup)
        rows.append(("belady", cap, omr(rep.counters), bmr(rep.counters),
                     rep.counters.requests, rep.counters.bytes_requested))
        bound = offline.pfoo_l(tr, cap)
        total_req = len(tr)
        total_bytes = sum(r.size for r in tr)
        rows.append(("pfoo-l", cap, bound.omr_bound, bound.bmr_bound,
                     total_req, total_bytes))

    rows.sort(key=lambda r: (r[1], r[0]))
    path = exp.out_dir / "compare.csv"
    report_rows_to_csv(rows, str(path), exp.deterministic,
                       header_note="compare experiment")
    return [path]


def _run_ecdf(exp: ExperimentConfig) -> list:
    cfg = exp.raw
    tr = _load_trace_for(cfg)
    if not exp.capacities:
        raise ConfigError("ecdf needs capacities")
    q = cfg.exp_float("quantile", 0.99999)
    written = []
    summary = []
    for cap in exp.capacities:
        ecdf = metrics.eviction_position_ecdf(tr, cap, exp.warmup)
        path = exp.out_dir / f"ecdf_{cap}.csv"
        ecdf.to_csv(str(path))
        written.append(path)
        summary.append((cap, q, rear_fraction(ecdf, q), len(ecdf)))
    spath = exp.out_dir / "rear_fraction.csv"
    with open(spath, "w") as f:
        f.write("capacity,quantile,rear_fraction,samples\n")
        for cap, qq, frac, count in summary:
            f.write(f"{cap},{qq},{frac:.6f},{count}\n")
    written.append(spath)
    return written


def _run_flat_region(exp: ExperimentConfig) -> list:
    cfg = exp.raw
    tr = _load_trace_for(cfg)
    if not exp.capacities:
        raise ConfigError("flat_region needs one capacity")
    n_values = [int(v) for v in cfg.exp_list("n_values",
                                             ["1", "2", "4", "8", "16"])]
    repeats = cfg.exp_int("repeats", 500)
    stats = offline.flat_region_experiment(tr, exp.capacities[0], n_values,
                                           repeats, exp.seed, exp.warmup)
    path = exp.out_dir / "flat_region.csv"
    offline.flat_region_to_csv(stats, str(path))
    return [path]


def _day_cycle_rows(tr, exp: ExperimentConfig, configs) -> list:
    """Evaluates lru-base day cycles; reports the final day's ratios."""
    rows = []
    for label, lb_config, cap in configs:
        result = run_day_cycle(tr, lb_config, cap)
        final_day = max(result.day_counters)
        c = result.day_counters[final_day]
        train_walls = [r.train_stats.wall_time_s for r in result.region_reports
                       if r.train_stats is not None]
        mean_train = sum(train_walls) / len(train_walls) if train_walls else 0.0
        rows.append((label, cap, omr(c), bmr(c), mean_train))
    return rows


def _run_time_span_sweep(exp: ExperimentConfig) -> list:
    cfg = exp.raw
    tr = _load_trace_for(cfg)
    if not exp.capacities:
        raise ConfigError("time_span_sweep needs one capacity")
    spans = [int(s) for s in cfg.exp_list("spans",
                                          ["1", "2", "3", "4", "6", "8", "12", "24"])]
    begin = cfg.exp_int("begin_hour", 0)
    cap = exp.capacities[0]
    configs = [(str(span), _lrubase_config(cfg, exp, span_hours=span,
                                           begin_hour=begin), cap)
               for span in spans]
    rows = _day_cycle_rows(tr, exp, configs)
    path = exp.out_dir / "time_span_sweep.csv"
    with open(path, "w") as f:
        f.write("span_hours,omr,bmr,mean_train_time_s\n")
        for label, _cap, o, b, tt in rows:
            f.write(f"{label},{o:.6f},{b:.6f},{tt:.3f}\n")
    return [path]


def _run_begin_hour_sweep(exp: ExperimentConfig) -> list:
    cfg = exp.raw
    tr = _load_trace_for(cfg)
    if not exp.capacities:
        raise ConfigError("begin_hour_sweep needs one capacity")
    hours = [int(h) for h in cfg.exp_list("begin_hours",
                                          ["0", "1", "2", "3", "4", "5"])]
    span = cfg.exp_int("span_hours", 6)
    cap = exp.capacities[0]
    configs = [(str(h), _lrubase_config(cfg, exp, span_hours=span,
                                        begin_hour=h), cap)
               for h in hours]
    rows = _day_cycle_rows(tr, exp, configs)
    path = exp.out_dir / "begin_hour_sweep.csv"
    with open(path, "w") as f:
        f.write("begin_hour,omr,bmr,mean_train_time_s\n")
        for label, _cap, o, b, tt in rows:
            f.write(f"{label},{o:.6f},{b:.6f},{tt:.3f}\n")
    return [path]


def _run_drift(exp: ExperimentConfig) -> list:
    cfg = exp.raw
    a_path, b_path = cfg.exp("trace_a"), cfg.exp("trace_b")
    if a_path and b_path:
        a = trace_mod.load_trace(a_path)
        b = trace_mod.load_trace(b_path)
    else:
        a_pairs, b_pairs = cfg.section("synthetic_a"), cfg.section("synthetic_b")
        if not a_pairs or not b_pairs:
            raise ConfigError("drift needs trace_a/trace_b or "
                              "[synthetic_a]/[synthetic_b]")
        a = trace_mod.generate_synthetic(
            trace_mod.synthetic_config_from_dict(a_pairs))
        b = trace_mod.generate_synthetic(
            trace_mod.synthetic_config_from_dict(b_pairs))
    spliced = trace_mod.splice_traces(a, b)
    window = cfg.exp_int("window", 10_000)
    if not exp.capacities:
        raise ConfigError("drift needs one capacity")
    cap = exp.capacities[0]
    policies = exp.policies or ["lru", "lru-base"]
    params = _policy_params(cfg, exp)

    written = []
    for name in policies:
        if name == "lru-base":
            result = run_day_cycle(spliced, params["lrubase_config"], cap,
                                   bmr_window=window)
            series = result.windowed_bmr
        else:
            series = metrics.windowed_bmr_series(
                spliced, policy_from_name(name, params), cap, window)
        path = exp.out_dir / f"drift_{name}.csv"
        with open(path, "w") as f:
            f.write("window,bmr\n")
            for i, value in enumerate(series):
                f.write(f"{i},{value:.6f}\n")
        written.append(path)

    meta = exp.out_dir / "drift_meta.json"
    with open(meta, "w") as f:
        json.dump({"splice_at_request": len(a), "window": window,
                   "splice_timestamp": spliced[len(a)].timestamp}, f)
    written.append(meta)
    return written


def _run_separation_search(exp: ExperimentConfig) -> list:
    cfg = exp.raw
    budget = cfg.exp_int("max_instances", 10_000)
    found = offline.search_separating_instance(exp.seed, budget)
    if found is None:
        raise RuntimeError(
            f"no separating instance found within {budget} instances")
    tr, capacity, certificates = found
    instance_path = exp.out_dir / "instance.txt"
    write_trace(tr, str(instance_path))
    cert_path = exp.out_dir / "certificates.json"
    with open(cert_path, "w") as f:
        json.dump(certificates, f, indent=2, sort_keys=True)
    return [instance_path, cert_path]


_RUNNERS = {
    "compare": _run_compare,
    "ecdf": _run_ecdf,
    "flat_region": _run_flat_region,
    "time_span_sweep": _run_time_span_sweep,
    "begin_hour_sweep": _run_begin_hour_sweep,
    "drift": _run_drift,
    "separation_search": _run_separation_search,
}
