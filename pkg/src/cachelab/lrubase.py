"""LRU-BaSE: an LRU queue whose miss-time evictions are picked by a learned
Q-policy over the rear section of the queue.

Hits behave exactly like LRU.  On a miss, once the cache has warmed up and a
trained policy is published, the agent scores the tail-most N objects and the
top-T of them are evicted until the new object fits; without a policy the LRU
tail is evicted, so the cache degrades to plain LRU.

Time is partitioned into fixed regions of the day (default 6 hours starting
at 02:00).  At each region boundary the just-completed region's requests are
used to train a fresh policy (initialized from the previously trained one),
and the decider adopts the policy trained for the same region one day
earlier.  The handoff leaves the decider absent for exactly one request.
"""

from __future__ import annotations

import time
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from itertools import islice
from typing import Optional, Sequence

import numpy as np

from .agent import (
    AgentHyperparams,
    ObjectStats,
    QPolicy,
    ReplayMemory,
    RewardControl,
    RewardInputs,
    RewardParams,
    Transition,
    epsilon_at,
    extract_features,
    forward,
    init_policy,
    q_train_step,
    reward,
    select_action,
    top_t_actions,
)
from .metrics import Counters, bmr, omr
from .policies import AccessResult, Policy, PolicyFactory
from .trace import ConfigError, Request, extract_training_set


@dataclass(frozen=True)
class TimeRegionSchedule:
    """Partitions every day into equal spans, shifted to begin_hour."""

    span_hours: int = 6
    begin_hour: int = 2

    def __post_init__(self):
        if self.span_hours < 1 or 24 % self.span_hours != 0:
            raise ConfigError("span_hours must divide 24")
        if not (0 <= self.begin_hour < 24):
            raise ConfigError("begin_hour must be in [0, 24)")

    @property
    def regions_per_day(self) -> int:
        return 24 // self.span_hours

    def region_of(self, timestamp: int) -> int:
        hour = (timestamp // 3600) % 24
        return ((hour - self.begin_hour) % 24) // self.span_hours

    def absolute_region(self, timestamp: int) -> int:
        return (timestamp - self.begin_hour * 3600) // (self.span_hours * 3600)

    def region_start(self, absolute_region: int) -> int:
        return self.begin_hour * 3600 + absolute_region * self.span_hours * 3600


@dataclass
class LruBaseConfig:
    """All knobs of the learned policy; defaults are the recorded settings."""

    rear_n: Optional[int] = None          # explicit rear-section width
    rear_fraction: float = 0.1            # else fraction of avg queue length
    warm_replacements_before_agent: int = 1000
    top_t: int = 1
    reward_params: RewardParams = field(default_factory=RewardParams)
    hyper: AgentHyperparams = field(default_factory=AgentHyperparams)
    schedule: TimeRegionSchedule = field(default_factory=TimeRegionSchedule)
    training_sampling_rate: float = 0.01
    training_capacity_scale: Optional[float] = None  # None -> sampling rate
    agent_enabled: bool = True
    max_agent_rounds: int = 3             # then LRU finishes the eviction
    seed: int = 0

    def __post_init__(self):
        if self.rear_n is not None and self.rear_n < 1:
            raise ConfigError("rear_n must be >= 1")
        if self.warm_replacements_before_agent < 0:
            raise ConfigError("warm_replacements_before_agent must be >= 0")
        if self.top_t < 1:
            raise ConfigError("top_t must be >= 1")
        if not (0 < self.training_sampling_rate <= 1):
            raise ConfigError("training_sampling_rate must be in (0, 1]")


@dataclass
class TrainStats:
    agent_steps: int = 0
    train_steps: int = 0
    stored: int = 0
    discarded: int = 0
    terminals: int = 0
    mean_loss: float = 0.0
    max_abs_reward: float = 0.0
    wall_time_s: float = 0.0
    resolved_n: int = 0


class _TrainingEnv:
    """Replays a training window through an agent-driven LRU cache.

    The reward compares the simulator's own cumulative OMR/BMR between
    consecutive agent steps, against a baseline snapshotted at episode start.
    Episodes end on every discard/store-terminal control outcome.
    """

    def __init__(self, capacity: int, config: LruBaseConfig, n_actions: int,
                 initial: Optional[QPolicy], seed: int, total_records: int):
        self.capacity = capacity
        self.config = config
        self.hyper = config.hyper
        self.n = n_actions
        self.rng = np.random.default_rng(seed)
        self.queue: OrderedDict = OrderedDict()
        self.occupancy = 0
        self.counters = Counters()
        self.replacements = 0
        self.index = 0
        self.memory = ReplayMemory(self.hyper.replay_capacity)
        self.stats = TrainStats()

        self.fresh_start = initial is None
        if initial is not None:
            self.policy = initial.copy()
        else:
            self.policy = init_policy(n_actions, self.hyper.hidden, seed)
        self.target = self.policy.copy()
        self.opt_state = None
        self.loss_sum = 0.0

        anneal = self.hyper.epsilon_anneal_steps
        if anneal is None:
            anneal = max(1, int(self.hyper.epsilon_anneal_frac * total_records))
        self.anneal_steps = anneal

        self.warm_rows: list = []
        self.pending: Optional[Transition] = None
        self.episode_bmr0 = self.episode_omr0 = None
        self.prev_bmr = self.prev_omr = None

    def _ratios(self):
        return bmr(self.counters), omr(self.counters)

    def _rear_state(self):
        objs = list(islice(self.queue.values(), self.n))
        return extract_features(objs, self.n, self.index, self.clock_time)

    def _freeze_normalization(self) -> None:
        if self.fresh_start and self.warm_rows:
            rows = np.concatenate(self.warm_rows, axis=0)
            self.policy.feat_min = rows.min(axis=0)
            self.policy.feat_max = rows.max(axis=0)
            self.target = self.policy.copy()
        self.warm_rows = []

    def _settle_pending(self, state_now) -> None:
        if self.pending is None:
            self.episode_bmr0, self.episode_omr0 = self._ratios()
            self.prev_bmr, self.prev_omr = self.episode_bmr0, self.episode_omr0
            return
        b, o = self._ratios()
        result = reward(
            RewardInputs(b, self.prev_bmr, self.episode_bmr0,
                         o, self.prev_omr, self.episode_omr0),
            self.config.reward_params,
        )
        self.stats.max_abs_reward = max(self.stats.max_abs_reward,
                                        abs(result.value))
        if result.control is RewardControl.DISCARD:
            self.stats.discarded += 1
            self.pending = None
            self.episode_bmr0, self.episode_omr0 = b, o
        elif result.control is RewardControl.STORE_TERMINAL:
            self.pending.reward = result.value
            self.pending.terminal = True
            self.pending.next_state = None
            self.memory.push(self.pending)
            self.stats.stored += 1
            self.stats.terminals += 1
            self.pending = None
            self.episode_bmr0, self.episode_omr0 = b, o
        else:
            self.pending.reward = result.value
            self.pending.terminal = False
            self.pending.next_state = state_now
            self.memory.push(self.pending)
            self.stats.stored += 1
            self.pending = None
        self.prev_bmr, self.prev_omr = b, o

    def _maybe_train(self) -> None:
        h = self.hyper
        if len(self.memory) < max(h.min_replay, h.batch_size):
            return
        if self.stats.agent_steps % h.train_interval != 0:
            return
        batch = self.memory.sample(h.batch_size, self.rng)
        self.policy, loss, self.opt_state = q_train_step(
            self.policy, batch, h.discount, h.learning_rate,
            self.target, self.opt_state)
        self.loss_sum += loss
        self.stats.train_steps += 1
        if self.stats.train_steps % h.target_sync == 0:
            self.target = self.policy.copy()

    def run(self, records: Sequence[Request]) -> QPolicy:
        warm_limit = self.config.warm_replacements_before_agent
        queue = self.queue
        for req in records:
            self.clock_time = req.timestamp
            key, size = req.key, req.size
            stats = queue.get(key)
            hit = stats is not None
            self.counters.record(size, hit)
            if hit:
                stats.hits += 1
                stats.prev_index, stats.prev_time = stats.last_index, stats.last_time
                stats.last_index, stats.last_time = self.index, req.timestamp
                queue.move_to_end(key)
                self.index += 1
                continue
            if size <= self.capacity:
                queue[key] = ObjectStats(key, size, 0, self.index, req.timestamp)
                self.occupancy += size
                while self.occupancy > self.capacity:
                    if self.replacements >= warm_limit:
                        if self.warm_rows:
                            self._freeze_normalization()
                        state = self._rear_state()
                        self._settle_pending(state)
                        eps = epsilon_at(self.stats.agent_steps, self.anneal_steps,
                                         self.hyper.epsilon_start,
                                         self.hyper.epsilon_final)
                        scores = forward(self.policy, state)
                        action = select_action(scores, eps, self.rng)
                        victim = next(islice(queue, action, action + 1))
                        self.pending = Transition(state, action, 0.0, None, False)
                        self.stats.agent_steps += 1
                        self._maybe_train()
                    else:
                        state = self._rear_state()
                        self.warm_rows.append(state.rows[state.valid])
                        victim = next(iter(queue))
                    vstats = queue.pop(victim)
                    self.occupancy -= vstats.size
                    self.replacements += 1
            self.index += 1
        # the final action's outcome is never observed; drop it
        self.pending = None
        if self.warm_rows:
            self._freeze_normalization()
        if self.stats.train_steps:
            self.stats.mean_loss = self.loss_sum / self.stats.train_steps
        return self.policy


def train_region(window: Sequence[Request], config: LruBaseConfig,
                 capacity: int, n_actions: Optional[int] = None,
                 initial: Optional[QPolicy] = None,
                 seed: int = 0) -> tuple:
    """Trains a policy on one region's requests; returns (policy, stats).

    The window is reduced to a reservoir-sampled training set and replayed
    in a capacity-scaled simulator.  An empty window returns the initial
    policy unchanged with a warning.
    """
    t0 = time.perf_counter()
    if not window:
        warnings.warn("empty training window; returning prior policy",
                      stacklevel=2)
        return initial, TrainStats(wall_time_s=time.perf_counter() - t0,
                                   resolved_n=n_actions or 0)

    rate = config.training_sampling_rate
    if rate < 1.0:
        records = extract_training_set(window, rate, seed).records
    else:
        records = list(window)
    if not records:
        warnings.warn("training sample is empty; returning prior policy",
                      stacklevel=2)
        return initial, TrainStats(wall_time_s=time.perf_counter() - t0,
                                   resolved_n=n_actions or 0)

    scale = config.training_capacity_scale
    if scale is None:
        scale = rate
    train_cap = max(int(round(capacity * scale)),
                    max(r.size for r in records))

    if n_actions is None:
        n_actions = _resolve_rear_n(records, train_cap, config)
    if initial is not None and initial.n_actions != n_actions:
        raise ConfigError(
            f"initial policy width {initial.n_actions} != rear section {n_actions}")

    env = _TrainingEnv(train_cap, config, n_actions, initial, seed,
                       len(records))
    policy = env.run(records)
    env.stats.wall_time_s = time.perf_counter() - t0
    env.stats.resolved_n = n_actions
    return policy, env.stats


def _resolve_rear_n(records: Sequence[Request], capacity: int,
                    config: LruBaseConfig) -> int:
    """Explicit width, or rear_fraction x average queue object count
    measured over the warm replacements of a plain LRU replay."""
    if config.rear_n is not None:
        return config.rear_n
    queue: OrderedDict = OrderedDict()
    occupancy = 0
    lengths = []
    limit = max(1, config.warm_replacements_before_agent)
    for req in records:
        if req.key in queue:
            queue.move_to_end(req.key)
            continue
        if req.size > capacity:
            continue
        queue[req.key] = req.size
        occupancy += req.size
        while occupancy > capacity:
            lengths.append(len(queue))
            _, s = queue.popitem(last=False)
            occupancy -= s
            if len(lengths) >= limit:
                break
        if len(lengths) >= limit:
            break
    if not lengths:
        lengths = [len(queue) or 1]
    return max(1, round(config.rear_fraction * float(np.mean(lengths))))


@dataclass
class RegionReport:
    """Decision-side accounting for one region of the day cycle."""

    absolute_region: int
    region_id: int
    day: int
    counters: Counters
    decider_present: bool
    train_stats: Optional[TrainStats] = None


class LruBaseCache(Policy):
    """The lru-base policy: self-orchestrating trainer/decider handoff."""

    name = "lru-base"

    def __init__(self, capacity: int, config: Optional[LruBaseConfig] = None):
        super().__init__(capacity)
        self.config = config or LruBaseConfig()
        self._queue: OrderedDict = OrderedDict()  # key -> ObjectStats, tail first
        self._occupancy = 0
        self._index = 0
        self._replacements = 0
        self.decider: Optional[QPolicy] = None
        self._pending_policy: Optional[QPolicy] = None
        self._latest_trained: Optional[QPolicy] = None
        self._region_slots: dict = {}        # region_id -> trained QPolicy
        self._resolved_n: Optional[int] = None
        self._cur_abs_region: Optional[int] = None
        self._first_abs_region: Optional[int] = None
        self._first_ts: Optional[int] = None
        self._region_records: list = []
        self._region_seq = 0
        self.region_events: list = []        # (abs_region, adopted, TrainStats|None)

    # -- region orchestration -------------------------------------------------

    def _cross_boundaries(self, timestamp: int) -> None:
        sched = self.config.schedule
        abs_r = sched.absolute_region(timestamp)
        if self._cur_abs_region is None:
            self._cur_abs_region = abs_r
            self._first_abs_region = abs_r
            self._first_ts = timestamp
            return
        while self._cur_abs_region < abs_r:
            completed = self._cur_abs_region
            self._cur_abs_region += 1
            stats = self._train_completed_region(completed)
            entering_id = self._cur_abs_region % sched.regions_per_day
            adopted = self._region_slots.get(entering_id)
            # the boundary-crossing request itself is served without a decider
            self.decider = None
            self._pending_policy = adopted
            self.region_events.append((self._cur_abs_region,
                                       adopted is not None, stats))

    def _train_completed_region(self, abs_region: int) -> Optional[TrainStats]:
        sched = self.config.schedule
        window = self._region_records
        self._region_records = []
        partial = (abs_region == self._first_abs_region
                   and self._first_ts > sched.region_start(abs_region))
        if partial:
            return None
        region_id = abs_region % sched.regions_per_day
        self._region_seq += 1
        seed = (self.config.seed * 1_000_003 + self._region_seq) & ((1 << 63) - 1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            policy, stats = train_region(window, self.config, self.capacity,
                                         self._resolved_n, self._latest_trained,
                                         seed)
        if policy is not None:
            self._resolved_n = policy.n_actions
            self._latest_trained = policy
            self._region_slots[region_id] = policy
        return stats

    # -- policy interface ------------------------------------------------------

    def access(self, request: Request) -> AccessResult:
        if self.config.agent_enabled:
            self._cross_boundaries(request.timestamp)
            self._region_records.append(request)
        i = self._index
        self._index += 1
        key, size = request.key, request.size
        stats = self._queue.get(key)
        if stats is not None:
            stats.hits += 1
            stats.prev_index, stats.prev_time = stats.last_index, stats.last_time
            stats.last_index, stats.last_time = i, request.timestamp
            self._queue.move_to_end(key)
            result = AccessResult(True)
        elif size > self.capacity:
            result = AccessResult(False)
        else:
            self._queue[key] = ObjectStats(key, size, 0, i, request.timestamp)
            self._occupancy += size
            result = AccessResult(False, True, tuple(self._evict_until_fits(
                i, request.timestamp)))
        # the adopted policy becomes visible once the boundary request is done
        if self._pending_policy is not None:
            self.decider = self._pending_policy
            self._pending_policy = None
        return result

    def _evict_until_fits(self, clock_index: int, clock_time: int) -> list:
        evicted = []
        rounds = 0
        while self._occupancy > self.capacity:
            agent_ready = (
                self.decider is not None
                and self._replacements >= self.config.warm_replacements_before_agent
                and rounds < self.config.max_agent_rounds
            )
            if agent_ready:
                n = self.decider.n_actions
                objs = list(islice(self._queue.values(), n))
                state = extract_features(objs, n, clock_index, clock_time)
                scores = forward(self.decider, state)
                picks = top_t_actions(scores, self.config.top_t)
                victims = [objs[p].key for p in picks]
                rounds += 1
                for v in victims:
                    if self._occupancy <= self.capacity:
                        break
                    self._evict(v, evicted)
            else:
                self._evict(next(iter(self._queue)), evicted)
        return evicted

    def _evict(self, key, evicted: list) -> None:
        stats = self._queue.pop(key)
        self._occupancy -= stats.size
        self._replacements += 1
        evicted.append(key)

    def occupancy(self) -> int:
        return self._occupancy

    def contents(self) -> list:
        return [(k, s.size) for k, s in self._queue.items()]


def make_lrubase(config: Optional[LruBaseConfig] = None) -> PolicyFactory:
    return PolicyFactory("lru-base", lambda cap: LruBaseCache(cap, config))


@dataclass
class DayCycleResult:
    region_reports: list
    day_counters: dict            # day index -> Counters
    windowed_bmr: Optional[list] = None
    eviction_log: list = field(default_factory=list)


def run_day_cycle(trace: Sequence[Request], config: LruBaseConfig,
                  capacity: int, bmr_window: Optional[int] = None,
                  collect_eviction_log: bool = False) -> DayCycleResult:
    """Drives lru-base over a multi-day trace, reporting per region and day.

    Training happens at each region boundary on the just-completed region's
    requests; the decider picks up the policy trained for the same region one
    day earlier, falling back to LRU for the boundary request itself.
    """
    sched = config.schedule
    cache = LruBaseCache(capacity, config)
    region_counters: dict = {}
    day_counters: dict = {}
    windows: list = []
    win = Counters()
    log: list = []
    events_seen = 0
    region_meta: dict = {}

    for i, req in enumerate(trace):
        res = cache.access(req)
        abs_r = sched.absolute_region(req.timestamp)
        day = req.timestamp // 86400
        region_counters.setdefault(abs_r, Counters()).record(req.size, res.hit)
        day_counters.setdefault(day, Counters()).record(req.size, res.hit)
        meta = region_meta.setdefault(abs_r, {"decider": cache.decider is not None,
                                              "train": None})
        meta["decider"] = meta["decider"] or cache.decider is not None
        if collect_eviction_log and res.evicted:
            log.extend((i, k) for k in res.evicted)
        while events_seen < len(cache.region_events):
            evt_abs, adopted, stats = cache.region_events[events_seen]
            region_meta.setdefault(evt_abs, {"decider": adopted, "train": None})
            prev_meta = region_meta.setdefault(
                evt_abs - 1, {"decider": False, "train": None})
            prev_meta["train"] = stats
            events_seen += 1
        if bmr_window:
            win.record(req.size, res.hit)
            if win.requests == bmr_window:
                windows.append(bmr(win))
                win = Counters()
    if bmr_window and win.requests:
        windows.append(bmr(win))

    reports = []
    for abs_r in sorted(region_counters):
        meta = region_meta.get(abs_r, {"decider": False, "train": None})
        start = sched.region_start(abs_r)
        reports.append(RegionReport(
            absolute_region=abs_r,
            region_id=sched.region_of(start),
            day=start // 86400,
            counters=region_counters[abs_r],
            decider_present=bool(meta["decider"]),
            train_stats=meta["train"],
        ))
    return DayCycleResult(reports, day_counters,
                          windows if bmr_window else None, log)
