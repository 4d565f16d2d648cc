import numpy as np
import pytest

from cachelab.agent import AgentHyperparams, RewardParams, init_policy
from cachelab.lrubase import (
    LruBaseCache,
    LruBaseConfig,
    TimeRegionSchedule,
    make_lrubase,
    run_day_cycle,
    train_region,
)
from cachelab.policies import simulate
from cachelab.trace import ConfigError, Request, SyntheticConfig, generate_synthetic

from conftest import random_trace


def small_config(**overrides):
    defaults = dict(
        rear_n=6,
        warm_replacements_before_agent=20,
        top_t=1,
        hyper=AgentHyperparams(batch_size=8, min_replay=8, train_interval=4,
                               hidden=16, target_sync=50),
        training_sampling_rate=1.0,
        training_capacity_scale=1.0,
        seed=1,
    )
    defaults.update(overrides)
    return LruBaseConfig(**defaults)


def stub_decider(n, best_index=0):
    policy = init_policy(n, hidden=4, seed=0)
    policy.w1[:] = 0
    policy.w2[:] = 0
    policy.b2[:] = 0
    policy.b2[best_index] = 1.0
    return policy


class TestSchedule:
    def test_default_boundaries(self):
        s = TimeRegionSchedule()
        assert s.regions_per_day == 4
        assert s.region_of(2 * 3600) == 0
        assert s.region_of(7 * 3600 + 3599) == 0
        assert s.region_of(8 * 3600) == 1
        assert s.region_of(14 * 3600) == 2
        assert s.region_of(20 * 3600) == 3
        assert s.region_of(1 * 3600) == 3  # pre-02:00 belongs to the wrap

    def test_partition_property(self):
        s = TimeRegionSchedule(span_hours=6, begin_hour=2)
        for ts in range(0, 3 * 86400, 977):
            r = s.region_of(ts)
            assert 0 <= r < 4
            abs_r = s.absolute_region(ts)
            assert s.region_start(abs_r) <= ts < s.region_start(abs_r + 1)
            assert abs_r % 4 == r

    def test_invalid_span(self):
        with pytest.raises(ConfigError):
            TimeRegionSchedule(span_hours=5)

    def test_all_spans_tile(self):
        for span in (1, 2, 3, 4, 6, 8, 12, 24):
            s = TimeRegionSchedule(span_hours=span, begin_hour=0)
            assert s.regions_per_day == 24 // span


class TestFallback:
    def test_agent_disabled_identical_to_lru(self, rng):
        config = small_config(agent_enabled=False)
        for _ in range(5):
            tr = random_trace(rng, 400, 30, max_size=6)
            cap = int(rng.integers(10, 60))
            ours = simulate(make_lrubase(config), tr, cap)
            lru = simulate("lru", tr, cap)
            assert ours.eviction_log == lru.eviction_log
            assert ours.counters == lru.counters

    def test_below_warm_threshold_identical_to_lru(self, rng):
        # threshold never reached, and day one has no trained policy anyway
        config = small_config(warm_replacements_before_agent=10**9)
        tr = random_trace(rng, 500, 40, max_size=5)
        ours = simulate(make_lrubase(config), tr, 25)
        lru = simulate("lru", tr, 25)
        assert ours.eviction_log == lru.eviction_log

    def test_stub_decider_index_zero_is_lru(self, rng):
        tr = random_trace(rng, 400, 30, max_size=5)
        cap = 25
        config = small_config(warm_replacements_before_agent=0)
        cache = LruBaseCache(cap, config)
        cache.decider = stub_decider(6, best_index=0)
        log = []
        for i, req in enumerate(tr):
            res = cache.access(req)
            log.extend((i, k) for k in res.evicted)
        lru = simulate("lru", tr, cap)
        assert log == lru.eviction_log


class TestAgentEviction:
    def test_victims_come_from_rear_section(self, rng):
        n = 4
        config = small_config(rear_n=n, warm_replacements_before_agent=0)
        cache = LruBaseCache(30, config)
        cache.decider = stub_decider(n, best_index=n - 1)
        tr = random_trace(rng, 500, 25, max_size=5)
        for req in tr:
            queue_before = [k for k, _ in cache.contents()]
            res = cache.access(req)
            # the rear window shifts as victims leave it, so the j-th victim
            # can sit at most n+j deep in the pre-access queue
            for j, victim in enumerate(res.evicted):
                assert victim in queue_before[: n + j] or victim == req.key
            assert cache.occupancy() <= 30

    def test_top_t_stops_when_it_fits(self):
        config = small_config(rear_n=4, top_t=3,
                              warm_replacements_before_agent=0)
        cache = LruBaseCache(10, config)
        cache.decider = stub_decider(4, best_index=0)
        for i, key in enumerate("abcde"):
            cache.access(Request(i, key, 2))
        # cache holds 5 x 2 bytes; a 2-byte miss needs exactly one eviction
        res = cache.access(Request(10, "f", 2))
        assert res.admitted
        assert len(res.evicted) == 1

    def test_oversized_miss_finishes_via_lru_guard(self, rng):
        config = small_config(rear_n=2, top_t=1,
                              warm_replacements_before_agent=0,
                              max_agent_rounds=2)
        cache = LruBaseCache(20, config)
        cache.decider = stub_decider(2, best_index=1)
        for i in range(10):
            cache.access(Request(i, f"k{i}", 2))
        res = cache.access(Request(20, "big", 18))
        assert res.admitted
        assert cache.occupancy() <= 20
        assert len(res.evicted) == 9


class TestTrainRegion:
    def window(self, rng, n=600):
        tr = random_trace(rng, n, 40, max_size=6)
        return [Request(r.timestamp, r.key, r.size) for r in tr]

    def test_zero_learning_rate_noop(self, rng):
        window = self.window(rng)
        config = small_config(
            hyper=AgentHyperparams(batch_size=8, min_replay=8, hidden=16,
                                   learning_rate=0.0))
        initial = init_policy(6, hidden=16, seed=7)
        trained, stats = train_region(window, config, capacity=40,
                                      n_actions=6, initial=initial, seed=3)
        for name in ("w1", "b1", "w2", "b2"):
            assert np.array_equal(getattr(trained, name), getattr(initial, name))
        assert stats.agent_steps > 0

    def test_seed_determinism(self, rng):
        window = self.window(rng)
        config = small_config()
        a, _ = train_region(window, config, 40, 6, None, seed=11)
        b, _ = train_region(window, config, 40, 6, None, seed=11)
        for name in ("w1", "b1", "w2", "b2", "feat_min", "feat_max"):
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_empty_window_returns_prior(self):
        config = small_config()
        prior = init_policy(6, hidden=16, seed=0)
        with pytest.warns(UserWarning, match="empty"):
            policy, _ = train_region([], config, 40, 6, prior, seed=0)
        assert policy is prior

    def test_normalization_frozen_from_warmup(self, rng):
        window = self.window(rng, n=900)
        config = small_config()
        policy, stats = train_region(window, config, 40, None, None, seed=5)
        assert stats.resolved_n >= 1
        assert np.all(policy.feat_max >= policy.feat_min)
        assert np.any(policy.feat_max > policy.feat_min)


class TestDayCycle:
    def two_day_trace(self):
        cfg = SyntheticConfig(
            object_count=120,
            zipf_exponent=0.9,
            size_model=("two_class", 2, 10, 0.2),
            requests_per_day=3000,
            days=2,
            diurnal_amplitude=0.4,
            seed=5,
        )
        return generate_synthetic(cfg)

    def day_config(self):
        return small_config(
            rear_n=4,
            warm_replacements_before_agent=50,
            hyper=AgentHyperparams(batch_size=8, min_replay=8, train_interval=8,
                                   hidden=16, target_sync=100),
        )

    def test_cold_start_day_one_is_lru(self):
        tr = self.two_day_trace()
        config = self.day_config()
        result = run_day_cycle(tr, config, capacity=60)
        day0 = [r for r in result.region_reports
                if r.day <= 0 and r.counters.requests]
        assert day0 and all(not r.decider_present for r in day0)

    def test_day_two_has_deciders_everywhere(self):
        tr = self.two_day_trace()
        config = self.day_config()
        result = run_day_cycle(tr, config, capacity=60)
        day1 = [r for r in result.region_reports
                if r.day == 1 and r.counters.requests]
        assert len(day1) == 4
        assert all(r.decider_present for r in day1)

    def test_handoff_only_publishes_trained_policies(self):
        tr = self.two_day_trace()
        config = self.day_config()
        cache = LruBaseCache(60, config)
        trained_ever = set()
        seen = []
        for req in tr:
            cache.access(req)
            trained_ever.update(map(id, cache._region_slots.values()))
            if cache.decider is not None:
                seen.append(id(cache.decider))
        assert seen
        assert all(p in trained_ever for p in seen)

    def test_windowed_series_length(self):
        tr = self.two_day_trace()
        config = small_config(agent_enabled=False)
        result = run_day_cycle(tr, config, capacity=60, bmr_window=1000)
        assert len(result.windowed_bmr) == 6

    def test_occupancy_never_exceeds_capacity(self):
        tr = self.two_day_trace()[:3000]
        config = self.day_config()
        cache = LruBaseCache(60, config)
        for req in tr:
            cache.access(req)
            assert cache.occupancy() <= 60
