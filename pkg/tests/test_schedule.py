import numpy as np
import pytest

from b2s.errors import ConfigError
from b2s.schedule import (DEFAULT_TRANSITIONS, LrPolicy, TrainingSchedule,
                          ablation_schedule, active_languages, active_tiers,
                          last_reset, learning_rate, learning_rate_at,
                          reset_points, scale_schedule)


def test_lr_endpoints_exact():
    pol = LrPolicy(1e-3, 1e-5, 850_000)
    assert learning_rate(pol, 0) == 1e-3
    assert learning_rate(pol, 850_000) == 1e-5
    assert learning_rate(pol, 2_000_000) == 1e-5


def test_lr_geometric_midpoint():
    pol = LrPolicy(1e-3, 1e-5, 850_000)
    assert learning_rate(pol, 425_000) == pytest.approx(1e-4, rel=1e-12)


def test_lr_strictly_decreasing():
    pol = LrPolicy(1e-3, 1e-5, 1000)
    values = [learning_rate(pol, t) for t in range(0, 1001, 50)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_active_tiers_default_table():
    sched = TrainingSchedule()
    assert active_tiers(sched, 0) == frozenset({"SEED"})
    assert active_tiers(sched, 29_999) == frozenset({"SEED"})
    assert active_tiers(sched, 30_000) == frozenset({"T1"})
    assert active_tiers(sched, 400_000) == frozenset({"T1", "T2"})
    assert active_tiers(sched, 650_000) == frozenset({"T1", "T2", "T3"})


def test_active_languages_with_manifest(tiny_manifest):
    sched = TrainingSchedule()
    at0 = active_languages(sched, tiny_manifest, 0)
    assert at0 == [tiny_manifest.languages(("T1",))[0]]
    scaled = scale_schedule(sched, 1e-3)
    at651 = active_languages(scaled, tiny_manifest, 651)
    assert set(at651) == set(tiny_manifest.languages(("T1", "T2", "T3")))


def test_target_joins_at_adaptation(tiny_manifest):
    sched = scale_schedule(TrainingSchedule(adaptation_step=700_000), 1e-3)
    assert "mix-t" not in active_languages(sched, tiny_manifest, 699)
    assert "mix-t" in active_languages(sched, tiny_manifest, 700)


def test_reset_points():
    assert reset_points(TrainingSchedule()) == {30_000, 350_000, 650_000}
    adapted = TrainingSchedule(
        transitions=((0, frozenset({"SEED"})), (30_000, frozenset({"T1"})),
                     (350_000, frozenset({"T1", "T2"})),
                     (700_000, frozenset({"T1", "T2", "T3"}))),
        adaptation_step=500_000)
    assert reset_points(adapted) == {30_000, 350_000, 500_000, 700_000}
    bare = TrainingSchedule(transitions=((0, frozenset({"T1"})),))
    assert reset_points(bare) == {0}


def test_lr_resets_at_transitions():
    sched = scale_schedule(TrainingSchedule(), 1e-3)
    for r in (30, 350, 650):
        assert learning_rate_at(sched, r) == sched.lr.lr0
        assert learning_rate_at(sched, r + 1) < sched.lr.lr0
        assert learning_rate_at(sched, r - 1) < sched.lr.lr0
    assert last_reset(sched, 29) == 0
    assert last_reset(sched, 400) == 350


def test_scaling_property(tiny_manifest):
    base = TrainingSchedule()
    k = 1000
    scaled = scale_schedule(base, 1 / k)
    for m in (0, 29, 30, 31, 349, 350, 651, 900):
        assert active_languages(scaled, tiny_manifest, m) == \
            active_languages(base, tiny_manifest, k * m)


def test_monotone_nondecreasing_default(tiny_manifest):
    sched = scale_schedule(TrainingSchedule(adaptation_step=700_000), 1e-3)
    prev: set = set()
    for step in range(0, 900, 7):
        cur = set(active_languages(sched, tiny_manifest, step))
        assert prev.issubset(cur)
        prev = cur


def _counts_tiers(tiny_manifest):
    tiers = {e["language_id"]: e["tier"] for e in tiny_manifest.entries}
    return tiny_manifest.counts(), tiers


def test_ablation_t2_minus(tiny_manifest):
    counts, tiers = _counts_tiers(tiny_manifest)
    sched = ablation_schedule("T2-", TrainingSchedule(), tiers, counts)
    t1_total = sum(n for l, n in counts.items() if tiers[l] == "T1")
    capped = {l: n for l, n in sched.count_caps.items()}
    assert sum(capped.values()) == t1_total
    t2_langs = [l for l in capped if tiers[l] == "T2"]
    assert t2_langs and all(capped[l] >= 1 for l in t2_langs)
    assert all("T3" not in ts for _, ts in sched.transitions)


def test_ablation_t3_minus(tiny_manifest):
    counts, tiers = _counts_tiers(tiny_manifest)
    sched = ablation_schedule("T3-", TrainingSchedule(), tiers, counts)
    t2_total = sum(n for l, n in counts.items() if tiers[l] == "T2")
    assert sum(sched.count_caps.values()) == t2_total
    final = sched.transitions[-1][1]
    assert final == frozenset({"T2", "T3"})


def test_ablation_t3d():
    sched = ablation_schedule("T3D", TrainingSchedule(), {}, {})
    assert sched.transitions == ((0, frozenset({"T1", "T2", "T3"})),)
    assert "T3" in active_tiers(sched, 0)


def test_ablation_adapt_at():
    sched = ablation_schedule("adapt-at(650000)", TrainingSchedule(), {}, {})
    assert sched.adaptation_step == 650_000
    sched = ablation_schedule("adapt-at(800000)", TrainingSchedule(), {}, {})
    assert sched.adaptation_step == 800_000


def test_downsample_too_large():
    from b2s.schedule import _downsample_caps
    with pytest.raises(ConfigError, match="larger than available"):
        _downsample_caps({"a": 5, "b": 3}, 100)
    caps = _downsample_caps({"a": 50, "b": 30, "c": 20}, 60)
    assert sum(caps.values()) == 60
    assert caps == {"a": 30, "b": 18, "c": 12}


def test_unknown_ablation():
    with pytest.raises(ConfigError, match="unknown ablation"):
        ablation_schedule("T9", TrainingSchedule(), {}, {})


def test_transition_validation():
    with pytest.raises(ConfigError):
        TrainingSchedule(transitions=((5, frozenset({"T1"})),))
    with pytest.raises(ConfigError):
        TrainingSchedule(transitions=((0, frozenset({"T1"})),
                                      (0, frozenset({"T2"}))))
