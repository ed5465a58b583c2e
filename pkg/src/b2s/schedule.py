"""Tier-wise progressive schedules, adaptation timing, and LR decay with resets.

The canonical source run starts on short samples of one seed language, adds
tier T1, then T2, then T3 at fixed steps. The learning rate decays
exponentially between resets; the step counter resets at every tier
transition and at adaptation start.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import ConfigError

SEED_STAGE = "SEED"

# unscaled defaults: seed stage 30k, T2 at 350k, T3 at 650k, decay over 850k
DEFAULT_TRANSITIONS = ((0, frozenset({SEED_STAGE})),
                       (30_000, frozenset({"T1"})),
                       (350_000, frozenset({"T1", "T2"})),
                       (650_000, frozenset({"T1", "T2", "T3"})))
DESK_SCALE = 1e-3


@dataclass(frozen=True)
class LrPolicy:
    lr0: float = 1e-3
    lr_end: float = 1e-5
    horizon: int = 850_000

    def __post_init__(self):
        if self.lr0 <= 0 or self.lr_end <= 0 or self.horizon < 1:
            raise ConfigError("invalid LR policy")


def learning_rate(policy: LrPolicy, step_since_reset: int) -> float:
    """Exponential decay from lr0 to lr_end over the horizon; clamped after."""
    if step_since_reset < 0:
        raise ValueError("step_since_reset must be >= 0")
    if step_since_reset == 0:
        return policy.lr0
    if step_since_reset >= policy.horizon:
        return policy.lr_end
    ratio = policy.lr_end / policy.lr0
    return policy.lr0 * ratio ** (step_since_reset / policy.horizon)


@dataclass(frozen=True)
class TrainingSchedule:
    """Ordered (step, active tier set) transitions plus adaptation timing."""

    transitions: tuple[tuple[int, frozenset[str]], ...] = DEFAULT_TRANSITIONS
    adaptation_step: int | None = None
    lr: LrPolicy = field(default_factory=LrPolicy)
    seed_language: str | None = None
    count_caps: dict[str, int] | None = None
    seed_short_fraction: float = 0.5

    def __post_init__(self):
        if not self.transitions:
            raise ConfigError("schedule needs at least one transition")
        steps = [s for s, _ in self.transitions]
        if steps != sorted(steps) or len(set(steps)) != len(steps):
            raise ConfigError("transition steps must be strictly increasing")
        if steps[0] != 0:
            raise ConfigError("first transition must start at step 0")


def active_tiers(schedule: TrainingSchedule, step: int) -> frozenset[str]:
    if step < 0:
        raise ValueError("step must be >= 0")
    active = schedule.transitions[0][1]
    for s, tiers in schedule.transitions:
        if s <= step:
            active = tiers
        else:
            break
    return active


def active_languages(schedule: TrainingSchedule, manifest, step: int) -> list[str]:
    """Language set at `step`: tier members plus the target once adaptation starts."""
    tiers = active_tiers(schedule, step)
    langs: list[str] = []
    if SEED_STAGE in tiers:
        seed = schedule.seed_language or manifest.languages(("T1",))[0]
        langs.append(seed)
    langs += [l for l in manifest.languages(sorted(tiers - {SEED_STAGE}))
              if l not in langs]
    if schedule.adaptation_step is not None and step >= schedule.adaptation_step:
        langs += [l for l in manifest.languages(("TARGET",)) if l not in langs]
    return langs


def reset_points(schedule: TrainingSchedule) -> set[int]:
    """Steps at which the LR counter snaps back to zero."""
    points = {s for s, _ in schedule.transitions if s > 0}
    if schedule.adaptation_step is not None and schedule.adaptation_step > 0:
        points.add(schedule.adaptation_step)
    return points or {0}


def last_reset(schedule: TrainingSchedule, step: int) -> int:
    eligible = [p for p in reset_points(schedule) if 0 < p <= step]
    return max(eligible, default=0)


def learning_rate_at(schedule: TrainingSchedule, step: int) -> float:
    return learning_rate(schedule.lr, step - last_reset(schedule, step))


def scale_schedule(schedule: TrainingSchedule, scale: float) -> TrainingSchedule:
    """Multiply all step fields by `scale` (desk runs use 1/1000)."""
    if scale <= 0:
        raise ConfigError("scale must be > 0")
    scaled = tuple((round(s * scale), tiers) for s, tiers in schedule.transitions)
    adapt = (None if schedule.adaptation_step is None
             else round(schedule.adaptation_step * scale))
    lr = LrPolicy(schedule.lr.lr0, schedule.lr.lr_end,
                  max(1, round(schedule.lr.horizon * scale)))
    return replace(schedule, transitions=scaled, adaptation_step=adapt, lr=lr)


def _downsample_caps(counts: dict[str, int], target_total: int) -> dict[str, int]:
    """Largest-remainder truncation: caps sum to target_total exactly."""
    total = sum(counts.values())
    if target_total > total:
        raise ConfigError(
            f"downsample target {target_total} larger than available {total}"
        )
    exact = {lid: n * target_total / total for lid, n in counts.items()}
    caps = {lid: math.floor(v) for lid, v in exact.items()}
    rest = target_total - sum(caps.values())
    order = sorted(counts, key=lambda lid: exact[lid] - caps[lid], reverse=True)
    for lid in order[:rest]:
        caps[lid] += 1
    if any(v < 1 for v in caps.values()):
        raise ConfigError("downsampling would remove a language entirely")
    return caps


def ablation_schedule(kind: str, base: TrainingSchedule,
                      tiers: dict[str, str], counts: dict[str, int],
                      ) -> TrainingSchedule:
    """Comparative-study variants of a base schedule.

    T2-: keep T1+T2 languages but cap their total to the original T1 total.
    T3-: from the T2 transition switch to T2(+T3) languages capped to the
         original T2 tier total (T1 leaves the mix).
    T3D: all tiers active from step 0 (no progression).
    adapt-at(step): move the adaptation step.
    """
    by_step = dict(base.transitions)
    steps = sorted(by_step)
    if kind in ("T2-", "T3-") and len(steps) < (3 if kind == "T2-" else 4):
        raise ConfigError(f"{kind} needs the full progressive transition set")

    def tier_counts(sel: tuple[str, ...]) -> dict[str, int]:
        return {lid: n for lid, n in counts.items() if tiers.get(lid) in sel}

    if kind == "T2-":
        t1_total = sum(tier_counts(("T1",)).values())
        caps = _downsample_caps(tier_counts(("T1", "T2")), t1_total)
        transitions = tuple((s, t) for s, t in base.transitions
                            if not t.issuperset({"T3"}))
        return replace(base, transitions=transitions, count_caps=caps)

    if kind == "T3-":
        t2_total = sum(tier_counts(("T2",)).values())
        caps = _downsample_caps(tier_counts(("T2", "T3")), t2_total)
        transitions = []
        for s, t in base.transitions:
            if t.issuperset({"T2", "T3"}):
                transitions.append((s, frozenset({"T2", "T3"})))
            elif "T2" in t:
                transitions.append((s, frozenset({"T2"})))
            else:
                transitions.append((s, t))
        return replace(base, transitions=tuple(transitions), count_caps=caps)

    if kind == "T3D":
        full = base.transitions[-1][1] - {SEED_STAGE}
        return replace(base, transitions=((0, frozenset(full)),))

    if kind.startswith("adapt-at(") and kind.endswith(")"):
        step = int(kind[len("adapt-at("):-1])
        return replace(base, adaptation_step=step)

    raise ConfigError(f"unknown ablation kind {kind!r}")
