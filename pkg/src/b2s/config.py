"""Flat experiment configuration: `key = value` files, presets, and hashing.

Values are JSON fragments (numbers, strings, lists, null). Every artifact
the runners emit embeds the config hash and seed, so a (hash, seed) pair
pins a run's numeric output exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

from .errors import ConfigError
from .schedule import (LrPolicy, TrainingSchedule, SEED_STAGE, ablation_schedule,
                       scale_schedule)

ENV_SEED = "B2S_SEED"


@dataclass
class CorpusSection:
    preset: str = "default"          # default | adaptation-study | smoke
    d_mel: int = 16
    t1_n: int = 2000
    t2_n: int = 500
    t3_n: int = 100
    target_n: int = 500
    duration: int = 3
    noise_scale: float = 0.05
    text_len: tuple[int, int] = (5, 30)


@dataclass
class SamplerSection:
    alpha: float = 0.2
    p_target: float = 0.25


@dataclass
class ScheduleSection:
    # unscaled steps; `scale` maps them to desk runs
    transitions: tuple = ((0, ("SEED",)), (30_000, ("T1",)),
                          (350_000, ("T1", "T2")), (650_000, ("T1", "T2", "T3")))
    scale: float = 1e-3
    adaptation_step: int | None = None
    lr0: float = 1e-3
    lr_end: float = 1e-5
    horizon: int = 850_000
    ablation: str | None = None
    seed_language: str | None = None
    seed_short_fraction: float = 0.5


@dataclass
class BatchSection:
    frame_budget: int = 512


@dataclass
class ModelSection:
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 2
    d_model: int = 64
    d_ff: int = 128
    postnet_layers: int = 2
    postnet_channels: int = 32
    prenet_dropout: float = 0.5
    grad_clip: float | None = 1.0
    dtype: str = "float32"


@dataclass
class TrainSection:
    steps: int = 1000
    eval_interval: float = 0.05      # fraction of steps between checkpoints


@dataclass
class AdaptSection:
    target: str | None = None        # default: the manifest's TARGET language
    n_samples: int = 10
    steps: int = 700
    eval_texts: int = 12
    eval_ex: bool = True             # include the longer-text CER-Ex pass


@dataclass
class MetricsSection:
    radius: int = 1
    threshold_fraction: float = 0.1


@dataclass
class ExperimentConfig:
    seed: int = 0
    corpus: CorpusSection = field(default_factory=CorpusSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    batch: BatchSection = field(default_factory=BatchSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    adapt: AdaptSection = field(default_factory=AdaptSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)

    def to_flat(self) -> dict:
        flat = {"seed": self.seed}
        for section in ("corpus", "sampler", "schedule", "batch", "model",
                        "train", "adapt", "metrics"):
            for key, val in asdict(getattr(self, section)).items():
                flat[f"{section}.{key}"] = val
        return flat

    def config_hash(self) -> str:
        payload = json.dumps(self.to_flat(), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def build_schedule(self, tiers: dict[str, str] | None = None,
                       counts: dict[str, int] | None = None) -> TrainingSchedule:
        """Materialize the scaled TrainingSchedule, applying any ablation."""
        s = self.schedule
        transitions = tuple((int(step), frozenset(tset if isinstance(tset, (list, tuple))
                                                  else (tset,)))
                            for step, tset in s.transitions)
        sched = TrainingSchedule(
            transitions=transitions,
            adaptation_step=s.adaptation_step,
            lr=LrPolicy(s.lr0, s.lr_end, s.horizon),
            seed_language=s.seed_language,
            seed_short_fraction=s.seed_short_fraction,
        )
        if s.ablation:
            if tiers is None or counts is None:
                raise ConfigError("ablation schedules need corpus tiers and counts")
            sched = ablation_schedule(s.ablation, sched, tiers, counts)
        return scale_schedule(sched, s.scale)


_SECTIONS = {f: cls for f, cls in (
    ("corpus", CorpusSection), ("sampler", SamplerSection),
    ("schedule", ScheduleSection), ("batch", BatchSection),
    ("model", ModelSection), ("train", TrainSection),
    ("adapt", AdaptSection), ("metrics", MetricsSection))}


def _coerce(section_cls, key: str, value):
    fields = {f.name for f in section_cls.__dataclass_fields__.values()}
    if key not in fields:
        raise ConfigError(f"unknown config key {section_cls.__name__}.{key}")
    if isinstance(value, list):
        value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return value


def from_flat(flat: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for dotted, value in flat.items():
        if dotted == "seed":
            cfg.seed = int(value)
            continue
        if "." not in dotted:
            raise ConfigError(f"unknown config key {dotted!r}")
        section, key = dotted.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        target = getattr(cfg, section)
        setattr(target, key, _coerce(type(target), key, value))
    if os.environ.get(ENV_SEED):
        try:
            cfg.seed = int(os.environ[ENV_SEED])
        except ValueError as exc:
            raise ConfigError(f"{ENV_SEED} must be an integer") from exc
    return cfg


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines; values are JSON fragments; '#' comments."""
    flat: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`")
        key, _, value = line.partition("=")
        try:
            flat[key.strip()] = json.loads(value.strip())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {lineno}: bad value {value.strip()!r}: {exc}") from exc
    return flat


def load_config(path: Path | None = None, preset: str | None = None,
                overrides: dict | None = None) -> ExperimentConfig:
    flat: dict = {}
    if preset:
        flat.update(PRESETS_FLAT()[preset])
    if path is not None:
        flat.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    if overrides:
        flat.update(overrides)
    return from_flat(flat)


def PRESETS_FLAT() -> dict[str, dict]:
    """Named experiment conditions mapped to flat config overrides."""
    adapt_common = {
        "corpus.preset": "adaptation-study",
        "corpus.d_mel": 12, "corpus.duration": 2, "corpus.text_len": [3, 5],
        "corpus.t1_n": 300, "corpus.t2_n": 120, "corpus.t3_n": 50,
        "corpus.noise_scale": 0.0,
        "model.postnet_layers": 0,
        "train.steps": 1000,
    }
    presets: dict[str, dict] = {
        "source": {},
        "source-T2-": {"schedule.ablation": "T2-"},
        "source-T3-": {"schedule.ablation": "T3-"},
        "source-T3D": {"schedule.ablation": "T3D"},
        "adapt-from-seed": {"schedule.transitions": [[0, ["SEED"]]],
                            "schedule.adaptation_step": 30_000},
        "adapt-from-t1": {"schedule.transitions": [[0, ["SEED"]], [30_000, ["T1"]]],
                          "schedule.adaptation_step": 350_000},
        "adapt-from-t2": {
            "schedule.transitions": [[0, ["SEED"]], [30_000, ["T1"]],
                                     [350_000, ["T1", "T2"]]],
            "schedule.adaptation_step": 500_000},
        "adapt-from-t3": {"schedule.adaptation_step": 700_000},
        "adapt-at-650k": {"schedule.ablation": "adapt-at(650000)"},
        "adapt-at-800k": {"schedule.ablation": "adapt-at(800000)"},
        "adapt-p0.1": {"schedule.adaptation_step": 700_000, "sampler.p_target": 0.1},
        "mono-baseline": {"schedule.transitions": [[0, ["TARGET"]]],
                          "schedule.scale": 1.0, "schedule.horizon": 850,
                          "train.steps": 800},
        "smoke": {
            "corpus.preset": "smoke", "corpus.d_mel": 12, "corpus.duration": 3,
            "corpus.text_len": [3, 8], "corpus.noise_scale": 0.0,
            "corpus.t1_n": 200,
            "schedule.transitions": [[0, ["T1"]]], "schedule.scale": 1.0,
            "schedule.horizon": 4250, "train.steps": 4000,
        },
        "adaptation-study": dict(adapt_common),
    }
    for name in ("adapt-from-seed", "adapt-from-t1", "adapt-from-t2",
                 "adapt-from-t3", "adapt-at-650k", "adapt-at-800k", "adapt-p0.1"):
        presets[name] = {**adapt_common, **presets[name]}
    return presets


def list_presets() -> list[str]:
    return sorted(PRESETS_FLAT().keys())
