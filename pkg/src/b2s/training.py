"""Shared training loop and evaluation helpers.

The loop re-derives the active language set from the schedule each step,
rebuilds the sampler/packer on changes, applies ablation count caps, keeps
the seed stage on the shortest samples of the seed language, and feeds the
learning rate from the schedule's reset-aware policy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import batcher, metrics, sampler, schedule as sched_mod
from .corpus import CorpusManifest, SyntheticLanguageSpec, generate_language, oracle_recognize
from .errors import ConfigError
from .model import Model, LossBreakdown
from .schedule import TrainingSchedule, SEED_STAGE


@dataclass
class StepRecord:
    step: int
    lr: float
    loss: LossBreakdown
    active: tuple[str, ...]


def _pools_for(manifest: CorpusManifest, schedule: TrainingSchedule,
               active: list[str], tiers_now: frozenset[str],
               target_pool: int | None) -> tuple[dict[str, list[int]], dict[str, int]]:
    caps = schedule.count_caps or {}
    counts_all = manifest.counts()
    pools: dict[str, list[int]] = {}
    counts: dict[str, int] = {}
    seed_lang = schedule.seed_language or (manifest.languages(("T1",)) or [None])[0]
    for lid in active:
        n = min(counts_all[lid], caps.get(lid, counts_all[lid]))
        if target_pool is not None and manifest.tier_of(lid) == "TARGET":
            n = min(n, target_pool)
        idx = list(range(n))
        if (tiers_now == frozenset({SEED_STAGE}) and len(active) == 1
                and lid == seed_lang):
            # pre-adaptation seed stage trains on the shortest seed samples
            recs = manifest.records[lid]
            order = sorted(idx, key=lambda i: (recs[i].frames.shape[0], i))
            keep = max(1, int(len(order) * schedule.seed_short_fraction))
            idx = sorted(order[:keep])
        pools[lid] = idx
        counts[lid] = len(idx)
    return pools, counts


def run_training(model: Model, manifest: CorpusManifest, schedule: TrainingSchedule,
                 steps: int, rng: np.random.Generator, *,
                 start_step: int | None = None, alpha: float = 0.2,
                 p_target: float | None = None, frame_budget: int = 512,
                 langs_filter: list[str] | None = None,
                 target_pool: int | None = None,
                 hook: Callable[[StepRecord], None] | None = None,
                 ) -> list[StepRecord]:
    """Advance `model` by `steps` training steps under `schedule`."""
    if steps < 0:
        raise ConfigError("steps must be >= 0")
    begin = model.step if start_step is None else start_step
    packer = None
    cur_key = None
    history: list[StepRecord] = []
    for step in range(begin, begin + steps):
        tiers_now = sched_mod.active_tiers(schedule, step)
        active = sched_mod.active_languages(schedule, manifest, step)
        if langs_filter is not None:
            active = [l for l in active if l in langs_filter]
        if not active:
            raise ConfigError(f"no active languages at step {step}")
        key = (tiers_now, tuple(active))
        if key != cur_key:
            cur_key = key
            pools, counts = _pools_for(manifest, schedule, active, tiers_now,
                                       target_pool)
            override = None
            if p_target is not None and len(active) > 1:
                targets = [l for l in active if manifest.tier_of(l) == "TARGET"]
                if targets:
                    override = (targets[0], p_target)
            dist = sampler.compute_distribution(counts, alpha=alpha,
                                                target_override=override)
            smp = sampler.TwoStageSampler(dist, manifest, rng, index_pools=pools)
            packer = batcher.pack(iter(smp.sample, None), frame_budget)
        lr = sched_mod.learning_rate_at(schedule, step)
        detail = model.train_step(next(packer), lr)
        rec = StepRecord(step, lr, detail, tuple(active))
        history.append(rec)
        if hook is not None:
            hook(rec)
    return history


def unvoiced_threshold(refs: list[np.ndarray], fraction: float = 0.1) -> float:
    """Default energy threshold: a fraction of the median reference frame norm."""
    norms = np.concatenate([np.linalg.norm(r, axis=1) for r in refs])
    return float(fraction * np.median(norms))


def evaluate_language(model: Model, spec: SyntheticLanguageSpec, n: int,
                      seed: int, *, max_frames: int = 200, radius: int = 1,
                      ex_scale: int = 3, include_ex: bool = True,
                      ) -> metrics.MetricReport:
    """Held-out evaluation: oracle CER, CER-Ex on longer texts, and DTW-MSE."""
    recs = generate_language(spec, n, seed=seed, namespace="eval")
    threshold = unvoiced_threshold([r.frames for r in recs])
    cers, mses = [], []
    for r in recs:
        out = model.synthesize(r.text, spec.language_id, r.speaker_id,
                               max_frames=max_frames)
        hyp = oracle_recognize(out.frames, spec)
        cers.append(metrics.cer(hyp, r.phoneme_ref))
        mses.append(metrics.dtw_mse(out.frames, r.frames, threshold, radius))
    cers_ex: list[float] = []
    if include_ex:
        lo, hi = spec.text_len
        ex_recs = generate_language(spec, n, seed=seed, namespace="eval-ex",
                                    text_len=(lo * ex_scale, hi * ex_scale))
        for r in ex_recs:
            out = model.synthesize(r.text, spec.language_id, r.speaker_id,
                                   max_frames=max_frames * ex_scale)
            hyp = oracle_recognize(out.frames, spec)
            cers_ex.append(metrics.cer(hyp, r.phoneme_ref))
    return metrics.MetricReport.from_samples(spec.language_id, cers, cers_ex, mses)
