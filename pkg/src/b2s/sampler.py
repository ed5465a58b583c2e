"""Exponential language balancing and two-stage example sampling.

Language i with N_i samples gets data share c_i = N_i / sum_j N_j and is
drawn with probability p_i = c_i^alpha / sum_j c_j^alpha. An optional target
override pins one language to a fixed probability and renormalizes the rest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import CorpusManifest, SampleRecord
from .errors import ConfigError


@dataclass(frozen=True)
class SamplingDistribution:
    alpha: float
    languages: tuple[str, ...]
    c: np.ndarray               # per-language data shares
    p: np.ndarray               # per-language sampling probabilities
    target_override: tuple[str, float] | None = None

    def prob(self, language_id: str) -> float:
        return float(self.p[self.languages.index(language_id)])


def compute_distribution(counts: dict[str, int], alpha: float,
                         target_override: tuple[str, float] | None = None,
                         ) -> SamplingDistribution:
    """Balance languages by data share raised to alpha.

    With `target_override = (lang, p_t)` the target language gets exactly p_t
    and the remaining languages share 1 - p_t in balanced proportion.
    """
    if not counts:
        raise ConfigError("empty language set")
    if alpha <= 0:
        raise ConfigError("alpha must be > 0")
    for lid, n in counts.items():
        if n < 1:
            raise ConfigError(f"{lid}: nonpositive count {n}")

    if target_override is not None:
        t_lang, p_t = target_override
        if t_lang not in counts:
            raise ConfigError(f"override language {t_lang!r} not in counts")
        if not (0.0 < p_t < 1.0):
            raise ConfigError(f"override probability {p_t} not in (0, 1)")
        sources = {k: v for k, v in counts.items() if k != t_lang}
        if not sources:
            raise ConfigError("override requires at least one source language")
        base = compute_distribution(sources, alpha)
        langs = base.languages + (t_lang,)
        total = float(sum(counts.values()))
        c = np.append(np.asarray([counts[k] for k in base.languages], dtype=np.float64) / total,
                      counts[t_lang] / total)
        p = np.append(base.p * (1.0 - p_t), p_t)
        return SamplingDistribution(alpha, langs, c, p, (t_lang, p_t))

    langs = tuple(counts.keys())
    n = np.asarray([counts[k] for k in langs], dtype=np.float64)
    c = n / n.sum()
    w = c**alpha
    p = w / w.sum()
    return SamplingDistribution(alpha, langs, c, p)


class TwoStageSampler:
    """Draw a language by p_i, then an example uniformly without replacement.

    Per-language index pools are reshuffled once exhausted (epoch windows).
    `index_pools` restricts languages to sample subsets, e.g. ablation caps
    or the short-sample seed stage.
    """

    def __init__(self, dist: SamplingDistribution, manifest: CorpusManifest,
                 rng: np.random.Generator,
                 index_pools: dict[str, list[int]] | None = None):
        missing = [l for l in dist.languages if l not in manifest.records]
        if missing:
            raise ConfigError(f"distribution covers unknown languages: {missing}")
        self.dist = dist
        self.manifest = manifest
        self.rng = rng
        self._pools: dict[str, np.ndarray] = {}
        self._queues: dict[str, list[int]] = {}
        for lid in dist.languages:
            pool = (np.asarray(index_pools[lid], dtype=np.int64)
                    if index_pools and lid in index_pools
                    else np.arange(len(manifest.records[lid]), dtype=np.int64))
            if pool.size == 0:
                raise ConfigError(f"{lid}: empty sample pool")
            self._pools[lid] = pool
        self._cum = np.cumsum(dist.p)

    def _refill(self, lid: str) -> list[int]:
        order = self._pools[lid].copy()
        self.rng.shuffle(order)
        queue = order.tolist()
        self._queues[lid] = queue
        return queue

    def sample_language(self) -> str:
        u = self.rng.random()
        k = int(np.searchsorted(self._cum, u, side="right"))
        return self.dist.languages[min(k, len(self.dist.languages) - 1)]

    def sample(self) -> SampleRecord:
        lid = self.sample_language()
        queue = self._queues.get(lid) or self._refill(lid)
        idx = queue.pop()
        return self.manifest.records[lid][idx]

    def take(self, n: int) -> list[SampleRecord]:
        return [self.sample() for _ in range(n)]
