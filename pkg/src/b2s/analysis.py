"""Language-specific sub-network analysis via first-order Taylor saliency.

A neuron's saliency on a data set is |activation x activation-gradient|,
max-pooled over sequence steps and averaged over samples. Keeping the top
half per layer yields a language-specific mask; comparing masks between
languages (and between split halves of one language) quantifies how much of
the network each pair shares.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .batcher import make_batch
from .corpus import CorpusManifest, SampleRecord, derive_rng
from .errors import ConfigError
from .metrics import MetricReport
from .model import Model
from .schedule import TrainingSchedule, LrPolicy

SALIENCY_MAGIC = b"B2SA"
SALIENCY_VERSION = 1


@dataclass
class SaliencyMap:
    language_id: str
    sample_count: int
    checkpoint_hash: str
    layers: dict[str, np.ndarray]          # layer -> (width,) float64, >= 0
    low_activity: tuple[str, ...] = ()     # layers with fewer active neurons
                                           # than a half-width mask would keep

    def validate(self):
        for name, v in self.layers.items():
            if not np.all(np.isfinite(v)) or np.any(v < 0):
                raise ValueError(f"saliency for {name} must be finite and >= 0")


@dataclass
class SaliencyMask:
    ratio: float
    layers: dict[str, np.ndarray]          # layer -> (width,) keep vector {0,1}

    def keep_count(self, layer: str) -> int:
        return int(self.layers[layer].sum())


def model_hash(model: Model) -> str:
    h = hashlib.sha256()
    for name in sorted(model.params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(model.params[name].data, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def compute_saliency(model: Model, samples: list[SampleRecord],
                     language_id: str | None = None,
                     ratio_hint: float = 0.5) -> SaliencyMap:
    """Per-neuron |h * dL/dh|, max over steps, mean over samples.

    Samples must come from a single language; the loss is the model's own
    training loss, teacher-forced, one sample at a time so pooling is exact.
    """
    if not samples:
        raise ConfigError("empty sample list")
    lang = language_id or samples[0].language_id
    if any(r.language_id != lang for r in samples):
        raise ConfigError("samples span multiple languages")
    sums: dict[str, np.ndarray] = {}
    active: dict[str, np.ndarray] = {}
    for rec in samples:
        record: dict = {}
        model.backward(make_batch([rec]), record=record)
        for name, node in record.items():
            act = node.data.astype(np.float64)
            grad = (np.zeros_like(act) if node.grad is None
                    else node.grad.astype(np.float64))
            theta = np.abs(act * grad)                    # (1, T, W) or (1, W)
            theta = theta.reshape(-1, theta.shape[-1])
            pooled = theta.max(axis=0)
            if name not in sums:
                sums[name] = np.zeros_like(pooled)
                active[name] = np.zeros(pooled.shape, dtype=bool)
            sums[name] += pooled
            active[name] |= np.any(act.reshape(-1, act.shape[-1]) != 0, axis=0)
    model.zero_grad()
    layers = {name: s / len(samples) for name, s in sums.items()}
    low = tuple(sorted(
        name for name, a in active.items()
        if int(a.sum()) < int(np.ceil(ratio_hint * a.size))
    ))
    smap = SaliencyMap(lang, len(samples), model_hash(model), layers, low)
    smap.validate()
    return smap


def build_mask(smap: SaliencyMap, ratio: float = 0.5) -> SaliencyMask:
    """Keep the top ceil(ratio x width) neurons per layer; ties to lower index."""
    if not (0.0 < ratio < 1.0):
        raise ConfigError("ratio must be in (0, 1)")
    layers = {}
    for name, sal in smap.layers.items():
        width = sal.shape[0]
        k = int(np.ceil(ratio * width))
        order = np.argsort(-sal, kind="stable")   # stable: equal values keep index order
        keep = np.zeros(width)
        keep[order[:k]] = 1.0
        layers[name] = keep
    return SaliencyMask(ratio, layers)


def random_mask(model: Model, ratio: float, rng: np.random.Generator) -> SaliencyMask:
    layers = {}
    for name in model.instrumented_layers():
        width = model.layer_width(name)
        k = int(np.ceil(ratio * width))
        keep = np.zeros(width)
        keep[rng.choice(width, size=k, replace=False)] = 1.0
        layers[name] = keep
    return SaliencyMask(ratio, layers)


def overlap(a: SaliencyMask, b: SaliencyMask) -> tuple[dict[str, float], float]:
    """Per-layer |keep(a) & keep(b)| / keep-count, plus the mean across layers."""
    if set(a.layers) != set(b.layers):
        raise ConfigError("masks cover different layers")
    per_layer = {}
    for name in a.layers:
        ka, kb = a.layers[name], b.layers[name]
        if ka.shape != kb.shape:
            raise ConfigError(f"mask shape mismatch on {name}")
        denom = max(a.keep_count(name), b.keep_count(name))
        per_layer[name] = float((ka * kb).sum() / denom)
    return per_layer, float(np.mean(list(per_layer.values())))


@dataclass
class OverlapMatrix:
    languages: tuple[str, ...]
    values: np.ndarray                     # (L, L) in [0, 1]; diagonal = split-half
    low_activity: tuple[str, ...] = ()

    def validate(self):
        if not np.allclose(self.values, self.values.T):
            raise ValueError("overlap matrix must be symmetric")
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise ValueError("overlaps must lie in [0, 1]")


def _language_samples(manifest: CorpusManifest, language_id: str, n: int,
                      seed: int) -> list[SampleRecord]:
    recs = manifest.records[language_id]
    rng = derive_rng("saliency-samples", seed, language_id)
    idx = rng.choice(len(recs), size=min(n, len(recs)), replace=False)
    return [recs[i] for i in sorted(idx)]


def overlap_matrix(model: Model, manifest: CorpusManifest,
                   languages: list[str], samples_per_language: int = 100,
                   ratio: float = 0.5, seed: int = 0,
                   layers: list[str] | None = None) -> OverlapMatrix:
    """Pairwise mask overlap; diagonal entries are split-half self-overlaps."""
    if len(languages) < 2:
        raise ConfigError("need at least two languages")
    masks: dict[str, SaliencyMask] = {}
    low: set[str] = set()
    halves: dict[str, tuple[SaliencyMask, SaliencyMask]] = {}
    for lid in languages:
        samples = _language_samples(manifest, lid, samples_per_language, seed)
        smap = compute_saliency(model, samples, lid, ratio_hint=ratio)
        low.update(smap.low_activity)
        masks[lid] = _select_layers(build_mask(smap, ratio), layers)
        mid = len(samples) // 2
        ha = compute_saliency(model, samples[:mid], lid, ratio_hint=ratio)
        hb = compute_saliency(model, samples[mid:], lid, ratio_hint=ratio)
        halves[lid] = (_select_layers(build_mask(ha, ratio), layers),
                       _select_layers(build_mask(hb, ratio), layers))
    L = len(languages)
    vals = np.zeros((L, L))
    for i, a in enumerate(languages):
        for j, b in enumerate(languages):
            if i < j:
                _, vals[i, j] = overlap(masks[a], masks[b])
                vals[j, i] = vals[i, j]
            elif i == j:
                _, vals[i, i] = overlap(*halves[a])
    mat = OverlapMatrix(tuple(languages), vals, tuple(sorted(low)))
    mat.validate()
    return mat


def _select_layers(mask: SaliencyMask, layers: list[str] | None) -> SaliencyMask:
    if layers is None:
        return mask
    missing = [l for l in layers if l not in mask.layers]
    if missing:
        raise ConfigError(f"unknown layers {missing}")
    return SaliencyMask(mask.ratio, {l: mask.layers[l] for l in layers})


def prune_and_retrain(model: Model, manifest: CorpusManifest,
                      mask_source: str, target_language: str,
                      n_samples: int, steps: int, seed: int, *,
                      ratio: float = 0.5, saliency_samples: int = 100,
                      lr: LrPolicy | None = None, frame_budget: int = 512,
                      eval_n: int = 10) -> MetricReport:
    """Prune by a language's saliency (or 'random'), then retrain on the target.

    The mask is applied permanently; retraining is monolingual on
    `target_language` restricted to its first `n_samples` records.
    """
    from . import training  # local import: training pulls no analysis symbols

    if mask_source == "random":
        mask = random_mask(model, ratio, derive_rng("random-mask", seed))
    else:
        samples = _language_samples(manifest, mask_source, saliency_samples, seed)
        mask = build_mask(compute_saliency(model, samples, mask_source,
                                           ratio_hint=ratio), ratio)
    model.set_mask(mask.layers)
    sched = TrainingSchedule(
        transitions=((0, frozenset({manifest.tier_of(target_language)})),),
        lr=lr or LrPolicy(),
        count_caps={target_language: n_samples},
    )
    rng = derive_rng("retrain", seed, mask_source, target_language)
    training.run_training(model, manifest, sched, steps, rng,
                          start_step=0, langs_filter=[target_language],
                          frame_budget=frame_budget)
    spec = manifest.specs[target_language]
    return training.evaluate_language(model, spec, eval_n, seed=derive_seed_int(seed),
                                      include_ex=False)


def derive_seed_int(seed: int) -> int:
    return int.from_bytes(hashlib.sha256(f"eval|{seed}".encode()).digest()[:4], "little")


# -- serialization ---------------------------------------------------------------


def save_saliency(smap: SaliencyMap, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(SALIENCY_MAGIC)
        fh.write(struct.pack("<I", SALIENCY_VERSION))
        meta = (f"{smap.language_id}\t{smap.sample_count}\t{smap.checkpoint_hash}\t"
                + ",".join(smap.low_activity)).encode("utf-8")
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(smap.layers)))
        for name in sorted(smap.layers):
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            arr = np.ascontiguousarray(smap.layers[name], dtype="<f8")
            fh.write(struct.pack("<I", arr.shape[0]))
            fh.write(arr.tobytes())


def load_saliency(path: Path) -> SaliencyMap:
    with open(path, "rb") as fh:
        if fh.read(4) != SALIENCY_MAGIC:
            raise ValueError(f"{path}: not a saliency map")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != SALIENCY_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        (mlen,) = struct.unpack("<I", fh.read(4))
        lang, count, chash, low = fh.read(mlen).decode("utf-8").split("\t")
        (n_layers,) = struct.unpack("<I", fh.read(4))
        layers = {}
        for _ in range(n_layers):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (width,) = struct.unpack("<I", fh.read(4))
            layers[name] = np.frombuffer(fh.read(8 * width), dtype="<f8").copy()
    return SaliencyMap(lang, int(count), chash, layers,
                       tuple(l for l in low.split(",") if l))


def matrix_to_csv(mat: OverlapMatrix) -> str:
    """Language-labelled matrix, entries as percentages with 2 decimals."""
    lines = ["language," + ",".join(mat.languages)]
    for i, lid in enumerate(mat.languages):
        row = ",".join(f"{100 * v:.2f}" for v in mat.values[i])
        lines.append(f"{lid},{row}")
    return "\n".join(lines) + "\n"
