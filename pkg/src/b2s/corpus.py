"""Tiered synthetic-language corpora with an exact oracle recognizer.

Every language is generated from an explicit grapheme-to-phoneme table over a
shared phoneme inventory, so intelligibility can be scored without any ASR:
frames are classified against per-phoneme signature vectors. Language
similarity is controlled by the fraction of shared (grapheme, phoneme) pairs.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError

TIERS = ("T1", "T2", "T3", "TARGET")

FRAMES_MAGIC = b"B2SF"
FRAMES_VERSION = 1

# script blocks by UTF-8 width, so the multi-byte tokenizer path is exercised
LATIN = tuple(chr(c) for c in range(0x61, 0x7B))            # 1 byte
GREEK = tuple(chr(c) for c in range(0x3B1, 0x3CA))          # 2 bytes
CYRILLIC = tuple(chr(c) for c in range(0x430, 0x450))       # 2 bytes
KANA = tuple(chr(c) for c in range(0x3041, 0x3097))         # 3 bytes
CJK = tuple(chr(c) for c in range(0x4E00, 0x4E80))          # 3 bytes

PRE_TRANSFORMS: dict[str, Callable[[str], str]] = {}


def register_pre_transform(name: str, fn: Callable[[str], str]) -> None:
    PRE_TRANSFORMS[name] = fn


def derive_rng(*parts) -> np.random.Generator:
    """Deterministic RNG stream keyed by arbitrary parts (stable across runs)."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))


@dataclass
class SampleRecord:
    language_id: str
    speaker_id: str
    text: str
    frames: np.ndarray          # (T_out, D_mel) float32
    phoneme_ref: tuple[int, ...]

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError("frames must be (T_out >= 1, D_mel)")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frames must be finite")


@dataclass(eq=False)
class SyntheticLanguageSpec:
    """Recipe for one deterministic synthetic language."""

    language_id: str
    script: tuple[str, ...]
    g2p: dict[str, int]
    duration: int
    signatures: dict[int, np.ndarray]   # phoneme ID -> (D_mel,) target vector
    speakers: tuple[str, ...]
    speaker_offset_scale: float = 0.1
    noise_scale: float = 0.0
    text_len: tuple[int, int] = (5, 30)
    pre_transform: str | None = None

    def __post_init__(self):
        if self.duration < 1:
            raise ConfigError(f"{self.language_id}: duration must be >= 1")
        missing = [g for g in self.script if g not in self.g2p]
        if missing:
            raise ConfigError(f"{self.language_id}: g2p not total over script: {missing[:3]}")
        for p in set(self.g2p.values()):
            if p not in self.signatures:
                raise ConfigError(f"{self.language_id}: no signature for phoneme {p}")
        phonemes = sorted(set(self.g2p.values()))
        if len(phonemes) > 1:
            min_d = min_pairwise_distance(np.stack([self.signatures[p] for p in phonemes]))
            if self.noise_scale > 0 and min_d <= 4.0 * self.noise_scale:
                raise ConfigError(
                    f"{self.language_id}: signature separation {min_d:.3f} too small "
                    f"for noise scale {self.noise_scale}"
                )

    @property
    def d_mel(self) -> int:
        return len(next(iter(self.signatures.values())))

    def phoneme_ids(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.g2p.values())))

    def signature_matrix(self) -> tuple[np.ndarray, tuple[int, ...]]:
        ids = self.phoneme_ids()
        return np.stack([self.signatures[p] for p in ids]), ids


def min_pairwise_distance(vectors: np.ndarray) -> float:
    d = np.linalg.norm(vectors[:, None, :] - vectors[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    return float(d.min())


def shared_pair_fraction(a: SyntheticLanguageSpec, b: SyntheticLanguageSpec) -> float:
    """Fraction of a's (grapheme, phoneme) pairs also present in b."""
    pairs_a = set(a.g2p.items())
    pairs_b = set(b.g2p.items())
    return len(pairs_a & pairs_b) / len(pairs_a)


def speaker_offset(spec: SyntheticLanguageSpec, speaker_id: str) -> np.ndarray:
    rng = derive_rng("speaker-offset", spec.language_id, speaker_id)
    off = rng.normal(0.0, spec.speaker_offset_scale, size=spec.d_mel)
    return off.astype(np.float32)


def _draw_text(spec: SyntheticLanguageSpec, rng: np.random.Generator,
               text_len: tuple[int, int]) -> str:
    lo, hi = text_len
    n = int(rng.integers(lo, hi + 1))
    out: list[str] = []
    prev_ph = None
    for _ in range(n):
        # exclude graphemes repeating the previous phoneme so the oracle's
        # duplicate collapse is lossless on clean frames (falls back to the
        # full script for degenerate single-phoneme languages)
        pool = (spec.script if prev_ph is None
                else [g for g in spec.script if spec.g2p[g] != prev_ph]
                or list(spec.script))
        g = pool[int(rng.integers(0, len(pool)))]
        out.append(g)
        prev_ph = spec.g2p[g]
    return "".join(out)


def render_frames(spec: SyntheticLanguageSpec, phonemes, speaker_id: str,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Frames = duration copies of each phoneme signature + speaker offset + noise."""
    rows = np.concatenate(
        [np.tile(spec.signatures[p], (spec.duration, 1)) for p in phonemes]
    ).astype(np.float32)
    rows = rows + speaker_offset(spec, speaker_id)
    if spec.noise_scale > 0 and rng is not None:
        rows = rows + rng.normal(0.0, spec.noise_scale, size=rows.shape).astype(np.float32)
    return rows.astype(np.float32)


def generate_language(spec: SyntheticLanguageSpec, n: int, seed: int,
                      text_len: tuple[int, int] | None = None,
                      namespace: str = "train") -> list[SampleRecord]:
    """Generate n records, deterministic in (spec, n, seed, namespace)."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    lens = text_len or spec.text_len
    transform = PRE_TRANSFORMS.get(spec.pre_transform) if spec.pre_transform else None
    records = []
    for i in range(n):
        rng = derive_rng(seed, spec.language_id, namespace, i)
        speaker = spec.speakers[int(rng.integers(0, len(spec.speakers)))]
        raw = _draw_text(spec, rng, lens)
        phonemes = tuple(spec.g2p[g] for g in raw)
        frames = render_frames(spec, phonemes, speaker, rng)
        text = transform(raw) if transform else raw
        records.append(SampleRecord(spec.language_id, speaker, text, frames, phonemes))
    return records


def oracle_recognize(frames: np.ndarray, spec: SyntheticLanguageSpec) -> tuple[int, ...]:
    """Nearest-signature class per frame, consecutive duplicates collapsed."""
    if not np.all(np.isfinite(frames)):
        raise ValueError("frames must be finite")
    mat, ids = spec.signature_matrix()
    d2 = ((frames[:, None, :].astype(np.float64) - mat[None, :, :]) ** 2).sum(axis=-1)
    nearest = d2.argmin(axis=1)
    out: list[int] = []
    for k in nearest:
        p = ids[int(k)]
        if not out or out[-1] != p:
            out.append(p)
    return tuple(out)


# -- corpus assembly ----------------------------------------------------------


@dataclass
class LanguageConfig:
    spec: SyntheticLanguageSpec
    tier: str
    n: int

    def __post_init__(self):
        if self.tier not in TIERS:
            raise ConfigError(f"unknown tier {self.tier!r}")
        if self.n < 1:
            raise ConfigError(f"{self.spec.language_id}: N must be >= 1")


@dataclass
class CorpusManifest:
    """Per-language sample inventory with tier labels."""

    entries: list[dict] = field(default_factory=list)   # language_id, tier, n, speakers
    records: dict[str, list[SampleRecord]] = field(default_factory=dict)
    specs: dict[str, SyntheticLanguageSpec] = field(default_factory=dict)
    seed: int = 0

    def languages(self, tiers=None) -> list[str]:
        if tiers is None:
            return [e["language_id"] for e in self.entries]
        return [e["language_id"] for e in self.entries if e["tier"] in tiers]

    def tier_of(self, language_id: str) -> str:
        for e in self.entries:
            if e["language_id"] == language_id:
                return e["tier"]
        raise KeyError(language_id)

    def counts(self) -> dict[str, int]:
        return {e["language_id"]: e["n"] for e in self.entries}

    def validate(self) -> None:
        for e in self.entries:
            got = len(self.records[e["language_id"]])
            if got != e["n"]:
                raise ValueError(
                    f"{e['language_id']}: index size {got} != declared N {e['n']}"
                )


def build_tiered_corpus(languages: list[LanguageConfig], seed: int) -> CorpusManifest:
    """Generate all listed languages into one manifest."""
    if not languages:
        raise ConfigError("empty language list")
    seen = set()
    for lc in languages:
        lid = lc.spec.language_id
        if lid in seen:
            raise ConfigError(f"duplicate language_id {lid!r}")
        seen.add(lid)
    manifest = CorpusManifest(seed=seed)
    for lc in languages:
        lid = lc.spec.language_id
        manifest.entries.append(
            {"language_id": lid, "tier": lc.tier, "n": lc.n, "speakers": list(lc.spec.speakers)}
        )
        manifest.records[lid] = generate_language(lc.spec, lc.n, seed)
        manifest.specs[lid] = lc.spec
    manifest.validate()
    return manifest


# -- default desk-scale corpus -------------------------------------------------


def make_inventory(n_phonemes: int, d_mel: int, seed: int, scale: float = 1.0,
                   min_separation: float = 0.5) -> np.ndarray:
    """Random per-phoneme signature vectors with enforced separation.

    Vectors from the closest pair are resampled until every pairwise distance
    exceeds `min_separation` x scale.
    """
    rng = derive_rng("inventory", seed)
    inv = rng.normal(0.0, scale, size=(n_phonemes, d_mel))
    for _ in range(10_000):
        d = np.linalg.norm(inv[:, None, :] - inv[None, :, :], axis=-1)
        np.fill_diagonal(d, np.inf)
        i, j = np.unravel_index(int(d.argmin()), d.shape)
        if d[i, j] > min_separation * scale:
            return inv.astype(np.float32)
        inv[j] = rng.normal(0.0, scale, size=d_mel)
    raise RuntimeError("could not draw a separated inventory; raise d_mel")


def _spec_from_pairs(language_id, pairs, inventory, duration, speakers,
                     noise_scale, text_len, speaker_offset_scale=0.1,
                     pre_transform=None) -> SyntheticLanguageSpec:
    g2p = dict(pairs)
    sigs = {p: np.asarray(inventory[p], dtype=np.float32) for p in set(g2p.values())}
    return SyntheticLanguageSpec(
        language_id=language_id,
        script=tuple(g2p.keys()),
        g2p=g2p,
        duration=duration,
        signatures=sigs,
        speakers=tuple(speakers),
        speaker_offset_scale=speaker_offset_scale,
        noise_scale=noise_scale,
        text_len=text_len,
        pre_transform=pre_transform,
    )


def make_family(prefix: str, block: tuple[str, ...], phoneme_pool, inventory,
                members: list[str], share: float, seed: int, n_graphemes: int = 16,
                many_to_one: bool = False, duration: int = 3, noise_scale: float = 0.05,
                text_len: tuple[int, int] = (5, 30), speakers_per_language: int = 2,
                ) -> list[SyntheticLanguageSpec]:
    """Build related languages sharing ~`share` of (grapheme, phoneme) pairs.

    Member 0 is the family base; each later member keeps a random `share`
    fraction of the base table and rewires the rest onto fresh graphemes
    drawn from the same script block. With many_to_one, several graphemes
    may map to one phoneme (logogram-style opaque orthography).
    """
    rng = derive_rng("family", prefix, seed)
    pool = list(phoneme_pool)
    free = [c for c in block]
    rng.shuffle(free)

    def draw_graphemes(k):
        if len(free) < k:
            raise ConfigError(f"family {prefix}: script block exhausted")
        return [free.pop() for _ in range(k)]

    base_graphemes = draw_graphemes(n_graphemes)
    base_phonemes = list(rng.choice(pool, size=n_graphemes, replace=many_to_one))
    base_pairs = list(zip(base_graphemes, (int(p) for p in base_phonemes)))

    specs = []
    for j, name in enumerate(members):
        lid = f"{prefix}{name}"
        speakers = tuple(f"{lid}-sp{k}" for k in range(speakers_per_language))
        if j == 0:
            pairs = list(base_pairs)
        else:
            keep = max(1, round(share * n_graphemes))
            idx = sorted(rng.choice(n_graphemes, size=keep, replace=False))
            pairs = [base_pairs[i] for i in idx]
            fresh_g = draw_graphemes(n_graphemes - keep)
            used = {p for _, p in pairs}
            fresh_pool = [p for p in pool if p not in used] or pool
            fresh_p = rng.choice(fresh_pool, size=n_graphemes - keep, replace=many_to_one or len(fresh_pool) < n_graphemes - keep)
            pairs += list(zip(fresh_g, (int(p) for p in fresh_p)))
        specs.append(
            _spec_from_pairs(lid, pairs, inventory, duration, speakers, noise_scale, text_len)
        )
    return specs


def default_corpus_config(seed: int = 0, d_mel: int = 16, t1_n: int = 2000,
                          t2_n: int = 500, t3_n: int = 100, target_n: int = 500,
                          duration: int = 3, noise_scale: float = 0.05,
                          text_len: tuple[int, int] = (5, 30)) -> list[LanguageConfig]:
    """Desk-scale default: 2 T1 + 3 T2 + 4 T3 source languages + 1 target.

    Families mirror the qualitative source/target taxonomy: a Latin family
    (the target joins it with partial overlap), a Greek family of two-byte
    letters, a Cyrillic family, and an opaque three-byte logographic family.
    """
    inventory = make_inventory(48, d_mel, seed)
    kw = dict(inventory=inventory, seed=seed, duration=duration,
              noise_scale=noise_scale, text_len=text_len)
    lat = make_family("lat-", LATIN, range(0, 20), members=["a", "b", "c", "t"],
                      share=0.8, n_graphemes=14, **kw)
    grk = make_family("grk-", GREEK, range(14, 32), members=["a", "b"],
                      share=0.8, **kw)
    cyr = make_family("cyr-", CYRILLIC, range(26, 44), members=["a", "b"],
                      share=0.8, **kw)
    cjk = make_family("cjk-", CJK, range(36, 48), members=["a", "b"],
                      share=0.8, n_graphemes=24, many_to_one=True, **kw)
    lat_a, lat_b, lat_c, lat_t = lat
    return [
        LanguageConfig(lat_a, "T1", t1_n),
        LanguageConfig(grk[0], "T1", t1_n),
        LanguageConfig(lat_b, "T2", t2_n),
        LanguageConfig(grk[1], "T2", t2_n),
        LanguageConfig(cyr[0], "T2", t2_n),
        LanguageConfig(lat_c, "T3", t3_n),
        LanguageConfig(cyr[1], "T3", t3_n),
        LanguageConfig(cjk[0], "T3", t3_n),
        LanguageConfig(cjk[1], "T3", t3_n),
        LanguageConfig(lat_t, "TARGET", target_n),
    ]


def smoke_corpus_config(seed: int = 0, d_mel: int = 12, n: int = 200,
                        duration: int = 3, noise_scale: float = 0.0,
                        text_len: tuple[int, int] = (3, 8)) -> list[LanguageConfig]:
    """One clean ASCII language: the end-to-end trainability check."""
    inventory = make_inventory(12, d_mel, seed)
    pairs = [(LATIN[i], i) for i in range(10)]
    spec = _spec_from_pairs("smoke", pairs, inventory, duration,
                            speakers=("smoke-sp0",), noise_scale=noise_scale,
                            text_len=text_len)
    return [LanguageConfig(spec, "T1", n)]


def adaptation_study_config(seed: int = 0, d_mel: int = 12, t1_n: int = 300,
                            t2_n: int = 120, t3_n: int = 50, target_n: int = 520,
                            duration: int = 2, noise_scale: float = 0.0,
                            text_len: tuple[int, int] = (3, 5)) -> list[LanguageConfig]:
    """Nine alphabetic sources in four script families plus a mixed-script target.

    The target's table is drawn piecewise from one source per family, so the
    union of sources covers it fully while the largest single-source slice
    (lat-a) covers only five pairs: the setup that separates diverse-source
    adaptation from similar-source co-training and from monolingual training.
    """
    inventory = make_inventory(56, d_mel, seed)
    kw = dict(inventory=inventory, seed=seed, duration=duration,
              noise_scale=noise_scale, text_len=text_len)
    lat = make_family("lat-", LATIN, range(0, 14), members=["a", "b", "c"],
                      share=0.8, n_graphemes=10, **kw)
    grk = make_family("grk-", GREEK, range(14, 28), members=["a", "b"],
                      share=0.8, n_graphemes=10, **kw)
    cyr = make_family("cyr-", CYRILLIC, range(28, 42), members=["a", "b"],
                      share=0.8, n_graphemes=10, **kw)
    hira = make_family("hira-", KANA, range(42, 56), members=["a", "b"],
                       share=0.8, n_graphemes=10, **kw)
    quotas = [(lat[0], 5), (grk[0], 4), (cyr[0], 4), (hira[0], 3)]
    t_pairs: list[tuple[str, int]] = []
    for src, k in quotas:
        t_pairs += list(src.g2p.items())[:k]
    tlo, thi = text_len
    target = _spec_from_pairs("mix-t", t_pairs, inventory, duration,
                              speakers=("mix-t-sp0",), noise_scale=noise_scale,
                              text_len=(tlo, max(tlo, thi - 1)))
    return [
        LanguageConfig(lat[0], "T1", t1_n),
        LanguageConfig(grk[0], "T1", t1_n),
        LanguageConfig(lat[1], "T2", t2_n),
        LanguageConfig(grk[1], "T2", t2_n),
        LanguageConfig(cyr[0], "T2", t2_n),
        LanguageConfig(lat[2], "T3", t3_n),
        LanguageConfig(cyr[1], "T3", t3_n),
        LanguageConfig(hira[0], "T3", t3_n),
        LanguageConfig(hira[1], "T3", t3_n),
        LanguageConfig(target, "TARGET", target_n),
    ]


# -- on-disk format ------------------------------------------------------------


def write_frames(path: Path, frames: np.ndarray) -> None:
    arr = np.ascontiguousarray(frames, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(FRAMES_MAGIC)
        fh.write(struct.pack("<III", FRAMES_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_frames(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != FRAMES_MAGIC:
            raise ValueError(f"{path}: not a frames file")
        version, t_out, d_mel = struct.unpack("<III", head[4:])
        if version != FRAMES_VERSION:
            raise ValueError(f"{path}: unsupported frames version {version}")
        data = np.frombuffer(fh.read(4 * t_out * d_mel), dtype="<f4")
    return data.reshape(t_out, d_mel).copy()


def _spec_to_json(spec: SyntheticLanguageSpec) -> dict:
    return {
        "language_id": spec.language_id,
        "script": list(spec.script),
        "g2p": {g: int(p) for g, p in spec.g2p.items()},
        "duration": spec.duration,
        "signatures": {str(p): [float(v) for v in vec] for p, vec in spec.signatures.items()},
        "speakers": list(spec.speakers),
        "speaker_offset_scale": spec.speaker_offset_scale,
        "noise_scale": spec.noise_scale,
        "text_len": list(spec.text_len),
        "pre_transform": spec.pre_transform,
    }


def _spec_from_json(obj: dict) -> SyntheticLanguageSpec:
    return SyntheticLanguageSpec(
        language_id=obj["language_id"],
        script=tuple(obj["script"]),
        g2p={g: int(p) for g, p in obj["g2p"].items()},
        duration=int(obj["duration"]),
        signatures={int(p): np.asarray(vec, dtype=np.float32)
                    for p, vec in obj["signatures"].items()},
        speakers=tuple(obj["speakers"]),
        speaker_offset_scale=float(obj["speaker_offset_scale"]),
        noise_scale=float(obj["noise_scale"]),
        text_len=tuple(obj["text_len"]),
        pre_transform=obj.get("pre_transform"),
    )


def save_corpus(manifest: CorpusManifest, out_dir: Path) -> Path:
    """Write manifest.tsv + frames/ + languages.json under out_dir."""
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.tsv"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for entry in manifest.entries:
            lid = entry["language_id"]
            tier = entry["tier"]
            (frames_dir / lid).mkdir(exist_ok=True)
            for i, rec in enumerate(manifest.records[lid]):
                rel = f"frames/{lid}/{i:06d}.b2sf"
                write_frames(out_dir / rel, rec.frames)
                ref = ",".join(str(p) for p in rec.phoneme_ref)
                fh.write(f"{lid}\t{tier}\t{rec.speaker_id}\t{rec.text}\t{rel}\t{ref}\n")
    langs = {
        "seed": manifest.seed,
        "languages": [
            {**entry, "spec": _spec_to_json(manifest.specs[entry["language_id"]])}
            for entry in manifest.entries
        ],
    }
    with open(out_dir / "languages.json", "w", encoding="utf-8") as fh:
        json.dump(langs, fh, ensure_ascii=False, indent=1)
    return manifest_path


def load_corpus(path: Path) -> CorpusManifest:
    """Load a corpus from its manifest.tsv (languages.json sits alongside)."""
    path = Path(path)
    root = path.parent if path.is_file() else path
    manifest_path = root / "manifest.tsv"
    with open(root / "languages.json", encoding="utf-8") as fh:
        langs = json.load(fh)
    manifest = CorpusManifest(seed=int(langs.get("seed", 0)))
    for entry in langs["languages"]:
        spec = _spec_from_json(entry["spec"])
        manifest.specs[spec.language_id] = spec
        manifest.entries.append(
            {"language_id": spec.language_id, "tier": entry["tier"],
             "n": entry["n"], "speakers": entry["speakers"]}
        )
        manifest.records[spec.language_id] = []
    with open(manifest_path, encoding="utf-8") as fh:
        for line in fh:
            lid, tier, speaker, text, rel, ref = line.rstrip("\n").split("\t")
            frames = read_frames(root / rel)
            phonemes = tuple(int(p) for p in ref.split(",")) if ref else ()
            manifest.records[lid].append(
                SampleRecord(lid, speaker, text, frames, phonemes)
            )
    manifest.validate()
    return manifest
