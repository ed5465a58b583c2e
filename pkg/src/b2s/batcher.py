"""Greedy in-order dynamic batching under a total-output-frame budget."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from . import tokenizer
from .corpus import SampleRecord
from .errors import RunError


@dataclass
class Batch:
    records: list[SampleRecord]
    tokens: np.ndarray          # (B, L_max) int64, PAD-filled
    token_lengths: np.ndarray   # (B,)
    frames: np.ndarray          # (B, T_max, D) zero-padded
    frame_lengths: np.ndarray   # (B,)
    total_frames: int

    def token_mask(self) -> np.ndarray:
        """True exactly at real (non-padding) token positions."""
        L = self.tokens.shape[1]
        return np.arange(L)[None, :] < self.token_lengths[:, None]

    def frame_mask(self) -> np.ndarray:
        T = self.frames.shape[1]
        return np.arange(T)[None, :] < self.frame_lengths[:, None]


def make_batch(records: list[SampleRecord]) -> Batch:
    seqs = [tokenizer.encode(r.text).tokens for r in records]
    tok_lens = np.asarray([len(s) for s in seqs], dtype=np.int64)
    frame_lens = np.asarray([r.frames.shape[0] for r in records], dtype=np.int64)
    B, L, T = len(records), int(tok_lens.max()), int(frame_lens.max())
    d_mel = records[0].frames.shape[1]
    tokens = np.full((B, L), tokenizer.PAD, dtype=np.int64)
    frames = np.zeros((B, T, d_mel), dtype=records[0].frames.dtype)
    for i, (seq, rec) in enumerate(zip(seqs, records)):
        tokens[i, : len(seq)] = seq
        frames[i, : rec.frames.shape[0]] = rec.frames
    return Batch(records, tokens, tok_lens, frames, frame_lens,
                 int(frame_lens.sum()))


def pack(stream: Iterable[SampleRecord], frame_budget: int) -> Iterator[Batch]:
    """Accumulate records in order; flush when the next one would overflow.

    A single record longer than the budget is an error: the budget must
    admit every record the sampler can produce.
    """
    if frame_budget < 1:
        raise RunError("frame budget must be >= 1")
    pending: list[SampleRecord] = []
    used = 0
    for rec in stream:
        t = rec.frames.shape[0]
        if t > frame_budget:
            raise RunError(
                f"record ({rec.language_id}, {rec.speaker_id}, {rec.text[:20]!r}) "
                f"has {t} frames, over budget {frame_budget}"
            )
        if used + t > frame_budget:
            yield make_batch(pending)
            pending, used = [], 0
        pending.append(rec)
        used += t
    if pending:
        yield make_batch(pending)
