"""Byte-level tokenizer: UTF-8 bytes in, byte tokens out, no normalization.

Token IDs 0..255 are raw byte values; PAD/BOS/EOS sit above the byte range
so a byte token always equals its byte value.
"""

from __future__ import annotations

from dataclasses import dataclass

PAD = 256
BOS = 257
EOS = 258
VOCAB_SIZE = 259


class TokenizerError(ValueError):
    """Raised for malformed text or token sequences."""


@dataclass(frozen=True)
class TokenSequence:
    """A BOS/EOS-framed sequence of byte token IDs."""

    tokens: tuple[int, ...]

    def __post_init__(self):
        toks = self.tokens
        if len(toks) < 2 or toks[0] != BOS or toks[-1] != EOS:
            raise TokenizerError("token sequence must start with BOS and end with EOS")
        for t in toks[1:-1]:
            if not (0 <= t <= 255):
                raise TokenizerError(f"non-byte token {t} between BOS and EOS")

    def __len__(self) -> int:
        return len(self.tokens)

    def byte_tokens(self) -> tuple[int, ...]:
        return self.tokens[1:-1]


def encode(text: str) -> TokenSequence:
    """Encode text as [BOS] + UTF-8 bytes + [EOS].

    No Unicode normalization is performed; precomposed and decomposed forms
    encode differently. Lone surrogates are rejected.
    """
    try:
        raw = text.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise TokenizerError(f"malformed input: {exc.reason}") from exc
    return TokenSequence((BOS,) + tuple(raw) + (EOS,))


def decode(seq: TokenSequence) -> str:
    """Invert :func:`encode`. Byte runs must form valid UTF-8."""
    raw = bytes(seq.byte_tokens())
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TokenizerError(
            f"invalid UTF-8 at byte offset {exc.start}: {exc.reason}"
        ) from exc


def decode_ids(ids) -> str:
    """Decode a raw ID list: trailing PAD is stripped, framing is checked."""
    toks = list(ids)
    while toks and toks[-1] == PAD:
        toks.pop()
    return decode(TokenSequence(tuple(toks)))
