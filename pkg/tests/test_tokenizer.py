import pytest
from hypothesis import given, settings, strategies as st

from b2s import tokenizer
from b2s.tokenizer import BOS, EOS, PAD, TokenSequence, TokenizerError


def test_ascii_encode():
    assert tokenizer.encode("ab").tokens == (BOS, 0x61, 0x62, EOS)


def test_greek_two_bytes():
    # U+03B1 is 0xCE 0xB1 in UTF-8
    assert tokenizer.encode("α").tokens == (BOS, 0xCE, 0xB1, EOS)
    assert "α".encode("utf-8") == bytes([0xCE, 0xB1])


def test_chinese_three_bytes():
    seq = tokenizer.encode("汉")
    assert len(seq.tokens) == 5
    assert seq.tokens[0] == BOS and seq.tokens[-1] == EOS


def test_decode_single():
    assert tokenizer.decode(TokenSequence((BOS, 0x61, EOS))) == "a"


def test_decode_error_names_offset():
    with pytest.raises(TokenizerError, match="offset 0"):
        tokenizer.decode(TokenSequence((BOS, 0xCE, EOS)))
    with pytest.raises(TokenizerError, match="offset 1"):
        tokenizer.decode(TokenSequence((BOS, 0x61, 0xFF, EOS)))


def test_surrogate_rejected():
    with pytest.raises(TokenizerError, match="malformed"):
        tokenizer.encode("\ud800")


def test_no_normalization():
    precomposed = "é"          # e acute, one codepoint
    decomposed = "é"
    assert tokenizer.encode(precomposed).tokens != tokenizer.encode(decomposed).tokens


def test_decode_ids_strips_padding():
    ids = [BOS, 0x68, 0x69, EOS, PAD, PAD]
    assert tokenizer.decode_ids(ids) == "hi"


def test_sequence_invariants():
    with pytest.raises(TokenizerError):
        TokenSequence((0x61, EOS))
    with pytest.raises(TokenizerError):
        TokenSequence((BOS, PAD, EOS))
    with pytest.raises(TokenizerError):
        TokenSequence((BOS, 300, EOS))


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet=st.characters(codec="utf-8"), max_size=60))
def test_roundtrip_and_length_law(text):
    seq = tokenizer.encode(text)
    assert tokenizer.decode(seq) == text
    assert len(seq) == len(text.encode("utf-8")) + 2
    assert all(0 <= t <= 258 for t in seq.tokens)
    assert all(t < 256 for t in seq.byte_tokens())
