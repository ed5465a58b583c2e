import numpy as np
import pytest

from b2s.batcher import make_batch, pack
from b2s.corpus import SampleRecord
from b2s.errors import RunError
from b2s.tokenizer import PAD


def rec(t_out, text="ab", lang="x"):
    return SampleRecord(lang, f"{lang}-sp0", text,
                        np.ones((t_out, 3), dtype=np.float32), (0,))


def test_hand_worked_packing():
    stream = [rec(3000), rec(3000), rec(3000)]
    batches = list(pack(stream, 8000))
    assert [len(b.records) for b in batches] == [2, 1]


def test_singleton():
    batches = list(pack([rec(10)], 100))
    assert len(batches) == 1
    assert batches[0].total_frames == 10


def test_oversize_record_error():
    with pytest.raises(RunError, match="over budget"):
        list(pack([rec(101, text="oversized")], 100))


def test_budget_maximality_conservation():
    rng = np.random.default_rng(3)
    for _ in range(200):
        stream = [rec(int(rng.integers(1, 50))) for _ in range(int(rng.integers(1, 40)))]
        budget = int(rng.integers(50, 300))
        batches = list(pack(stream, budget))
        flat = [r for b in batches for r in b.records]
        assert [id(r) for r in flat] == [id(r) for r in stream]
        for k, b in enumerate(batches):
            assert b.total_frames <= budget
            assert b.total_frames == sum(r.frames.shape[0] for r in b.records)
            if k + 1 < len(batches):
                nxt = batches[k + 1].records[0].frames.shape[0]
                assert b.total_frames + nxt > budget


def test_padding_masks_exact():
    batch = make_batch([rec(4, text="abc"), rec(7, text="a")])
    tok_mask = batch.token_mask()
    frame_mask = batch.frame_mask()
    assert tok_mask.shape == batch.tokens.shape
    # padded token positions hold PAD and only those
    assert np.all((batch.tokens == PAD) == ~tok_mask)
    assert frame_mask[0].sum() == 4 and frame_mask[1].sum() == 7
    assert np.all(batch.frames[0, 4:] == 0)


def test_token_contents():
    batch = make_batch([rec(2, text="hi")])
    assert batch.tokens[0].tolist() == [257, 0x68, 0x69, 258]
    assert batch.token_lengths[0] == 4
