import numpy as np
import pytest

from b2s import corpus
from b2s.batcher import make_batch
from b2s.errors import ConfigError, RunError
from b2s.model import Model, ModelConfig, sinusoid_table
from b2s.sampler import TwoStageSampler, compute_distribution
from b2s.schedule import LrPolicy, learning_rate


def small_config(**kw):
    base = dict(languages=("la", "lb"), speakers=("la-sp0", "lb-sp0"),
                d_mel=6, enc_layers=1, dec_layers=1, heads=2, d_model=12,
                d_ff=16, postnet_layers=2, postnet_channels=8,
                lang_embed_dim=4, speaker_embed_dim=4, cond_hidden=4,
                cond_dim=4, prenet_hidden=8, prenet_dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def random_batch(rng, n=3, d_mel=6, langs=("la", "lb")):
    recs = []
    for i in range(n):
        lang = langs[i % len(langs)]
        t = int(rng.integers(3, 9))
        frames = rng.normal(size=(t, d_mel)).astype(np.float32)
        recs.append(corpus.SampleRecord(lang, f"{lang}-sp0", "abc"[: 1 + i % 3],
                                        frames, (0,)))
    return make_batch(recs)


def test_config_validation():
    with pytest.raises(ConfigError):
        small_config(d_model=13)          # not divisible by heads
    with pytest.raises(ConfigError):
        small_config(languages=())
    with pytest.raises(ConfigError):
        small_config(dtype="float16")


def test_output_shapes():
    m = Model(small_config(), seed=0)
    batch = random_batch(np.random.default_rng(0))
    pre, post, stop = m.forward(batch)
    B, T, _ = batch.frames.shape
    assert pre.shape == (B, T, 6)
    assert post.shape == (B, T, 6)
    assert stop.shape == (B, T)


def test_language_conditioning_changes_output():
    m = Model(small_config(), seed=0)
    rng = np.random.default_rng(1)
    frames = rng.normal(size=(5, 6)).astype(np.float32)
    ra = corpus.SampleRecord("la", "la-sp0", "ab", frames, (0,))
    rb = corpus.SampleRecord("lb", "la-sp0", "ab", frames, (0,))
    pa, _, _ = m.forward(make_batch([ra]))
    pb, _, _ = m.forward(make_batch([rb]))
    assert not np.allclose(pa.data, pb.data)


def test_zero_output_projection_gives_zero_pre_frames():
    m = Model(small_config(), seed=0)
    m.params["out_proj.w"].data[:] = 0.0
    m.params["out_proj.b"].data[:] = 0.0
    pre, _, _ = m.forward(random_batch(np.random.default_rng(2)))
    assert np.all(pre.data == 0)


def test_loss_perfect_prediction():
    m = Model(small_config(postnet_layers=0), seed=0)
    batch = random_batch(np.random.default_rng(3), n=1)
    t = batch.frames.astype(np.float64)
    from b2s.autodiff import Tensor
    pre = Tensor(t)
    stop_logits = np.full(batch.frames.shape[:2], -20.0)
    stop_logits[0, batch.frame_lengths[0] - 1] = 20.0
    total, detail = m.loss(pre, pre, Tensor(stop_logits), batch.frames,
                           batch.frame_lengths)
    assert detail.frame_loss == 0.0
    assert detail.postnet_loss == 0.0
    assert detail.stop_loss < 1e-8


def test_loss_constant_offset():
    m = Model(small_config(postnet_layers=0), seed=0)
    batch = random_batch(np.random.default_rng(4), n=1)
    from b2s.autodiff import Tensor
    pred = Tensor(batch.frames.astype(np.float64) + 1.0)
    stop = Tensor(np.zeros(batch.frames.shape[:2]))
    _, detail = m.loss(pred, pred, stop, batch.frames, batch.frame_lengths)
    assert detail.frame_loss == pytest.approx(1.0, abs=1e-12)


def test_loss_matches_scalar_reference():
    cfg = small_config(dtype="float64")
    m = Model(cfg, seed=5)
    batch = random_batch(np.random.default_rng(5))
    pre, post, stop = m.forward(batch)
    total, detail = m.loss(pre, post, stop, batch.frames, batch.frame_lengths)

    # independent scalar-loop reference
    B, T, D = batch.frames.shape
    f_sum = p_sum = s_sum = 0.0
    n_valid = 0
    for b in range(B):
        L = int(batch.frame_lengths[b])
        for t in range(L):
            n_valid += 1
            for d in range(D):
                f_sum += (pre.data[b, t, d] - batch.frames[b, t, d]) ** 2
                p_sum += (post.data[b, t, d] - batch.frames[b, t, d]) ** 2
            x = stop.data[b, t]
            y = 1.0 if t == L - 1 else 0.0
            s_sum += max(x, 0) - x * y + np.log1p(np.exp(-abs(x)))
    assert detail.frame_loss == pytest.approx(f_sum / (n_valid * D), abs=1e-10)
    assert detail.postnet_loss == pytest.approx(p_sum / (n_valid * D), abs=1e-10)
    assert detail.stop_loss == pytest.approx(s_sum / n_valid, abs=1e-10)


def test_unused_parameter_gets_no_gradient():
    m = Model(small_config(), seed=0)
    rng = np.random.default_rng(6)
    frames = rng.normal(size=(4, 6)).astype(np.float32)
    batch = make_batch([corpus.SampleRecord("la", "la-sp0", "ab", frames, (0,))])
    m.backward(batch)
    # language/speaker rows for lb are untouched by a la-only batch
    assert np.all(m.params["lang_embed"].grad[1] == 0)
    assert np.all(m.params["speaker_embed"].grad[1] == 0)


def test_loss_weight_scaling_doubles_gradients():
    batch = random_batch(np.random.default_rng(7))
    g1, g2 = {}, {}
    for weights, store in (((1.0, 1.0, 1.0), g1), ((2.0, 2.0, 2.0), g2)):
        m = Model(small_config(dtype="float64", loss_weights=weights), seed=9)
        m.backward(batch)
        for name, p in m.params.items():
            store[name] = None if p.grad is None else p.grad.copy()
    for name in g1:
        if g1[name] is None:
            assert g2[name] is None
        else:
            assert np.allclose(2.0 * g1[name], g2[name], rtol=1e-12, atol=0)


def test_nan_divergence_guard():
    m = Model(small_config(), seed=0)
    batch = random_batch(np.random.default_rng(8))
    m.params["out_proj.w"].data[0, 0] = np.nan
    with pytest.raises(RunError, match="NaN"):
        m.train_step(batch, 1e-3)


def test_mask_zeroes_activations_and_protects_output():
    m = Model(small_config(), seed=0)
    layer = "enc.0.ffn.hidden"
    width = m.layer_width(layer)
    keep = np.ones(width)
    keep[: width // 2] = 0.0
    m.set_mask({layer: keep})
    batch = random_batch(np.random.default_rng(9))
    record = {}
    m.forward(batch, record=record)
    acts = record[layer].data
    assert np.all(acts[..., : width // 2] == 0)
    base_out, _, _ = m.forward(batch)
    # perturbing a masked neuron's incoming weights cannot change the output
    m.params["enc.0.ffn.l1.w"].data[:, 0] += 123.0
    pert_out, _, _ = m.forward(batch)
    assert np.array_equal(base_out.data, pert_out.data)


def test_mask_zeroing_equivalence():
    """Zeroing an activation equals zeroing the producing parameters."""
    batch = random_batch(np.random.default_rng(10))
    layer = "dec.0.ffn.hidden"
    dead = [0, 3, 5]

    masked = Model(small_config(dtype="float64"), seed=12)
    width = masked.layer_width(layer)
    keep = np.ones(width)
    keep[dead] = 0.0
    masked.set_mask({layer: keep})
    pre_m, post_m, stop_m = masked.forward(batch)
    loss_m, _ = masked.loss(pre_m, post_m, stop_m, batch.frames,
                            batch.frame_lengths)

    zeroed = Model(small_config(dtype="float64"), seed=12)
    zeroed.params["dec.0.ffn.l1.w"].data[:, dead] = 0.0
    zeroed.params["dec.0.ffn.l1.b"].data[dead] = 0.0
    pre_z, post_z, stop_z = zeroed.forward(batch)
    loss_z, _ = zeroed.loss(pre_z, post_z, stop_z, batch.frames,
                            batch.frame_lengths)
    assert float(loss_m.data) == pytest.approx(float(loss_z.data), rel=1e-14)


def test_masked_neurons_stay_dead_through_updates():
    m = Model(small_config(), seed=0)
    layer = "enc.0.ffn.hidden"
    width = m.layer_width(layer)
    keep = np.ones(width)
    keep[2] = 0.0
    m.set_mask({layer: keep})
    batch = random_batch(np.random.default_rng(11))
    for _ in range(3):
        m.train_step(batch, 1e-3)
    assert np.all(m.params["enc.0.ffn.l1.w"].data[:, 2] == 0)
    record = {}
    m.forward(batch, record=record)
    assert np.all(record[layer].data[..., 2] == 0)


def test_training_determinism():
    batch = random_batch(np.random.default_rng(12))
    states = []
    for _ in range(2):
        m = Model(small_config(prenet_dropout=0.5), seed=21)
        for _ in range(5):
            m.train_step(batch, 1e-3)
        states.append({k: p.data.copy() for k, p in m.params.items()})
    for name in states[0]:
        assert np.array_equal(states[0][name], states[1][name])


def test_permutation_equivariance():
    m = Model(small_config(), seed=0)
    rng = np.random.default_rng(13)
    recs = [corpus.SampleRecord("la", "la-sp0", "ab",
                                rng.normal(size=(5, 6)).astype(np.float32), (0,)),
            corpus.SampleRecord("lb", "lb-sp0", "ba",
                                rng.normal(size=(5, 6)).astype(np.float32), (0,))]
    fwd = m.forward(make_batch(recs))[0].data
    rev = m.forward(make_batch(recs[::-1]))[0].data
    assert np.allclose(fwd[0], rev[1], atol=1e-6)
    assert np.allclose(fwd[1], rev[0], atol=1e-6)


def test_unknown_language_or_speaker():
    m = Model(small_config(), seed=0)
    frames = np.ones((3, 6), dtype=np.float32)
    bad_lang = make_batch([corpus.SampleRecord("zz", "la-sp0", "a", frames, (0,))])
    with pytest.raises(ConfigError, match="unknown language"):
        m.forward(bad_lang)
    with pytest.raises(ConfigError, match="unknown speaker"):
        m.synthesize("a", "la", "nope")


def test_synthesize_contracts():
    m = Model(small_config(), seed=0)
    out = m.synthesize("ab", "la", "lb-sp0", max_frames=1)   # cross pairing ok
    assert out.frames.shape == (1, 6)
    assert not out.terminated


def test_smoke_training_loss_drops_90_percent():
    cfgs = corpus.smoke_corpus_config(seed=7, n=10, d_mel=8, duration=2,
                                      text_len=(2, 5))
    man = corpus.build_tiered_corpus(cfgs, seed=7)
    m = Model(ModelConfig(languages=("smoke",), speakers=("smoke-sp0",),
                          d_mel=8, enc_layers=2, dec_layers=2, heads=2,
                          d_model=64, d_ff=128, postnet_layers=0,
                          prenet_dropout=0.0), seed=2)
    dist = compute_distribution(man.counts(), alpha=0.2)
    smp = TwoStageSampler(dist, man, np.random.default_rng(0))
    pol = LrPolicy(1e-3, 1e-5, 850)
    first = None
    for step in range(200):
        batch = make_batch(smp.take(10))
        detail = m.train_step(batch, learning_rate(pol, step))
        if first is None:
            first = detail.frame_loss
    assert detail.frame_loss <= 0.1 * first


def test_checkpoint_roundtrip(tmp_path):
    m = Model(small_config(), seed=0)
    batch = random_batch(np.random.default_rng(14))
    for _ in range(3):
        m.train_step(batch, 1e-3)
    keep = np.ones(m.layer_width("enc.0.ffn.hidden"))
    keep[1] = 0
    m.set_mask({"enc.0.ffn.hidden": keep})
    rng_state = np.random.default_rng(5).bit_generator.state
    path = tmp_path / "model.b2sm"
    m.save(path, rng_state=rng_state)
    assert path.read_bytes()[:4] == b"B2SM"

    back, saved_state = Model.load(path)
    assert back.step == m.step and back.adam_t == m.adam_t
    assert saved_state == rng_state
    for name, p in m.params.items():
        assert np.array_equal(back.params[name].data, p.data), name
    for name, arr in m._adam_m.items():
        assert np.array_equal(back._adam_m[name], arr)
    assert set(back.mask) == {"enc.0.ffn.hidden"}
    assert np.array_equal(back.mask["enc.0.ffn.hidden"], keep)
    # resumed training stays bit-identical
    b1 = random_batch(np.random.default_rng(15))
    d_orig = m.train_step(b1, 5e-4)
    d_back = back.train_step(b1, 5e-4)
    assert d_orig.total == d_back.total
    for name, p in m.params.items():
        assert np.array_equal(back.params[name].data, p.data), name


def test_sinusoid_table_shape():
    pe = sinusoid_table(16, 8)
    assert pe.shape == (16, 8)
    assert np.allclose(pe[0, 0::2], 0.0)
    assert np.allclose(pe[0, 1::2], 1.0)
