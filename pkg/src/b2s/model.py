"""Encoder-decoder transformer from byte tokens to frame sequences.

Language and speaker conditioning is injected after the encoder: both
embeddings pass through small MLPs, are concatenated to every encoder output
position, and projected back to model width. Gradients come from the tape in
:mod:`b2s.autodiff`; the module owns its Adam optimizer, saliency
instrumentation points, neuron masks, and a versioned checkpoint format.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import tokenizer
from .autodiff import Tensor
from .batcher import Batch, make_batch
from .corpus import SampleRecord
from .errors import ConfigError, RunError

CHECKPOINT_MAGIC = b"B2SM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    languages: tuple[str, ...]
    speakers: tuple[str, ...]
    d_mel: int = 16
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 2
    d_model: int = 64
    d_ff: int = 128
    postnet_layers: int = 2
    postnet_channels: int = 32
    postnet_kernel: int = 5
    lang_embed_dim: int = 8
    speaker_embed_dim: int = 8
    cond_hidden: int = 16
    cond_dim: int = 16
    prenet_hidden: int = 32
    prenet_dropout: float = 0.5
    max_len: int = 2048
    dtype: str = "float32"
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    grad_clip: float | None = None

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ConfigError("d_model must be divisible by heads")
        dims = (self.d_mel, self.enc_layers, self.dec_layers, self.heads,
                self.d_model, self.d_ff, self.cond_hidden, self.cond_dim,
                self.prenet_hidden, self.lang_embed_dim, self.speaker_embed_dim)
        if any(d < 1 for d in dims):
            raise ConfigError("all model dims must be >= 1")
        if not self.languages or not self.speakers:
            raise ConfigError("languages and speakers must be nonempty")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype}")
        if self.postnet_layers and self.postnet_kernel % 2 == 0:
            raise ConfigError("postnet kernel must be odd")

    @property
    def n_languages(self) -> int:
        return len(self.languages)

    @property
    def n_speakers(self) -> int:
        return len(self.speakers)

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


@dataclass
class LossBreakdown:
    frame_loss: float
    postnet_loss: float
    stop_loss: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass
class SynthesisResult:
    frames: np.ndarray        # (T, D_mel) post-postnet
    stop_probs: np.ndarray    # (T,)
    terminated: bool          # False when max_frames was hit


def sinusoid_table(max_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2 * (i // 2) / d_model)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


class Model:
    """Owns parameters, optimizer state, masks, and the forward graph."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.step = 0
        self.adam_t = 0
        self.mask: dict[str, np.ndarray] | None = None
        self.params: dict[str, Tensor] = {}
        # instrumented layer name -> (weight, bias) producing that activation
        self.producers: dict[str, tuple[str, str]] = {}
        self._adam_m: dict[str, np.ndarray] = {}
        self._adam_v: dict[str, np.ndarray] = {}
        self._init_params(np.random.Generator(np.random.PCG64(seed)))
        self._pe = sinusoid_table(config.max_len, config.d_model).astype(config.np_dtype)
        # drives train-time prenet dropout only; state is checkpointed
        self.rng = np.random.Generator(np.random.PCG64(seed ^ 0x5EED))

    # -- parameters -----------------------------------------------------------

    def _add(self, name: str, shape: tuple[int, ...], rng, kind: str = "glorot"):
        dt = self.config.np_dtype
        if kind == "glorot":
            fan_in, fan_out = shape[0] if len(shape) > 1 else 1, shape[-1]
            if len(shape) == 3:  # conv kernels: (k, C_in, C_out)
                fan_in = shape[0] * shape[1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-limit, limit, size=shape)
        elif kind == "bias":
            # small but nonzero: keeps all-zero inputs (go frame, padding)
            # off exact ReLU kinks, where finite differences are undefined
            data = rng.uniform(-0.02, 0.02, size=shape)
        elif kind == "zeros":
            data = np.zeros(shape)
        elif kind == "ones":
            data = np.ones(shape)
        else:
            raise ValueError(kind)
        self.params[name] = Tensor(data.astype(dt), requires_grad=True)

    def _add_linear(self, name: str, d_in: int, d_out: int, rng,
                    instrument: str | None = None):
        self._add(f"{name}.w", (d_in, d_out), rng)
        self._add(f"{name}.b", (d_out,), rng, kind="bias")
        if instrument:
            self.producers[instrument] = (f"{name}.w", f"{name}.b")

    def _add_ln(self, name: str, dim: int, rng):
        self._add(f"{name}.g", (dim,), rng, kind="ones")
        self._add(f"{name}.b", (dim,), rng, kind="zeros")

    def _add_attention(self, prefix: str, rng):
        c = self.config
        for part in ("wq", "wk", "wv"):
            self._add_linear(f"{prefix}.{part}", c.d_model, c.d_model, rng)
        self._add_linear(f"{prefix}.wo", c.d_model, c.d_model, rng,
                         instrument=f"{prefix}.out")

    def _init_params(self, rng):
        c = self.config
        self._add("byte_embed", (tokenizer.VOCAB_SIZE, c.d_model), rng)
        self._add("lang_embed", (c.n_languages, c.lang_embed_dim), rng)
        self._add("speaker_embed", (c.n_speakers, c.speaker_embed_dim), rng)
        self._add("enc_alpha", (1,), rng, kind="ones")
        self._add("dec_alpha", (1,), rng, kind="ones")
        for side, emb in (("lang", c.lang_embed_dim), ("spk", c.speaker_embed_dim)):
            self._add_linear(f"cond.{side}.l1", emb, c.cond_hidden, rng,
                             instrument=f"cond.{side}.hidden")
            self._add_linear(f"cond.{side}.l2", c.cond_hidden, c.cond_dim, rng,
                             instrument=f"cond.{side}.out")
        self._add_linear("cond.proj", c.d_model + 2 * c.cond_dim, c.d_model, rng)
        for i in range(c.enc_layers):
            p = f"enc.{i}"
            self._add_ln(f"{p}.ln1", c.d_model, rng)
            self._add_attention(f"{p}.attn", rng)
            self._add_ln(f"{p}.ln2", c.d_model, rng)
            self._add_linear(f"{p}.ffn.l1", c.d_model, c.d_ff, rng,
                             instrument=f"{p}.ffn.hidden")
            self._add_linear(f"{p}.ffn.l2", c.d_ff, c.d_model, rng,
                             instrument=f"{p}.ffn.out")
        self._add_ln("enc.final_ln", c.d_model, rng)
        self._add_linear("prenet.l1", c.d_mel, c.prenet_hidden, rng)
        self._add_linear("prenet.l2", c.prenet_hidden, c.d_model, rng)
        for i in range(c.dec_layers):
            p = f"dec.{i}"
            self._add_ln(f"{p}.ln1", c.d_model, rng)
            self._add_attention(f"{p}.self_attn", rng)
            self._add_ln(f"{p}.ln2", c.d_model, rng)
            self._add_attention(f"{p}.cross_attn", rng)
            self._add_ln(f"{p}.ln3", c.d_model, rng)
            self._add_linear(f"{p}.ffn.l1", c.d_model, c.d_ff, rng,
                             instrument=f"{p}.ffn.hidden")
            self._add_linear(f"{p}.ffn.l2", c.d_ff, c.d_model, rng,
                             instrument=f"{p}.ffn.out")
        self._add_ln("dec.final_ln", c.d_model, rng)
        self._add_linear("out_proj", c.d_model, c.d_mel, rng)
        self._add_linear("stop_proj", c.d_model, 1, rng)
        if c.postnet_layers:
            widths = ([c.d_mel] + [c.postnet_channels] * (c.postnet_layers - 1)
                      + [c.d_mel])
            for j in range(c.postnet_layers):
                self._add(f"postnet.{j}.w",
                          (c.postnet_kernel, widths[j], widths[j + 1]), rng)
                self._add(f"postnet.{j}.b", (widths[j + 1],), rng, kind="zeros")
                self.producers[f"postnet.{j}"] = (f"postnet.{j}.w", f"postnet.{j}.b")

    def instrumented_layers(self) -> list[str]:
        return list(self.producers.keys())

    def layer_width(self, layer: str) -> int:
        return self.params[self.producers[layer][1]].data.shape[0]

    # -- masks ------------------------------------------------------------------

    def set_mask(self, mask: dict[str, np.ndarray] | None) -> None:
        """Install per-layer keep vectors; also zeroes producing parameters."""
        if mask is not None:
            for layer, keep in mask.items():
                if layer not in self.producers:
                    raise ConfigError(f"mask names unknown layer {layer!r}")
                if keep.shape != (self.layer_width(layer),):
                    raise ConfigError(f"mask shape mismatch on {layer!r}")
        self.mask = None if mask is None else {
            k: np.asarray(v, dtype=self.config.np_dtype) for k, v in mask.items()
        }
        if self.mask is not None:
            self._zero_masked_params()

    def _zero_masked_params(self) -> None:
        for layer, keep in self.mask.items():
            w_name, b_name = self.producers[layer]
            dead = keep == 0
            self.params[w_name].data[..., dead] = 0.0
            self.params[b_name].data[dead] = 0.0

    def _gate(self, layer: str, x: Tensor, record: dict | None) -> Tensor:
        if self.mask is not None and layer in self.mask:
            x = ad.mul(x, self.mask[layer])
        if record is not None:
            record[layer] = x
        return x

    # -- building blocks ----------------------------------------------------------

    def _linear(self, name: str, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.params[f"{name}.w"]), self.params[f"{name}.b"])

    def _ln(self, name: str, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.params[f"{name}.g"], self.params[f"{name}.b"])

    def _split_heads(self, x: Tensor, B: int, T: int) -> Tensor:
        c = self.config
        hd = c.d_model // c.heads
        return ad.transpose(ad.reshape(x, (B, T, c.heads, hd)), (0, 2, 1, 3))

    def _attention(self, prefix: str, q_in: Tensor, kv_in: Tensor,
                   bias: np.ndarray | None, record: dict | None) -> Tensor:
        c = self.config
        B, Tq = q_in.shape[0], q_in.shape[1]
        Tk = kv_in.shape[1]
        hd = c.d_model // c.heads
        q = self._split_heads(self._linear(f"{prefix}.wq", q_in), B, Tq)
        k = self._split_heads(self._linear(f"{prefix}.wk", kv_in), B, Tk)
        v = self._split_heads(self._linear(f"{prefix}.wv", kv_in), B, Tk)
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))),
                        1.0 / np.sqrt(hd))
        att = ad.softmax(scores, mask=bias)
        ctx = ad.reshape(ad.transpose(ad.matmul(att, v), (0, 2, 1, 3)),
                         (B, Tq, c.d_model))
        out = self._linear(f"{prefix}.wo", ctx)
        return self._gate(f"{prefix}.out", out, record)

    def _ffn(self, prefix: str, x: Tensor, record: dict | None) -> Tensor:
        h = ad.relu(self._linear(f"{prefix}.ffn.l1", x))
        h = self._gate(f"{prefix}.ffn.hidden", h, record)
        o = self._linear(f"{prefix}.ffn.l2", h)
        return self._gate(f"{prefix}.ffn.out", o, record)

    @staticmethod
    def _key_bias(lengths: np.ndarray, Tk: int, dtype) -> np.ndarray:
        # (B, 1, 1, Tk): large negative at padded key positions
        valid = np.arange(Tk)[None, :] < lengths[:, None]
        bias = np.where(valid, 0.0, -1e9).astype(dtype)
        return bias[:, None, None, :]

    def _cond_vector(self, side: str, embed_name: str, ids: np.ndarray,
                     record: dict | None) -> Tensor:
        emb = ad.embedding(self.params[embed_name], ids)
        h = ad.relu(self._linear(f"cond.{side}.l1", emb))
        h = self._gate(f"cond.{side}.hidden", h, record)
        out = self._linear(f"cond.{side}.l2", h)
        return self._gate(f"cond.{side}.out", out, record)

    def encode(self, tokens: np.ndarray, token_lengths: np.ndarray,
               lang_ids: np.ndarray, spk_ids: np.ndarray,
               record: dict | None = None) -> tuple[Tensor, np.ndarray]:
        """Token stack plus post-encoder conditioning; returns (memory, key bias)."""
        c = self.config
        B, L = tokens.shape
        x = ad.embedding(self.params["byte_embed"], tokens)
        pe = ad.mul(self.params["enc_alpha"], self._pe[:L])
        x = ad.add(x, pe)
        bias = self._key_bias(token_lengths, L, c.np_dtype)
        for i in range(c.enc_layers):
            p = f"enc.{i}"
            h = self._ln(f"{p}.ln1", x)
            x = ad.add(x, self._attention(f"{p}.attn", h, h, bias, record))
            x = ad.add(x, self._ffn(p, self._ln(f"{p}.ln2", x), record))
        x = self._ln("enc.final_ln", x)
        lang_vec = self._cond_vector("lang", "lang_embed", lang_ids, record)
        spk_vec = self._cond_vector("spk", "speaker_embed", spk_ids, record)
        ones = np.ones((B, L, 1), dtype=c.np_dtype)
        lang_tiled = ad.mul(ad.reshape(lang_vec, (B, 1, c.cond_dim)), ones)
        spk_tiled = ad.mul(ad.reshape(spk_vec, (B, 1, c.cond_dim)), ones)
        memory = self._linear("cond.proj", ad.concat([x, lang_tiled, spk_tiled], axis=2))
        return memory, bias

    def _dropout(self, x: Tensor, train: bool) -> Tensor:
        p = self.config.prenet_dropout
        if not train or p <= 0:
            return x
        keep = (self.rng.random(x.shape) >= p).astype(self.config.np_dtype)
        return ad.mul(x, keep / (1.0 - p))

    def decode(self, memory: Tensor, mem_bias: np.ndarray,
               frames_in: np.ndarray, frame_lengths: np.ndarray | None,
               record: dict | None = None, train: bool = False,
               ) -> tuple[Tensor, Tensor, Tensor]:
        """Teacher-forced decoder pass over shifted input frames.

        Prenet dropout stays on only in training mode; it is what forces the
        decoder to read the text instead of copying the previous frame.
        """
        c = self.config
        B, T, _ = frames_in.shape
        y = ad.relu(self._linear("prenet.l1", Tensor(frames_in.astype(c.np_dtype))))
        y = self._dropout(y, train)
        y = ad.relu(self._linear("prenet.l2", y))
        y = self._dropout(y, train)
        y = ad.add(y, ad.mul(self.params["dec_alpha"], self._pe[:T]))
        causal = np.triu(np.full((T, T), -1e9, dtype=c.np_dtype), k=1)
        self_bias = causal[None, None, :, :]
        if frame_lengths is not None:
            self_bias = self_bias + self._key_bias(frame_lengths, T, c.np_dtype)
        for i in range(c.dec_layers):
            p = f"dec.{i}"
            h = self._ln(f"{p}.ln1", y)
            y = ad.add(y, self._attention(f"{p}.self_attn", h, h, self_bias, record))
            a = self._attention(f"{p}.cross_attn", self._ln(f"{p}.ln2", y),
                                memory, mem_bias, record)
            y = ad.add(y, a)
            y = ad.add(y, self._ffn(p, self._ln(f"{p}.ln3", y), record))
        y = self._ln("dec.final_ln", y)
        pre = self._linear("out_proj", y)
        stop = ad.reshape(self._linear("stop_proj", y), (B, T))
        post = ad.add(pre, self._postnet(pre, record)) if c.postnet_layers else pre
        return pre, post, stop

    def _postnet(self, pre: Tensor, record: dict | None) -> Tensor:
        c = self.config
        x = pre
        for j in range(c.postnet_layers):
            x = ad.conv1d_same(x, self.params[f"postnet.{j}.w"],
                               self.params[f"postnet.{j}.b"])
            if j < c.postnet_layers - 1:
                x = ad.tanh(x)
            x = self._gate(f"postnet.{j}", x, record)
        return x

    def lang_index(self, language_id: str) -> int:
        try:
            return self.config.languages.index(language_id)
        except ValueError:
            raise ConfigError(f"unknown language {language_id!r}") from None

    def speaker_index(self, speaker_id: str) -> int:
        try:
            return self.config.speakers.index(speaker_id)
        except ValueError:
            raise ConfigError(f"unknown speaker {speaker_id!r}") from None

    def _batch_ids(self, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
        langs = np.asarray([self.lang_index(r.language_id) for r in batch.records])
        spks = np.asarray([self.speaker_index(r.speaker_id) for r in batch.records])
        return langs, spks

    def forward(self, batch: Batch, record: dict | None = None,
                train: bool = False) -> tuple[Tensor, Tensor, Tensor]:
        """Teacher-forced pass: returns (pre frames, post frames, stop logits)."""
        c = self.config
        lang_ids, spk_ids = self._batch_ids(batch)
        memory, mem_bias = self.encode(batch.tokens, batch.token_lengths,
                                       lang_ids, spk_ids, record)
        target = batch.frames.astype(c.np_dtype)
        go = np.zeros((target.shape[0], 1, c.d_mel), dtype=c.np_dtype)
        frames_in = np.concatenate([go, target[:, :-1]], axis=1)
        return self.decode(memory, mem_bias, frames_in, batch.frame_lengths,
                           record, train=train)

    def loss(self, pre: Tensor, post: Tensor, stop: Tensor,
             targets: np.ndarray, lengths: np.ndarray) -> tuple[Tensor, LossBreakdown]:
        """Masked MSE pre/post postnet plus stop BCE; padding excluded."""
        c = self.config
        if (np.isnan(pre.data).any() or np.isnan(post.data).any()
                or np.isnan(stop.data).any() or np.isnan(targets).any()):
            raise RunError("NaN in loss inputs")
        B, T, D = targets.shape
        t = targets.astype(c.np_dtype)
        fmask = (np.arange(T)[None, :] < lengths[:, None])
        fmask_f = fmask.astype(c.np_dtype)
        n_valid = float(fmask_f.sum())
        w = fmask_f[:, :, None]
        frame_loss = ad.mul(ad.tsum(ad.mul(ad.power(ad.add(pre, -t), 2.0), w)),
                            1.0 / (n_valid * D))
        post_loss = ad.mul(ad.tsum(ad.mul(ad.power(ad.add(post, -t), 2.0), w)),
                           1.0 / (n_valid * D))
        stop_t = np.zeros((B, T), dtype=c.np_dtype)
        stop_t[np.arange(B), lengths - 1] = 1.0
        bce = ad.bce_with_logits(stop, stop_t)
        stop_loss = ad.mul(ad.tsum(ad.mul(bce, fmask_f)), 1.0 / n_valid)
        wf, wp, ws = c.loss_weights
        total = ad.add(ad.add(ad.mul(frame_loss, wf), ad.mul(post_loss, wp)),
                       ad.mul(stop_loss, ws))
        detail = LossBreakdown(float(frame_loss.data), float(post_loss.data),
                               float(stop_loss.data), float(total.data))
        return total, detail

    def backward(self, batch: Batch, record: dict | None = None,
                 train: bool = False) -> tuple[LossBreakdown, dict]:
        """Forward + loss + full backprop; grads live on the parameter tensors."""
        self.zero_grad()
        pre, post, stop = self.forward(batch, record=record, train=train)
        total, detail = self.loss(pre, post, stop, batch.frames, batch.frame_lengths)
        total.backward()
        return detail, (record if record is not None else {})

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- optimization ---------------------------------------------------------

    def train_step(self, batch: Batch, lr: float,
                   betas: tuple[float, float] = (0.9, 0.999),
                   eps: float = 1e-8) -> LossBreakdown:
        if lr <= 0:
            raise ConfigError("lr must be > 0")
        detail, _ = self.backward(batch, train=True)
        if np.isnan(detail.total):
            raise RunError("diverged: training loss is NaN")
        if self.config.grad_clip is not None:
            self._clip_grads(self.config.grad_clip)
        self.adam_t += 1
        b1, b2 = betas
        c1 = 1.0 - b1**self.adam_t
        c2 = 1.0 - b2**self.adam_t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self._adam_m.get(name)
            if m is None:
                m = self._adam_m[name] = np.zeros_like(p.data)
            v = self._adam_v.get(name)
            if v is None:
                v = self._adam_v[name] = np.zeros_like(p.data)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
        if self.mask is not None:
            self._zero_masked_params()
        self.step += 1
        return detail

    def _clip_grads(self, max_norm: float) -> None:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float((p.grad.astype(np.float64) ** 2).sum())
        norm = np.sqrt(total)
        if norm > max_norm:
            scale = max_norm / norm
            for p in self.params.values():
                if p.grad is not None:
                    p.grad *= scale

    # -- inference --------------------------------------------------------------

    def synthesize(self, text: str, language_id: str, speaker_id: str,
                   max_frames: int = 400) -> SynthesisResult:
        """Autoregressive decode until stop probability > 0.5 or max_frames."""
        c = self.config
        seq = tokenizer.encode(text).tokens
        tokens = np.asarray([seq], dtype=np.int64)
        tok_len = np.asarray([len(seq)], dtype=np.int64)
        lang = np.asarray([self.lang_index(language_id)])
        spk = np.asarray([self.speaker_index(speaker_id)])
        with ad.no_grad():
            memory, mem_bias = self.encode(tokens, tok_len, lang, spk)
            frames = np.zeros((1, 0, c.d_mel), dtype=c.np_dtype)
            stop_probs: list[float] = []
            terminated = False
            for t in range(max_frames):
                go = np.zeros((1, 1, c.d_mel), dtype=c.np_dtype)
                frames_in = np.concatenate([go, frames], axis=1)
                pre, _, stop = self.decode(memory, mem_bias, frames_in, None)
                nxt = pre.data[:, -1:, :]
                frames = np.concatenate([frames, nxt], axis=1)
                p_stop = float(1.0 / (1.0 + np.exp(-stop.data[0, -1])))
                stop_probs.append(p_stop)
                if p_stop > 0.5:
                    terminated = True
                    break
            post = (ad.add(Tensor(frames), self._postnet(Tensor(frames), None)).data
                    if c.postnet_layers and frames.shape[1] else frames)
        return SynthesisResult(post[0].copy(), np.asarray(stop_probs), terminated)

    # -- checkpoints ---------------------------------------------------------------

    def save(self, path: Path, rng_state: dict | None = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cfg = asdict(self.config)
        cfg["languages"] = list(cfg["languages"])
        cfg["speakers"] = list(cfg["speakers"])
        cfg["loss_weights"] = list(cfg["loss_weights"])
        extra = {"step": self.step, "adam_t": self.adam_t,
                 "rng_state": rng_state,
                 "model_rng": self.rng.bit_generator.state}
        named: list[tuple[str, np.ndarray]] = [
            (name, p.data) for name, p in self.params.items()
        ]
        named += [(f"opt.m.{n}", a) for n, a in self._adam_m.items()]
        named += [(f"opt.v.{n}", a) for n, a in self._adam_v.items()]
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", CHECKPOINT_VERSION))
            _write_block(fh, json.dumps(cfg).encode("utf-8"))
            _write_block(fh, json.dumps(extra).encode("utf-8"))
            fh.write(struct.pack("<I", len(named)))
            for name, arr in named:
                nb = name.encode("utf-8")
                fh.write(struct.pack("<H", len(nb)))
                fh.write(nb)
                fh.write(struct.pack("<B", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
            if self.mask is None:
                fh.write(struct.pack("<I", 0))
            else:
                fh.write(struct.pack("<I", len(self.mask)))
                for layer, keep in sorted(self.mask.items()):
                    nb = layer.encode("utf-8")
                    fh.write(struct.pack("<H", len(nb)))
                    fh.write(nb)
                    fh.write(struct.pack("<I", keep.shape[0]))
                    fh.write(np.asarray(keep != 0, dtype=np.uint8).tobytes())

    @classmethod
    def load(cls, path: Path) -> tuple["Model", dict | None]:
        """Restore a model; returns (model, saved RNG state or None)."""
        path = Path(path)
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != CHECKPOINT_MAGIC:
                raise RunError(f"{path}: not a model checkpoint")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != CHECKPOINT_VERSION:
                raise RunError(f"{path}: unsupported checkpoint version {version}")
            cfg = json.loads(_read_block(fh))
            extra = json.loads(_read_block(fh))
            cfg["languages"] = tuple(cfg["languages"])
            cfg["speakers"] = tuple(cfg["speakers"])
            cfg["loss_weights"] = tuple(cfg["loss_weights"])
            config = ModelConfig(**cfg)
            model = cls(config, seed=0)
            (n_named,) = struct.unpack("<I", fh.read(4))
            for _ in range(n_named):
                (nlen,) = struct.unpack("<H", fh.read(2))
                name = fh.read(nlen).decode("utf-8")
                (ndim,) = struct.unpack("<B", fh.read(1))
                shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
                count = int(np.prod(shape)) if ndim else 1
                arr = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
                arr = arr.astype(config.np_dtype)
                if name.startswith("opt.m."):
                    model._adam_m[name[6:]] = arr.copy()
                elif name.startswith("opt.v."):
                    model._adam_v[name[6:]] = arr.copy()
                else:
                    if name not in model.params:
                        raise RunError(f"{path}: unexpected tensor {name!r}")
                    model.params[name].data = arr.copy()
            (n_mask,) = struct.unpack("<I", fh.read(4))
            if n_mask:
                mask = {}
                for _ in range(n_mask):
                    (nlen,) = struct.unpack("<H", fh.read(2))
                    layer = fh.read(nlen).decode("utf-8")
                    (width,) = struct.unpack("<I", fh.read(4))
                    keep = np.frombuffer(fh.read(width), dtype=np.uint8)
                    mask[layer] = keep.astype(config.np_dtype)
                model.set_mask(mask)
        model.step = int(extra["step"])
        model.adam_t = int(extra["adam_t"])
        if extra.get("model_rng") is not None:
            model.rng.bit_generator.state = extra["model_rng"]
        return model, extra.get("rng_state")


def _write_block(fh, payload: bytes) -> None:
    fh.write(struct.pack("<I", len(payload)))
    fh.write(payload)


def _read_block(fh) -> bytes:
    (n,) = struct.unpack("<I", fh.read(4))
    return fh.read(n)


def single_record_batch(record: SampleRecord) -> Batch:
    return make_batch([record])
