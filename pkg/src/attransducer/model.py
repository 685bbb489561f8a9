"""Encoder, prediction network and chunk-attention joint network.

Inference (:class:`Model` methods, :class:`EncoderStream`) runs on plain
numpy, one frame or one token at a time. Training uses
:meth:`Model.forward_logits`, which builds the same computation over padded
batches on the autodiff tape.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .layers import (
    LayerNormParams,
    LstmParams,
    SelfAttentionParams,
    UtteranceTooShort,
    attend,
    init_lstm,
    layer_norm,
    local_self_attention_batch,
    lstm_sequence,
    lstm_step,
    project_frame,
    pyramid_subsample_batch,
    window,
)
from .numerics import NEG_INF, Parameter, Tensor, broadcast_to, concat, embedding, masked_fill, softmax

SOS = -1


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 80
    n_p: int = 3
    n_lstm: int = 2
    d: int = 64
    d_dec: int = 64
    n_att: int = 4
    tau: int = 2
    w: int = 4
    vocab_size: int = 16
    blank: int = 0
    p_ss: float = 0.1
    n_dec: int = 2
    frame_step_ms: float = 10.0

    def __post_init__(self):
        if self.feature_dim < 1 or self.d < 2 or self.d_dec < 1:
            raise ValueError("feature_dim, d and d_dec must be positive (d >= 2)")
        if self.n_p < 0 or self.n_lstm < 1 or self.n_dec < 1:
            raise ValueError("need n_p >= 0, n_lstm >= 1 and n_dec >= 1")
        if self.n_att < 1 or self.d % self.n_att:
            raise ValueError(f"d={self.d} is not divisible by n_att={self.n_att}")
        if self.tau < 0 or self.w < 1:
            raise ValueError("need tau >= 0 and w >= 1")
        if not 0.0 <= self.p_ss <= 1.0:
            raise ValueError("p_ss must lie in [0, 1]")
        if self.blank != 0:
            raise ValueError("blank index is fixed at 0")
        if self.vocab_size < 1:
            raise ValueError("vocabulary must contain at least one unit")

    @property
    def mu(self) -> int:
        return 2 ** self.n_p

    @property
    def n_outputs(self) -> int:
        return self.vocab_size + 1

    @property
    def lookahead_ms(self) -> float:
        return self.tau * self.mu * self.frame_step_ms

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k not in known:
                raise ValueError(f"unknown model config key {k!r}")
            out[k] = float(v) if k in ("p_ss", "frame_step_ms") else int(v)
        return cls(**out)


class Vocabulary:
    """Output units; index 0 is blank and never appears in transcripts."""

    BLANK = "<blank>"

    def __init__(self, tokens):
        tokens = list(tokens)
        if len(tokens) < 2:
            raise ValueError("vocabulary needs blank plus at least one unit")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.tokens = tokens
        self._index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def synthetic(cls, n: int) -> "Vocabulary":
        return cls([cls.BLANK] + [f"t{k:02d}" for k in range(1, n + 1)])

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln.strip() for ln in lines if ln.strip()])

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @property
    def size(self) -> int:
        return len(self.tokens) - 1

    def __len__(self):
        return len(self.tokens)

    def encode(self, symbols) -> list[int]:
        ids = [self._index[s] for s in symbols]
        if 0 in ids:
            raise ValueError("blank cannot appear in a transcript")
        return ids

    def decode(self, ids) -> list[str]:
        if any(i <= 0 for i in ids):
            raise ValueError("blank cannot appear in a transcript")
        return [self.tokens[i] for i in ids]


class ModelParams(dict):
    """Name -> :class:`Parameter`, with unique names."""

    @classmethod
    def of(cls, params) -> "ModelParams":
        out = cls()
        for p in params:
            if p.name in out:
                raise ValueError(f"duplicate parameter name {p.name!r}")
            out[p.name] = p
        return out


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    c = config
    dh = c.d // c.n_att
    ps: list[Parameter] = []
    width = c.feature_dim
    for i in range(c.n_p):
        ps += init_lstm(rng, width, c.d, f"enc.plstm{i}")
        width = 2 * c.d
    for j in range(c.n_lstm):
        ps += init_lstm(rng, width, c.d, f"enc.lstm{j}")
        width = c.d
    s = 1.0 / math.sqrt(c.d)
    for name in ("Q", "K", "V"):
        ps.append(Parameter(rng.normal(0.0, s, (c.n_att, dh, c.d)), f"enc.att.{name}"))
    ps.append(Parameter(np.ones(c.d), "enc.ln.gain"))
    ps.append(Parameter(np.zeros(c.d), "enc.ln.bias"))
    ps.append(Parameter(rng.normal(0.0, 1.0, (c.n_outputs, c.d_dec)), "dec.embed"))
    width = c.d_dec
    for j in range(c.n_dec):
        ps += init_lstm(rng, width, c.d_dec, f"dec.lstm{j}")
    ps.append(Parameter(rng.normal(0.0, 1.0 / math.sqrt(c.d_dec), (c.n_att, dh, c.d_dec)), "joint.Q"))
    ps.append(Parameter(rng.normal(0.0, s, (c.n_att, dh, c.d)), "joint.K"))
    ps.append(Parameter(rng.normal(0.0, s, (c.n_att, dh, c.d)), "joint.V"))
    ps.append(Parameter(rng.normal(0.0, 1.0 / math.sqrt(c.d + c.d_dec), (c.n_outputs, c.d + c.d_dec)),
                        "joint.W_out"))
    ps.append(Parameter(np.zeros(c.n_outputs), "joint.b_out"))
    return ModelParams.of(ps)


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    return {name: p.shape for name, p in init_params(config, 0).items()}


@dataclass
class ChunkedEncoderOutput:
    chunks: list[np.ndarray]

    @property
    def widths(self) -> list[int]:
        return [len(c) for c in self.chunks]

    def __len__(self):
        return len(self.chunks)

    def concatenated(self) -> np.ndarray:
        return np.concatenate(self.chunks)


def chunk_encoder_outputs(h, w: int) -> ChunkedEncoderOutput:
    """Split into non-overlapping width-``w`` chunks; the last may be shorter."""
    h = np.asarray(h, dtype=np.float64)
    if len(h) < 1:
        raise ValueError("cannot chunk an empty encoder output")
    if w < 1:
        raise ValueError("chunk width must be >= 1")
    return ChunkedEncoderOutput([h[i:i + w] for i in range(0, len(h), w)])


def num_chunks(enc_len: int, w: int) -> int:
    return -(-enc_len // w)


def encoder_length(n_frames: int, n_p: int) -> int:
    for _ in range(n_p):
        n_frames //= 2
    return n_frames


def scheduled_sample(true_label: int, p_ss: float, rng: np.random.Generator, vocab_size: int) -> int:
    """True label with probability ``1 - p_ss``, else a uniform non-blank unit."""
    if rng.random() < p_ss:
        return int(rng.integers(1, vocab_size + 1))
    return true_label


class JointChunk:
    """Keys and values of one encoder chunk, ready for many queries."""

    __slots__ = ("frames", "keys", "values")

    def __init__(self, model: "Model", frames: np.ndarray):
        if len(frames) == 0:
            raise ValueError("joint network got an empty chunk")
        v = model._views()
        self.frames = frames
        self.keys = np.einsum("hkd,nd->nhk", v["jK"], frames)
        self.values = np.einsum("hkd,nd->nhk", v["jV"], frames)


class Model:
    def __init__(self, config: ModelConfig, params: ModelParams):
        shapes = expected_shapes(config)
        if set(shapes) != set(params):
            missing = sorted(set(shapes) ^ set(params))
            raise ValueError(f"parameter names do not match topology: {missing[:5]}")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: shape {params[name].shape}, expected {shape}")
        self.config = config
        self.params = params
        self._cache = None

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "Model":
        return cls(config, init_params(config, seed))

    def invalidate(self) -> None:
        """Drop cached inference views after parameters changed in place."""
        self._cache = None

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def _views(self) -> dict:
        if self._cache is None:
            c, p = self.config, self.params
            self._cache = {
                "plstm": [LstmParams.from_bundle(p, f"enc.plstm{i}") for i in range(c.n_p)],
                "lstm": [LstmParams.from_bundle(p, f"enc.lstm{j}") for j in range(c.n_lstm)],
                "att": SelfAttentionParams(p["enc.att.Q"].data, p["enc.att.K"].data, p["enc.att.V"].data, c.tau),
                "ln": LayerNormParams(p["enc.ln.gain"].data, p["enc.ln.bias"].data),
                "dec": [LstmParams.from_bundle(p, f"dec.lstm{j}") for j in range(c.n_dec)],
                "embed": p["dec.embed"].data,
                "jQ": p["joint.Q"].data,
                "jK": p["joint.K"].data,
                "jV": p["joint.V"].data,
                "W_out": p["joint.W_out"].data,
                "b_out": p["joint.b_out"].data,
            }
        return self._cache

    # inference ------------------------------------------------------------
    def encode(self, features, return_weights: bool = False):
        """Encoder outputs ``(T_enc, d)``; optionally also each frame's attention weights."""
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.config.feature_dim:
            raise ValueError(f"features must be (T, {self.config.feature_dim}), got {feats.shape}")
        if len(feats) < self.config.mu:
            raise UtteranceTooShort(f"{len(feats)} frames < subsampling factor {self.config.mu}")
        stream = EncoderStream(self)
        for frame in feats:
            stream.push(frame)
        stream.finish()
        h = np.array(stream.outputs)
        return (h, stream.weights) if return_weights else h

    def predict_step(self, prev_token: int, state=None):
        """Advance the prediction network by one token.

        ``prev_token`` is :data:`SOS` or a non-blank unit. Returns ``(s_u, state')``
        where ``state'`` is a tuple of per-layer ``(h, c)``.
        """
        if prev_token == self.config.blank:
            raise ValueError("blank is never fed to the prediction network")
        if prev_token != SOS and not 1 <= prev_token <= self.config.vocab_size:
            raise ValueError(f"token {prev_token} outside the vocabulary")
        v = self._views()
        x = v["embed"][0 if prev_token == SOS else prev_token]
        state = state or (None,) * self.config.n_dec
        new_state = []
        for layer, st in zip(v["dec"], state):
            x, st = lstm_step(layer, x, st)
            new_state.append(st)
        return x, tuple(new_state)

    def joint_chunk(self, frames) -> JointChunk:
        return JointChunk(self, np.asarray(frames, dtype=np.float64))

    def joint(self, chunk, s_u, return_weights: bool = False):
        """Logits over blank plus units for one chunk and one decoder state."""
        if not isinstance(chunk, JointChunk):
            chunk = self.joint_chunk(chunk)
        v = self._views()
        q = v["jQ"] @ np.asarray(s_u, dtype=np.float64)
        o, alpha = attend(q, chunk.keys, chunk.values)
        logits = v["W_out"] @ np.concatenate([o, s_u]) + v["b_out"]
        return (logits, alpha) if return_weights else logits

    # training graph ----------------------------------------------------------
    def forward_logits(self, features: np.ndarray, feat_lengths, dec_inputs: np.ndarray):
        """Joint logits ``(B, C_max, U_max + 1, |Y| + 1)`` for a padded batch.

        ``dec_inputs`` holds embedding rows: 0 for the start symbol, then the
        (possibly scheduled-sampled) previous labels. Returns the logits and
        the per-utterance chunk counts.
        """
        c, p = self.config, self.params
        x = Tensor(np.asarray(features, dtype=np.float64))
        lengths = np.asarray(feat_lengths)
        if lengths.min() < c.mu:
            raise UtteranceTooShort(f"utterance of {lengths.min()} frames < {c.mu}")
        for i in range(c.n_p):
            x = pyramid_subsample_batch(lstm_sequence(x, LstmParams.from_bundle(p, f"enc.plstm{i}")))
            lengths = lengths // 2
        for j in range(c.n_lstm):
            x = lstm_sequence(x, LstmParams.from_bundle(p, f"enc.lstm{j}"))
        att = SelfAttentionParams(p["enc.att.Q"], p["enc.att.K"], p["enc.att.V"], c.tau)
        h = local_self_attention_batch(x, lengths, att, LayerNormParams(p["enc.ln.gain"], p["enc.ln.bias"]))

        s = embedding(p["dec.embed"], dec_inputs)
        for j in range(c.n_dec):
            s = lstm_sequence(s, LstmParams.from_bundle(p, f"dec.lstm{j}"))

        chunk_counts = [num_chunks(int(n), c.w) for n in lengths]
        return self._joint_batch(h, lengths, s), chunk_counts

    def _joint_batch(self, h: Tensor, enc_lengths, s: Tensor) -> Tensor:
        c, p = self.config, self.params
        B, T, d = h.shape
        U1 = s.shape[1]
        n_att, dh = c.n_att, c.d // c.n_att
        C = num_chunks(T, c.w)
        if C * c.w > T:
            h = concat([h, Tensor(np.zeros((B, C * c.w - T, d)))], axis=1)
        hc = h.reshape(B, C, c.w, d)
        q = (s @ p["joint.Q"].reshape(n_att * dh, c.d_dec).T).reshape(B, U1, n_att, dh)
        q = q.transpose(0, 2, 1, 3).reshape(B, 1, n_att, U1, dh)
        k = (hc @ p["joint.K"].reshape(n_att * dh, d).T).reshape(B, C, c.w, n_att, dh)
        v = (hc @ p["joint.V"].reshape(n_att * dh, d).T).reshape(B, C, c.w, n_att, dh)
        scores = (q @ k.transpose(0, 1, 3, 4, 2)) * (1.0 / math.sqrt(dh))
        frame = np.arange(C)[:, None] * c.w + np.arange(c.w)[None, :]
        valid = frame[None] < np.asarray(enc_lengths)[:, None, None]
        valid[:, :, 0] = True  # chunks past the end stay finite; the loss ignores them
        scores = masked_fill(scores, ~valid[:, :, None, None, :], NEG_INF)
        alpha = softmax(scores, axis=-1)
        o = (alpha @ v.transpose(0, 1, 3, 2, 4)).transpose(0, 1, 3, 2, 4).reshape(B, C, U1, d)
        s_b = broadcast_to(s.reshape(B, 1, U1, c.d_dec), (B, C, U1, c.d_dec))
        return concat([o, s_b], axis=-1) @ p["joint.W_out"].T + p["joint.b_out"]

    # persistence ---------------------------------------------------------------
    def save(self, path) -> None:
        ckpt.write(path, asdict(self.config),
                   [(name, p.data.astype(np.float32), None) for name, p in self.params.items()])

    @classmethod
    def load(cls, path) -> "Model":
        """Load a float or 8-bit checkpoint; 8-bit weights are dequantized here."""
        config, entries = ckpt.read(path)
        cfg = ModelConfig.from_dict(config)
        ps = []
        for name, (arr, scale) in entries.items():
            data = arr.astype(np.float64)
            if scale is not None:
                data = data * float(scale)
            ps.append(Parameter(data, name))
        return cls(cfg, ModelParams.of(ps))

    def copy(self) -> "Model":
        return Model(self.config, ModelParams.of(Parameter(p.data.copy(), n) for n, p in self.params.items()))


class EncoderStream:
    """Frame-synchronous encoder with ``tau`` frames of attention lookahead.

    ``push`` consumes one feature frame; encoder outputs appear in
    :attr:`outputs` as soon as their attention window is complete.
    ``finish`` releases the tail with windows truncated at the sequence end.
    """

    def __init__(self, model: Model):
        self.model = model
        v = model._views()
        self._plstm = v["plstm"]
        self._lstm = v["lstm"]
        self._att = v["att"]
        self._ln = v["ln"]
        self._plstm_state = [None] * len(self._plstm)
        self._pending = [None] * len(self._plstm)
        self._lstm_state = [None] * len(self._lstm)
        self._h: list[np.ndarray] = []
        self._q: list[np.ndarray] = []
        self._k: list[np.ndarray] = []
        self._v: list[np.ndarray] = []
        self.outputs: list[np.ndarray] = []
        self.weights: list[np.ndarray] = []  # (n_att, window) per released output
        self.n_frames = 0
        self.finished = False

    def push(self, frame) -> int:
        """Consume one frame; return how many new encoder outputs became ready."""
        if self.finished:
            raise RuntimeError("encoder stream already finished")
        x = np.asarray(frame, dtype=np.float64)
        if x.shape != (self.model.config.feature_dim,):
            raise ValueError(f"frame has shape {x.shape}, expected ({self.model.config.feature_dim},)")
        self.n_frames += 1
        for i, layer in enumerate(self._plstm):
            x, self._plstm_state[i] = lstm_step(layer, x, self._plstm_state[i])
            if self._pending[i] is None:
                self._pending[i] = x
                return 0
            x = np.concatenate([self._pending[i], x])
            self._pending[i] = None
        for j, layer in enumerate(self._lstm):
            x, self._lstm_state[j] = lstm_step(layer, x, self._lstm_state[j])
        self._h.append(x)
        q, k, v = project_frame(self._att, x)
        self._q.append(q)
        self._k.append(k)
        self._v.append(v)
        return self._release(len(self._h) - self._att.tau)

    def finish(self) -> int:
        if self.finished:
            raise RuntimeError("encoder stream already finished")
        self.finished = True
        return self._release(len(self._h))

    def _release(self, upto: int) -> int:
        n = len(self._h)
        start = len(self.outputs)
        for t in range(start, upto):
            lo, hi = window(t, self._att.tau, n)
            ctx, alpha = attend(self._q[t], np.stack(self._k[lo:hi]), np.stack(self._v[lo:hi]))
            self.outputs.append(layer_norm(ctx + self._h[t], self._ln))
            self.weights.append(alpha)
        return max(0, upto - start)
