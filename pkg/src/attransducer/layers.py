"""Encoder building blocks: LSTM, pyramidal subsampling, LayerNorm and
windowed multi-head self-attention.

Every block comes in two flavours. The plain-numpy functions work frame by
frame and are what inference and streaming run; because streaming and
offline decoding call exactly the same per-frame code, their outputs agree
bit for bit. The ``*_batch`` / ``lstm_sequence`` variants take padded
:class:`~attransducer.numerics.Tensor` batches and record on the tape for
training.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import NEG_INF, Parameter, Tensor, _sigmoid, _softmax_np, concat, masked_fill, softmax, sqrt

LN_EPS = 1e-5
GATES = ("i", "f", "g", "o")


class UtteranceTooShort(ValueError):
    pass


def _np(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


@dataclass
class LstmParams:
    """Per-gate weights over ``concat(x, h)`` plus per-gate biases.

    Gate order is input, forget, cell candidate, output. Entries may be
    plain arrays or :class:`Parameter` objects.
    """

    weights: tuple
    biases: tuple
    input_dim: int = field(init=False)
    hidden_dim: int = field(init=False)

    def __post_init__(self):
        if len(self.weights) != 4 or len(self.biases) != 4:
            raise ValueError("LSTM needs exactly four gate matrices and biases")
        hidden, total = _np(self.weights[0]).shape
        self.hidden_dim = hidden
        self.input_dim = total - hidden
        if hidden <= 0 or self.input_dim <= 0:
            raise ValueError(f"degenerate LSTM dims input={self.input_dim} hidden={hidden}")
        for w, b in zip(self.weights, self.biases):
            if _np(w).shape != (hidden, total) or _np(b).shape != (hidden,):
                raise ValueError("inconsistent LSTM gate shapes")
        self._stacked = None

    @classmethod
    def from_bundle(cls, bundle, prefix: str) -> "LstmParams":
        return cls(tuple(bundle[f"{prefix}.W_{g}"] for g in GATES),
                   tuple(bundle[f"{prefix}.b_{g}"] for g in GATES))

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        if self._stacked is None:
            self._stacked = (np.concatenate([_np(w) for w in self.weights]),
                             np.concatenate([_np(b) for b in self.biases]))
        return self._stacked


def init_lstm(rng: np.random.Generator, input_dim: int, hidden_dim: int, prefix: str) -> list[Parameter]:
    if input_dim <= 0 or hidden_dim <= 0:
        raise ValueError(f"degenerate LSTM dims input={input_dim} hidden={hidden_dim}")
    bound = 1.0 / math.sqrt(hidden_dim)
    out = []
    for g in GATES:
        out.append(Parameter(rng.uniform(-bound, bound, (hidden_dim, input_dim + hidden_dim)), f"{prefix}.W_{g}"))
    for g in GATES:
        # forget-gate bias of one keeps early gradients flowing through time
        b = np.ones(hidden_dim) if g == "f" else np.zeros(hidden_dim)
        out.append(Parameter(b, f"{prefix}.b_{g}"))
    return out


def lstm_step(params: LstmParams, x_t, state=None):
    """One LSTM step. Returns ``(h_t, (h_t, c_t))``."""
    W, b = params.stacked()
    H = params.hidden_dim
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (params.input_dim,):
        raise ValueError(f"LSTM input has shape {x_t.shape}, expected ({params.input_dim},)")
    if state is None:
        h, c = np.zeros(H), np.zeros(H)
    else:
        h, c = state
    z = W @ np.concatenate([x_t, h]) + b
    i = _sigmoid(z[:H])
    f = _sigmoid(z[H:2 * H])
    g = np.tanh(z[2 * H:3 * H])
    o = _sigmoid(z[3 * H:])
    c = f * c + i * g
    h = o * np.tanh(c)
    return h, (h, c)


def lstm_sequence(x: Tensor, params: LstmParams) -> Tensor:
    """Run an LSTM over a padded batch ``(B, T, I)`` from zero state.

    A single tape node with a hand-written backward through time. Padding at
    the end of a sequence cannot leak into earlier outputs.
    """
    X = x.data
    B, T, I = X.shape
    H = params.hidden_dim
    if I != params.input_dim:
        raise ValueError(f"LSTM input width {I}, expected {params.input_dim}")
    W, bias = (np.concatenate([w.data for w in params.weights]),
               np.concatenate([b.data for b in params.biases]))
    Wx, Wh = W[:, :I], W[:, I:]
    XW = X @ Wx.T + bias
    hs = np.zeros((B, T + 1, H))
    cs = np.zeros((B, T + 1, H))
    acts = np.zeros((B, T, 4 * H))
    for t in range(T):
        z = XW[:, t] + hs[:, t] @ Wh.T
        a = acts[:, t]
        a[:, :2 * H] = _sigmoid(z[:, :2 * H])
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        a[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
        cs[:, t + 1] = a[:, H:2 * H] * cs[:, t] + a[:, :H] * a[:, 2 * H:3 * H]
        hs[:, t + 1] = a[:, 3 * H:] * np.tanh(cs[:, t + 1])

    def back(gH):
        dZ = np.zeros((B, T, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            a = acts[:, t]
            i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            tc = np.tanh(cs[:, t + 1])
            dh = gH[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = dZ[:, t]
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H:2 * H] = dc * cs[:, t] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
            dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz @ Wh
        flat = dZ.reshape(B * T, 4 * H)
        dW = np.concatenate([flat.T @ X.reshape(B * T, I),
                             flat.T @ hs[:, :T].reshape(B * T, H)], axis=1)
        db = flat.sum(axis=0)
        dX = dZ @ Wx
        return (dX, *np.split(dW, 4), *np.split(db, 4))

    return Tensor.from_op(hs[:, 1:].copy(), (x, *params.weights, *params.biases), back)


# pyramid --------------------------------------------------------------------

def pyramid_subsample(seq) -> np.ndarray:
    """Concatenate adjacent frame pairs; an odd trailing frame is dropped."""
    a = np.asarray(seq, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 2:
        raise UtteranceTooShort(f"need at least 2 frames to subsample, got {len(a)}")
    n = a.shape[0] // 2
    return a[:2 * n].reshape(n, 2 * a.shape[1])


def pyramid_subsample_batch(x: Tensor) -> Tensor:
    B, T, k = x.shape
    n = T // 2
    return x[:, :2 * n].reshape(B, n, 2 * k)


# layer norm ---------------------------------------------------------------------

@dataclass
class LayerNormParams:
    gain: object
    bias: object
    eps: float = LN_EPS

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("LayerNorm epsilon must be positive")


def layer_norm(x, params: LayerNormParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ValueError("LayerNorm needs at least 2 features")
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return _np(params.gain) * (x - mu) / np.sqrt(var + params.eps) + _np(params.bias)


def layer_norm_batch(x: Tensor, params: LayerNormParams) -> Tensor:
    if x.shape[-1] < 2:
        raise ValueError("LayerNorm needs at least 2 features")
    centred = x - x.mean(axis=-1, keepdims=True)
    var = (centred * centred).mean(axis=-1, keepdims=True)
    return params.gain * (centred / sqrt(var + params.eps)) + params.bias


# local self-attention ---------------------------------------------------------------

@dataclass
class SelfAttentionParams:
    """Per-head projections stacked as ``(n_att, d / n_att, d)``."""

    Q: object
    K: object
    V: object
    tau: int

    def __post_init__(self):
        n_att, dh, d = _np(self.Q).shape
        if n_att <= 0 or dh * n_att != d:
            raise ValueError(f"model width {d} not divisible into {n_att} heads")
        if _np(self.K).shape != (n_att, dh, d) or _np(self.V).shape != (n_att, dh, d):
            raise ValueError("Q, K, V must share shape (n_att, d/n_att, d)")
        if self.tau < 0:
            raise ValueError("context length tau must be >= 0")

    @property
    def n_att(self) -> int:
        return _np(self.Q).shape[0]

    @property
    def d(self) -> int:
        return _np(self.Q).shape[2]


def project_frame(att: SelfAttentionParams, h: np.ndarray):
    """Per-head query, key and value of one frame, each ``(n_att, dh)``."""
    if h.shape != (att.d,):
        raise ValueError(f"attention input width {h.shape}, expected ({att.d},)")
    return _np(att.Q) @ h, _np(att.K) @ h, _np(att.V) @ h


def attend(q: np.ndarray, keys: np.ndarray, values: np.ndarray):
    """Multi-head scaled dot-product attention of one query over a window.

    ``q`` is ``(n_att, dh)``; ``keys``/``values`` are ``(n, n_att, dh)``.
    Returns the concatenated head outputs and the ``(n_att, n)`` weights.
    """
    n_att, dh = q.shape
    scores = np.einsum("hk,nhk->hn", q, keys) / math.sqrt(dh)
    alpha = _softmax_np(scores, axis=-1)
    ctx = np.einsum("hn,nhk->hk", alpha, values)
    return ctx.reshape(n_att * dh), alpha


def window(t: int, tau: int, length: int) -> tuple[int, int]:
    """Half-open index range ``[t - tau, t + tau]`` clipped to the sequence."""
    return max(0, t - tau), min(length, t + tau + 1)


def local_self_attention(seq, att: SelfAttentionParams, ln: LayerNormParams, return_weights: bool = False):
    """Residual + LayerNorm over windowed multi-head self-attention."""
    h = np.asarray(seq, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != att.d:
        raise ValueError(f"attention input shape {h.shape}, expected (T, {att.d})")
    T = h.shape[0]
    proj = [project_frame(att, h[t]) for t in range(T)]
    keys = np.stack([p[1] for p in proj]) if T else np.zeros((0, att.n_att, att.d // att.n_att))
    vals = np.stack([p[2] for p in proj]) if T else keys
    out = np.zeros_like(h)
    weights = []
    for t in range(T):
        lo, hi = window(t, att.tau, T)
        ctx, alpha = attend(proj[t][0], keys[lo:hi], vals[lo:hi])
        out[t] = layer_norm(ctx + h[t], ln)
        weights.append(alpha)
    return (out, weights) if return_weights else out


def local_self_attention_batch(h: Tensor, lengths, att: SelfAttentionParams, ln: LayerNormParams) -> Tensor:
    """Padded-batch version of :func:`local_self_attention` on the tape."""
    B, T, d = h.shape
    n_att = att.n_att
    dh = d // n_att

    def heads(W):
        return (h @ W.reshape(n_att * dh, d).T).reshape(B, T, n_att, dh).transpose(0, 2, 1, 3)

    q, k, v = heads(att.Q), heads(att.K), heads(att.V)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
    idx = np.arange(T)
    band = np.abs(idx[:, None] - idx[None, :]) <= att.tau
    valid = band[None] & (idx[None, None, :] < np.asarray(lengths)[:, None, None])
    valid |= np.eye(T, dtype=bool)[None]  # padded rows keep a finite softmax
    scores = masked_fill(scores, ~valid[:, None], NEG_INF)
    alpha = softmax(scores, axis=-1)
    ctx = (alpha @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
    return layer_norm_batch(ctx + h, ln)
