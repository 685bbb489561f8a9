"""Straight-line forward pass and loss in extended precision.

Shares no code with :mod:`attransducer.model` beyond parameter names, so it
serves as an independent oracle. Running in ``np.longdouble`` (80-bit on
x86-64) pushes round-off far enough below float64 that finite differences
of :func:`reference_nll` resolve gradients of order 1e-8 to better than
1e-5 relative.
"""
from __future__ import annotations

import numpy as np

from .layers import LN_EPS
from .model import Model

LD = np.longdouble


def extended_precision_available() -> bool:
    return np.finfo(LD).eps < 1e-18


def _sigmoid(x):
    return 1 / (1 + np.exp(-x))


def _lstm(params, prefix: str, xs):
    W = {g: params[f"{prefix}.W_{g}"].data.astype(LD) for g in "ifgo"}
    b = {g: params[f"{prefix}.b_{g}"].data.astype(LD) for g in "ifgo"}
    H = len(b["i"])
    h, c = np.zeros(H, LD), np.zeros(H, LD)
    out = []
    for x in xs:
        z = np.concatenate([x, h])
        i = _sigmoid(W["i"] @ z + b["i"])
        f = _sigmoid(W["f"] @ z + b["f"])
        g = np.tanh(W["g"] @ z + b["g"])
        o = _sigmoid(W["o"] @ z + b["o"])
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h)
    return out


def _attend(Q, K, V, query, frames):
    """Multi-head dot-product attention of one query vector over ``frames``."""
    n_att, dh, _ = Q.shape
    heads = []
    for k in range(n_att):
        q = Q[k] @ query
        scores = np.array([q @ (K[k] @ x) for x in frames]) / np.sqrt(LD(dh))
        a = np.exp(scores - scores.max())
        a /= a.sum()
        heads.append(sum(a[j] * (V[k] @ frames[j]) for j in range(len(frames))))
    return np.concatenate(heads)


def reference_encode(model: Model, features) -> list:
    c, p = model.config, model.params
    xs = [row.astype(LD) for row in np.asarray(features)]
    for i in range(c.n_p):
        hs = _lstm(p, f"enc.plstm{i}", xs)
        xs = [np.concatenate([hs[2 * k], hs[2 * k + 1]]) for k in range(len(hs) // 2)]
    for j in range(c.n_lstm):
        xs = _lstm(p, f"enc.lstm{j}", xs)
    Q, K, V = (p[f"enc.att.{n}"].data.astype(LD) for n in "QKV")
    gain, bias = p["enc.ln.gain"].data.astype(LD), p["enc.ln.bias"].data.astype(LD)
    out = []
    for t in range(len(xs)):
        lo, hi = max(0, t - c.tau), min(len(xs), t + c.tau + 1)
        v = _attend(Q, K, V, xs[t], xs[lo:hi]) + xs[t]
        centred = v - v.mean()
        out.append(gain * centred / np.sqrt((centred * centred).mean() + LD(LN_EPS)) + bias)
    return out


def reference_nll(model: Model, features, tokens) -> float:
    c, p = model.config, model.params
    h = reference_encode(model, features)
    chunks = [h[i:i + c.w] for i in range(0, len(h), c.w)]
    embed = p["dec.embed"].data.astype(LD)
    s = [embed[0]] + [embed[t] for t in tokens]
    for j in range(c.n_dec):
        s = _lstm(p, f"dec.lstm{j}", s)
    Q, K, V = (p[f"joint.{n}"].data.astype(LD) for n in "QKV")
    W, b = p["joint.W_out"].data.astype(LD), p["joint.b_out"].data.astype(LD)

    def log_probs(ci, u):
        z = W @ np.concatenate([_attend(Q, K, V, s[u], chunks[ci]), s[u]]) + b
        m = z.max()
        return z - m - np.log(np.exp(z - m).sum())

    C, U = len(chunks), len(tokens)
    lp = [[log_probs(ci, u) for u in range(U + 1)] for ci in range(C)]
    alpha = np.full((C, U + 1), -np.inf, dtype=LD)
    alpha[0, 0] = 0
    for ci in range(C):
        for u in range(U + 1):
            if ci > 0:
                alpha[ci, u] = np.logaddexp(alpha[ci, u], alpha[ci - 1, u] + lp[ci - 1][u][0])
            if u > 0:
                alpha[ci, u] = np.logaddexp(alpha[ci, u], alpha[ci, u - 1] + lp[ci][u - 1][tokens[u - 1]])
    return -(alpha[C - 1, U] + lp[C - 1][U][0])
