"""Fast oracle cross-checks, runnable without pytest (``attransducer selftest``)."""
from __future__ import annotations

import time

import numpy as np

from .data import Utterance
from .decoding import decode_utterance, greedy_decode
from .layers import LayerNormParams, SelfAttentionParams, local_self_attention
from .loss import AlignmentGrid, enumerate_paths, forward_backward
from .model import Model, ModelConfig
from .numerics import backward
from .reference import reference_nll
from .streaming import stream_utterance
from .train import loss_on_batch


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))


def fd_entry(f, x: np.ndarray, i, h: float = 3e-4) -> float:
    """Sixth-order central difference of scalar ``f()`` in entry ``x[i]``."""
    old = x[i]
    vals = {}
    for k in (-3, -2, -1, 1, 2, 3):
        x[i] = old + k * h
        vals[k] = f()
    x[i] = old
    return float((45 * (vals[1] - vals[-1]) - 9 * (vals[2] - vals[-2]) + (vals[3] - vals[-3])) / (60 * h))


def finite_difference(f, x: np.ndarray, h: float = 3e-4) -> np.ndarray:
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        g[i] = fd_entry(f, x, i, h)
    return g


GRADCHECK_CONFIG = ModelConfig(feature_dim=4, n_p=2, n_lstm=1, d=8, d_dec=8, n_att=2, tau=1, w=2,
                               vocab_size=3, p_ss=0.0)


def gradient_check(seed: int = 0, n_params: int | None = None, T: int = 16, tokens=(1, 2)):
    """Relative errors of the taped gradient against finite differences of the
    extended-precision reference loss.

    Checks every parameter entry, or ``n_params`` random entries. Returns
    ``(worst, n_checked, location)``.
    """
    rng = np.random.default_rng(seed)
    model = Model.init(GRADCHECK_CONFIG, seed)
    feats = rng.normal(size=(T, GRADCHECK_CONFIG.feature_dim))
    grads = backward(loss_on_batch(model, [Utterance(feats, tuple(tokens))]), model.parameters())
    f = lambda: reference_nll(model, feats, tokens)
    if n_params is None:
        entries = [(name, i) for name, p in model.params.items() for i in np.ndindex(p.shape)]
    else:
        names = list(model.params)
        entries = []
        for _ in range(n_params):
            p = model.params[names[int(rng.integers(len(names)))]]
            entries.append((p.name, tuple(int(rng.integers(n)) for n in p.shape)))
    worst, where = 0.0, None
    for name, i in entries:
        fd = fd_entry(f, model.params[name].data, i)
        err = float(relative_error(np.array(grads[name][i]), np.array(fd)))
        if err > worst:
            worst, where = err, (name, i)
    return worst, len(entries), where


def check_loss_oracle(rng, n: int = 200) -> float:
    worst = 0.0
    for _ in range(n):
        C, U, K = int(rng.integers(1, 5)), int(rng.integers(0, 4)), int(rng.integers(2, 5))
        grid = AlignmentGrid.from_logits(rng.normal(size=(C, U + 1, K)), rng.integers(1, K, size=U))
        worst = max(worst, abs(forward_backward(grid).nll - enumerate_paths(grid)))
    return worst


def check_attention(rng) -> float:
    d, n_att, tau = 8, 2, 2
    att = SelfAttentionParams(*(rng.normal(size=(n_att, d // n_att, d)) for _ in range(3)), tau)
    _, weights = local_self_attention(rng.normal(size=(7, d)), att, LayerNormParams(np.ones(d), np.zeros(d)),
                                      return_weights=True)
    return max(float(np.abs(w.sum(axis=-1) - 1).max()) for w in weights)


def check_gradient(rng, n_params: int = 40) -> float:
    return gradient_check(int(rng.integers(1 << 30)), n_params)[0]


def check_streaming(rng) -> bool:
    cfg = ModelConfig(feature_dim=6, n_p=2, n_lstm=1, d=8, d_dec=8, n_att=2, tau=1, w=2, vocab_size=4)
    model = Model.init(cfg, int(rng.integers(1 << 30)))
    model.params["joint.W_out"].data *= 6.0
    model.invalidate()
    ok = True
    for _ in range(5):
        feats = rng.normal(size=(int(rng.integers(8, 80)), 6))
        offline = decode_utterance(feats, model, 3).tokens
        for step in (1, 7, len(feats)):
            ok &= stream_utterance(model, feats, 3, step)[0] == offline
        ok &= decode_utterance(feats, model, 1).tokens == greedy_decode(feats, model)
    return ok


def run_selftest(seed: int = 0, verbose: bool = False) -> bool:
    rng = np.random.default_rng(seed)
    checks = [
        ("loss == path enumeration", lambda: check_loss_oracle(rng), lambda v: v <= 1e-9),
        ("attention weights sum to 1", lambda: check_attention(rng), lambda v: v <= 1e-9),
        ("gradient vs finite differences", lambda: check_gradient(rng), lambda v: v <= 1e-5),
        ("stream == offline, beam 1 == greedy", lambda: check_streaming(rng), bool),
    ]
    all_ok = True
    for name, run, accept in checks:
        t0 = time.perf_counter()
        value = run()
        ok = bool(accept(value))
        all_ok &= ok
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {value}  ({time.perf_counter() - t0:.1f}s)")
    return all_ok
