"""Chunk-synchronous beam search and greedy decoding.

Within a chunk a hypothesis either emits a unit (and stays in the chunk) or
emits blank, which finalizes it for the chunk. Scores are single-path
log-probabilities; duplicate prefixes are log-added when they meet, but no
summation over proper prefixes is attempted.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import SOS, Model, chunk_encoder_outputs
from .numerics import log_softmax, logaddexp

U_MAX = 8


@dataclass
class Hypothesis:
    prefix: tuple[int, ...]
    log_prob: float
    state: tuple = field(repr=False)
    s: np.ndarray = field(repr=False)


def initial_beam(model: Model) -> list[Hypothesis]:
    s0, state = model.predict_step(SOS)
    return [Hypothesis((), 0.0, state, s0)]


def _extend(model: Model, hyp: Hypothesis, token: int, log_prob: float) -> Hypothesis:
    s, state = model.predict_step(token, hyp.state)
    return Hypothesis(hyp.prefix + (token,), log_prob, state, s)


def beam_search_chunk(beam: list[Hypothesis], chunk, model: Model, B: int, u_max: int = U_MAX) -> list[Hypothesis]:
    """Advance a beam across one encoder chunk; returns at most ``B`` hypotheses.

    Expansion proceeds in rounds. Each round scores every active hypothesis,
    offers its blank-terminated version as a finalized candidate and its
    unit extensions as active candidates, then keeps the best ``B`` of all
    finalized-so-far and new candidates. After ``u_max`` emissions only the
    blank continuation remains, so the search always terminates.
    """
    if not beam:
        raise ValueError("beam search needs a non-empty beam")
    if B < 1:
        raise ValueError("beam size must be >= 1")
    jc = model.joint_chunk(chunk)
    finals: dict[tuple[int, ...], tuple[Hypothesis, float]] = {}
    active = list(beam)
    for step in range(u_max + 1):
        if not active:
            break
        pool = []
        for h in active:
            logp = log_softmax(model.joint(jc, h.s))
            score = h.log_prob + logp[0]
            if h.prefix in finals:
                old, _ = finals[h.prefix]
                finals[h.prefix] = (Hypothesis(h.prefix, logaddexp(old.log_prob, score), h.state, h.s), logp[0])
            else:
                finals[h.prefix] = (Hypothesis(h.prefix, score, h.state, h.s), logp[0])
            if step < u_max:
                for k in range(1, len(logp)):
                    pool.append((h.log_prob + logp[k], logp[k], 1, k, h))
        pool += [(hyp.log_prob, local, 0, 0, hyp) for hyp, local in finals.values()]
        # ties: higher local score, then finalized before extension, then lower unit id
        pool.sort(key=lambda e: (-e[0], -e[1], e[2], e[3]))
        keep = pool[:B]
        kept_final = {e[4].prefix for e in keep if e[2] == 0}
        finals = {p: v for p, v in finals.items() if p in kept_final}
        active = [_extend(model, e[4], e[3], e[0]) for e in keep if e[2] == 1]
    out = sorted((h for h, _ in finals.values()), key=lambda h: -h.log_prob)
    return out[:B]


def greedy_chunk(hyp: Hypothesis, chunk, model: Model, u_max: int = U_MAX) -> Hypothesis:
    jc = model.joint_chunk(chunk)
    for _ in range(u_max):
        logp = log_softmax(model.joint(jc, hyp.s))
        k = int(np.argmax(logp))
        if k == 0:
            return Hypothesis(hyp.prefix, hyp.log_prob + logp[0], hyp.state, hyp.s)
        hyp = _extend(model, hyp, k, hyp.log_prob + logp[k])
    logp = log_softmax(model.joint(jc, hyp.s))
    return Hypothesis(hyp.prefix, hyp.log_prob + logp[0], hyp.state, hyp.s)


@dataclass
class DecodeResult:
    tokens: list[int]
    log_prob: float
    chunk_ms: list[float]


def greedy_decode(features, model: Model, u_max: int = U_MAX, return_result: bool = False):
    """Per chunk, follow the argmax until it is blank (or ``u_max`` units)."""
    h = model.encode(features)
    hyp = initial_beam(model)[0]
    times = []
    for chunk in chunk_encoder_outputs(h, model.config.w).chunks:
        t0 = time.perf_counter()
        hyp = greedy_chunk(hyp, chunk, model, u_max)
        times.append(1e3 * (time.perf_counter() - t0))
    if return_result:
        return DecodeResult(list(hyp.prefix), hyp.log_prob, times)
    return list(hyp.prefix)


class ChunkDecoder:
    """Folds :func:`beam_search_chunk` over encoder chunks as they arrive."""

    def __init__(self, model: Model, B: int, u_max: int = U_MAX):
        if B < 1:
            raise ValueError("beam size must be >= 1")
        self.model = model
        self.B = B
        self.u_max = u_max
        self.beam = initial_beam(model)
        self.n_chunks = 0

    def advance(self, chunk) -> None:
        self.beam = beam_search_chunk(self.beam, chunk, self.model, self.B, self.u_max)
        self.n_chunks += 1

    @property
    def best(self) -> Hypothesis:
        return max(self.beam, key=lambda h: h.log_prob)

    def stable_prefix(self) -> list[int]:
        """Longest prefix shared by every hypothesis in the beam."""
        prefixes = [h.prefix for h in self.beam]
        n = min(len(p) for p in prefixes)
        out = []
        for i in range(n):
            tok = prefixes[0][i]
            if any(p[i] != tok for p in prefixes):
                break
            out.append(tok)
        return out


def decode_utterance(features, model: Model, B: int = 8, u_max: int = U_MAX) -> DecodeResult:
    """Encode, chunk, and beam-search chunk by chunk."""
    h = model.encode(features)
    dec = ChunkDecoder(model, B, u_max)
    times = []
    for chunk in chunk_encoder_outputs(h, model.config.w).chunks:
        t0 = time.perf_counter()
        dec.advance(chunk)
        times.append(1e3 * (time.perf_counter() - t0))
    best = dec.best
    return DecodeResult(list(best.prefix), best.log_prob, times)
