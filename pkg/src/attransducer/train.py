"""Training loop: frame-budget batching, scheduled sampling, Adam."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .loss import grid_elements, transducer_loss
from .model import Model, encoder_length, num_chunks
from .numerics import backward

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    batch_frames: int = 2000
    lr: float = 2e-3
    steps: int = 2500
    p_ss: float | None = None  # None: take the model config's value
    clip_norm: float = 5.0
    deterministic: bool = True
    checkpoint_every: int = 0
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.batch_frames < 1 or self.steps < 0 or self.lr < 0 or self.clip_norm <= 0:
            raise ValueError("invalid training config")
        if self.p_ss is not None and not 0.0 <= self.p_ss <= 1.0:
            raise ValueError("p_ss must lie in [0, 1]")


class Adam:
    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p in self.params:
            g = grads[p.name]
            m, v = self.m[p.name], self.v[p.name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def make_batches(dataset, batch_frames: int, rng: np.random.Generator) -> list[list[int]]:
    """Shuffle, then cut consecutive groups whose padded size fits the frame budget."""
    order = rng.permutation(len(dataset))
    batches, cur, longest = [], [], 0
    for i in order:
        n = dataset[i].n_frames
        if cur and max(longest, n) * (len(cur) + 1) > batch_frames:
            batches.append(cur)
            cur, longest = [], 0
        cur.append(int(i))
        longest = max(longest, n)
    if cur:
        batches.append(cur)
    return batches


def collate(utts, vocab_size: int, p_ss: float, rng: np.random.Generator):
    """Pad a batch; decoder inputs get scheduled sampling applied."""
    B = len(utts)
    T = max(u.n_frames for u in utts)
    U = max(len(u.tokens) for u in utts)
    feats = np.zeros((B, T, utts[0].features.shape[1]))
    dec = np.zeros((B, U + 1), dtype=np.int64)
    for b, u in enumerate(utts):
        feats[b, :u.n_frames] = u.features
        prev = np.array(u.tokens, dtype=np.int64)
        if p_ss > 0 and len(prev):
            swap = rng.random(len(prev)) < p_ss
            prev = np.where(swap, rng.integers(1, vocab_size + 1, size=len(prev)), prev)
        dec[b, 1:len(prev) + 1] = prev
    return feats, [u.n_frames for u in utts], dec, [list(u.tokens) for u in utts]


def batch_grid_elements(utts, config) -> int:
    """Joint-output elements a batch needs: sum of C * (U + 1) * (|Y| + 1)."""
    total = 0
    for u in utts:
        C = num_chunks(encoder_length(u.n_frames, config.n_p), config.w)
        total += grid_elements(C, len(u.tokens), config.n_outputs)
    return total


def loss_on_batch(model: Model, utts, p_ss: float = 0.0, rng=None):
    rng = rng or np.random.default_rng(0)
    feats, lengths, dec, targets = collate(utts, model.config.vocab_size, p_ss, rng)
    logits, chunks = model.forward_logits(feats, lengths, dec)
    return transducer_loss(logits, targets, chunks)


@dataclass
class TrainResult:
    model: Model
    losses: list[float] = field(default_factory=list)


def train(model: Model, dataset, config: TrainConfig, checkpoint_path=None) -> TrainResult:
    """Optimize ``model`` in place; returns it with the per-step loss curve."""
    rng = np.random.default_rng(config.seed)
    p_ss = model.config.p_ss if config.p_ss is None else config.p_ss
    params = model.parameters()
    opt = Adam(params, config.lr)
    result = TrainResult(model)
    batches: list[list[int]] = []
    for step in range(1, config.steps + 1):
        if not batches:
            batches = make_batches(dataset, config.batch_frames, rng)
        idx = batches.pop()
        try:
            loss = loss_on_batch(model, [dataset[i] for i in idx], p_ss, rng)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"step {step}: {exc}") from exc
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingDiverged(f"step {step}: loss is {value}")
        grads = backward(loss, params)
        for p in params:
            p.grad = None
        norm = clip_by_global_norm(grads, config.clip_norm)
        if not math.isfinite(norm):
            raise TrainingDiverged(f"step {step}: gradient norm is {norm}")
        opt.step(grads)
        model.invalidate()
        result.losses.append(value)
        if config.log_every and step % config.log_every == 0:
            recent = result.losses[-config.log_every:]
            log.info("step %d  loss %.4f  |g| %.3f", step, sum(recent) / len(recent), norm)
        if checkpoint_path and config.checkpoint_every and step % config.checkpoint_every == 0:
            model.save(checkpoint_path)
    if checkpoint_path:
        model.save(checkpoint_path)
    return result
