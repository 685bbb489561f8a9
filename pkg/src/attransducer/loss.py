"""Transducer negative log-likelihood over the chunk x label grid.

Grid cell ``(c, u)`` (0-based, ``c < C``, ``u <= U``) carries a
log-distribution over blank (index 0) and the units. A blank moves to the
next chunk, label ``y[u]`` moves to ``u + 1``; every path ends with the blank
emitted from ``(C - 1, U)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .numerics import NEG_INF, Tensor, logaddexp

BLANK = 0
ENUMERATION_LIMIT = 14


@dataclass
class AlignmentGrid:
    log_probs: np.ndarray  # (C, U + 1, |Y| + 1)
    targets: tuple[int, ...]

    def __post_init__(self):
        self.log_probs = np.asarray(self.log_probs, dtype=np.float64)
        self.targets = tuple(int(y) for y in self.targets)
        lp = self.log_probs
        if lp.ndim != 3 or lp.shape[0] < 1:
            raise ValueError(f"log_probs must be (C >= 1, U + 1, K), got {lp.shape}")
        if lp.shape[1] != len(self.targets) + 1:
            raise ValueError(f"grid has {lp.shape[1]} label rows for {len(self.targets)} targets")
        if any(y == BLANK or not 0 < y < lp.shape[2] for y in self.targets):
            raise ValueError("targets must be non-blank units inside the vocabulary")
        if np.isnan(lp).any() or (lp > 1e-9).any():
            raise ValueError("log_probs must be finite-or--inf log-probabilities")

    @property
    def C(self) -> int:
        return self.log_probs.shape[0]

    @property
    def U(self) -> int:
        return len(self.targets)

    @classmethod
    def from_logits(cls, logits, targets) -> "AlignmentGrid":
        z = np.asarray(logits, dtype=np.float64)
        z = z - z.max(axis=-1, keepdims=True)
        return cls(z - np.log(np.exp(z).sum(axis=-1, keepdims=True)), targets)


@dataclass
class LossResult:
    nll: float
    grad_logits: np.ndarray
    grad_log_probs: np.ndarray
    log_alpha: np.ndarray
    log_beta: np.ndarray

    @property
    def backward_log_likelihood(self) -> float:
        return float(self.log_beta[0, 0])


def forward_backward(grid: AlignmentGrid) -> LossResult:
    """NLL plus gradients with respect to the log-probs and the logits.

    The logit gradient assumes ``log_probs = log_softmax(logits)`` per cell.
    """
    lp = grid.log_probs.tolist()
    y = grid.targets
    C, U = grid.C, grid.U
    alpha = [[NEG_INF] * (U + 1) for _ in range(C)]
    alpha[0][0] = 0.0
    for c in range(C):
        for u in range(U + 1):
            if c == 0 and u == 0:
                continue
            a = alpha[c - 1][u] + lp[c - 1][u][BLANK] if c > 0 else NEG_INF
            b = alpha[c][u - 1] + lp[c][u - 1][y[u - 1]] if u > 0 else NEG_INF
            alpha[c][u] = logaddexp(a, b)
    log_lik = alpha[C - 1][U] + lp[C - 1][U][BLANK]

    beta = [[NEG_INF] * (U + 1) for _ in range(C)]
    beta[C - 1][U] = lp[C - 1][U][BLANK]
    for c in range(C - 1, -1, -1):
        for u in range(U, -1, -1):
            if c == C - 1 and u == U:
                continue
            a = beta[c + 1][u] + lp[c][u][BLANK] if c < C - 1 else NEG_INF
            b = beta[c][u + 1] + lp[c][u][y[u]] if u < U else NEG_INF
            beta[c][u] = logaddexp(a, b)

    g = np.zeros_like(grid.log_probs)
    if log_lik > NEG_INF:
        for c in range(C):
            for u in range(U + 1):
                if alpha[c][u] == NEG_INF:
                    continue
                nxt = beta[c + 1][u] if c < C - 1 else (0.0 if u == U else NEG_INF)
                if nxt > NEG_INF:
                    g[c, u, BLANK] = -math.exp(alpha[c][u] + lp[c][u][BLANK] + nxt - log_lik)
                if u < U and beta[c][u + 1] > NEG_INF:
                    g[c, u, y[u]] = -math.exp(alpha[c][u] + lp[c][u][y[u]] + beta[c][u + 1] - log_lik)
    probs = np.exp(grid.log_probs)
    grad_logits = g - probs * g.sum(axis=-1, keepdims=True)
    return LossResult(-log_lik, grad_logits, g, np.array(alpha), np.array(beta))


def enumerate_paths(grid: AlignmentGrid) -> float:
    """Exhaustive NLL: log-add every alignment path explicitly."""
    C, U = grid.C, grid.U
    if C + U > ENUMERATION_LIMIT:
        raise ValueError(f"C + U = {C + U} exceeds the enumeration limit {ENUMERATION_LIMIT}")
    return -_log_add_all(path_log_probs(grid))


def path_log_probs(grid: AlignmentGrid):
    """Yield the log-probability of each alignment path."""
    C, U = grid.C, grid.U
    lp, y = grid.log_probs, grid.targets
    # choose which of the first C - 1 + U moves are labels; the last move is blank
    for label_slots in itertools.combinations(range(C - 1 + U), U):
        slots = set(label_slots)
        c = u = 0
        total = 0.0
        for step in range(C - 1 + U):
            if step in slots:
                total += lp[c, u, y[u]]
                u += 1
            else:
                total += lp[c, u, BLANK]
                c += 1
        yield total + lp[C - 1, U, BLANK]


def _log_add_all(values) -> float:
    acc = NEG_INF
    for v in values:
        acc = logaddexp(acc, float(v))
    return acc


def count_paths(C: int, U: int) -> int:
    return math.comb(C - 1 + U, U)


def blank_count_per_alignment(T: int, mu: int, w: int) -> int:
    """Blanks in each alignment: one per chunk after subsampling by ``mu``."""
    if T < mu:
        raise ValueError(f"T={T} shorter than subsampling factor {mu}")
    n_p = mu.bit_length() - 1
    if 2 ** n_p != mu:
        raise ValueError(f"subsampling factor {mu} is not a power of two")
    n = T
    for _ in range(n_p):
        n //= 2
    return -(-n // w)


def grid_elements(C: int, U: int, n_outputs: int) -> int:
    """Size of the joint output tensor for one utterance."""
    return C * (U + 1) * n_outputs


def transducer_loss(logits: Tensor, targets, chunk_counts) -> Tensor:
    """Mean per-utterance NLL of a padded logit batch ``(B, C_max, U_max+1, K)``.

    Cells outside each utterance's own ``C x (U+1)`` grid receive zero
    gradient.
    """
    z = logits.data
    if not np.isfinite(z).all():
        raise FloatingPointError("non-finite joint logits")
    B = z.shape[0]
    grad = np.zeros_like(z)
    total = 0.0
    for b in range(B):
        C, U = chunk_counts[b], len(targets[b])
        res = forward_backward(AlignmentGrid.from_logits(z[b, :C, :U + 1], targets[b]))
        if not np.isfinite(res.nll):
            raise FloatingPointError(f"non-finite transducer loss for batch item {b}")
        total += res.nll
        grad[b, :C, :U + 1] = res.grad_logits
    grad /= B
    return Tensor.from_op(np.array(total / B), (logits,), lambda g: (g * grad,))
