"""Synthetic transduction task standing in for speech.

Each unit owns a fixed multi-frame feature pattern. An utterance is a
random unit sequence rendered left to right with silent gaps, plus Gaussian
noise everywhere. Units are sparse relative to frames (roughly one per
thirty frames by default), so blanks dominate the frame-level alignment.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class SyntheticTaskConfig:
    vocab_size: int = 16
    feature_dim: int = 16
    min_frames: int = 48
    max_frames: int = 200
    min_tokens: int = 1
    max_tokens: int = 6
    pattern_frames: int = 12
    min_gap: int = 4
    noise: float = 0.1
    n_utterances: int = 500
    seed: int = 0
    pattern_seed: int = 1234

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("synthetic vocabulary needs at least 2 units")
        if not 0 <= self.min_tokens <= self.max_tokens:
            raise ValueError("token range must satisfy 0 <= min <= max")
        if not 1 <= self.min_frames <= self.max_frames:
            raise ValueError("frame range must satisfy 1 <= min <= max")
        if self.pattern_frames < 1 or self.min_gap < 0 or self.feature_dim < 1:
            raise ValueError("pattern_frames, feature_dim must be positive and min_gap >= 0")
        if self.noise < 0:
            raise ValueError("noise level must be >= 0")
        if self.n_utterances < 0:
            raise ValueError("n_utterances must be >= 0")

    def required_frames(self, n_tokens: int) -> int:
        return n_tokens * self.pattern_frames + (n_tokens + 1) * self.min_gap


@dataclass
class Utterance:
    features: np.ndarray  # (T, feature_dim) float32
    tokens: tuple[int, ...]

    @property
    def n_frames(self) -> int:
        return len(self.features)


def token_patterns(config: SyntheticTaskConfig) -> np.ndarray:
    """``(vocab_size + 1, pattern_frames, feature_dim)``; row 0 (blank) is unused."""
    rng = np.random.default_rng(config.pattern_seed)
    pats = rng.normal(0.0, 1.0, (config.vocab_size + 1, config.pattern_frames, config.feature_dim))
    pats[0] = 0.0
    return pats


def render(tokens, gaps, config: SyntheticTaskConfig, patterns: np.ndarray, rng) -> np.ndarray:
    P = config.pattern_frames
    T = sum(gaps) + P * len(tokens)
    feats = np.zeros((T, config.feature_dim))
    pos = gaps[0]
    for tok, gap in zip(tokens, gaps[1:]):
        feats[pos:pos + P] = patterns[tok]
        pos += P + gap
    if config.noise > 0:
        feats += rng.normal(0.0, config.noise, feats.shape)
    return feats.astype(np.float32)


def sample_utterance(config: SyntheticTaskConfig, patterns: np.ndarray, rng: np.random.Generator) -> Utterance:
    U = int(rng.integers(config.min_tokens, config.max_tokens + 1))
    tokens = tuple(int(t) for t in rng.integers(1, config.vocab_size + 1, size=U))
    need = config.required_frames(U)
    lo = max(config.min_frames, need)
    hi = max(config.max_frames, lo)
    T = int(rng.integers(lo, hi + 1))
    extra = rng.multinomial(T - need, np.full(U + 1, 1.0 / (U + 1)))
    gaps = [config.min_gap + int(e) for e in extra]
    return Utterance(render(tokens, gaps, config, patterns, rng), tokens)


def generate_synthetic_dataset(config: SyntheticTaskConfig) -> list[Utterance]:
    patterns = token_patterns(config)
    rng = np.random.default_rng(config.seed)
    return [sample_utterance(config, patterns, rng) for _ in range(config.n_utterances)]


def silence(config: SyntheticTaskConfig, n_frames: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (rng.normal(0.0, config.noise, (n_frames, config.feature_dim))).astype(np.float32)


# on-disk feature files ---------------------------------------------------------

def write_features(path, features) -> None:
    """Raw little-endian float32 frames, row-major."""
    np.asarray(features, dtype="<f4").tofile(path)


def read_features(path, feature_dim: int) -> np.ndarray:
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % feature_dim:
        raise ValueError(f"{path}: {raw.size} values is not a multiple of feature_dim={feature_dim}")
    return raw.reshape(-1, feature_dim).astype(np.float64)


def write_manifest(path, entries) -> None:
    """``entries``: (feature file, reference token strings or None)."""
    lines = []
    for feat_path, ref in entries:
        lines.append(str(feat_path) if ref is None else f"{feat_path}\t{' '.join(ref)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> list[tuple[Path, list[str] | None]]:
    """One utterance per line: a feature file, optionally a tab and the reference."""
    base = Path(path).parent
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        feat, _, ref = line.partition("\t")
        p = Path(feat.strip())
        out.append((p if p.is_absolute() else base / p, ref.split() if _ else None))
    return out
