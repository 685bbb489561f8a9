"""Real-time simulation: feed features in fixed-duration chunks, decode
encoder chunks as soon as their lookahead is available, and account RTF
and latency.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .decoding import U_MAX, ChunkDecoder
from .layers import UtteranceTooShort
from .model import EncoderStream, Model

REPORT_FIELDS = ("utterance", "audio_ms", "n_chunks", "rtf", "latency_ms", "lookahead_ms", "transcript")


@dataclass
class ChunkMetrics:
    audio_ms: float
    processing_ms: float
    lookahead_ms: float


@dataclass
class StreamReport:
    chunks: list[ChunkMetrics] = field(default_factory=list)

    @property
    def audio_ms(self) -> float:
        return sum(c.audio_ms for c in self.chunks)

    def rtf_latency(self) -> tuple[float, float]:
        return compute_rtf_latency(self.chunks)


def compute_rtf_latency(metrics) -> tuple[float, float]:
    """Mean per-chunk RTF, and mean chunk processing time plus lookahead."""
    metrics = list(metrics)
    if not metrics:
        raise ValueError("need at least one chunk to compute RTF and latency")
    rtf = float(np.mean([m.processing_ms / m.audio_ms for m in metrics]))
    latency = float(np.mean([m.processing_ms for m in metrics])) + metrics[0].lookahead_ms
    return rtf, latency


class StreamSession:
    """Per-utterance streaming state.

    Frames are buffered until a full ``chunk_ms`` of audio is available;
    each such chunk is pushed through the encoder, and every encoder chunk
    whose attention lookahead is complete is decoded immediately. Whatever
    the partition of the input into pushes, the sequence of per-frame
    computations is the same, so the final transcript equals offline
    decoding.
    """

    def __init__(self, model: Model, beam_size: int = 8, chunk_ms: float = 100.0, u_max: int = U_MAX):
        self.model = model
        cfg = model.config
        self.frames_per_chunk = int(round(chunk_ms / cfg.frame_step_ms))
        if self.frames_per_chunk < 1:
            raise ValueError("chunk shorter than one frame")
        self.lookahead_ms = cfg.lookahead_ms
        self.encoder = EncoderStream(model)
        self.decoder = ChunkDecoder(model, beam_size, u_max)
        self.buffer: list[np.ndarray] = []
        self.report = StreamReport()
        self.partials: list[list[int]] = []
        self.closed = False

    def push_features(self, frames):
        """Buffer frames and process any complete chunks.

        Returns the current stable partial transcript if at least one encoder
        chunk was decoded during this call, otherwise None.
        """
        if self.closed:
            raise RuntimeError("session already finalized")
        frames = np.asarray(frames, dtype=np.float64).reshape(-1, self.model.config.feature_dim)
        self.buffer.extend(frames)
        decoded = 0
        while len(self.buffer) >= self.frames_per_chunk:
            block = self.buffer[:self.frames_per_chunk]
            del self.buffer[:self.frames_per_chunk]
            decoded += self._process(block)
        if decoded:
            partial = self.decoder.stable_prefix()
            self.partials.append(partial)
            return partial
        return None

    def _process(self, block, final: bool = False) -> int:
        t0 = time.perf_counter()
        for frame in block:
            self.encoder.push(frame)
        if final:
            self.encoder.finish()
        n = self._decode_ready(final)
        elapsed = 1e3 * (time.perf_counter() - t0)
        if block:
            self.report.chunks.append(ChunkMetrics(len(block) * self.model.config.frame_step_ms,
                                                   elapsed, self.lookahead_ms))
        elif self.report.chunks:
            self.report.chunks[-1].processing_ms += elapsed
        return n

    def _decode_ready(self, final: bool) -> int:
        w = self.model.config.w
        out = self.encoder.outputs
        n = 0
        while True:
            start = self.decoder.n_chunks * w
            end = start + w
            if end <= len(out) or (final and start < len(out)):
                self.decoder.advance(np.array(out[start:min(end, len(out))]))
                n += 1
            else:
                return n

    def finalize(self) -> tuple[list[int], StreamReport]:
        if self.closed:
            raise RuntimeError("session already finalized")
        self.closed = True
        if self.encoder.n_frames == 0 and not self.buffer:
            return [], self.report
        block, self.buffer = self.buffer, []
        self._process(block, final=True)
        if not self.encoder.outputs:
            raise UtteranceTooShort(f"{self.encoder.n_frames} frames produce no encoder output")
        return list(self.decoder.best.prefix), self.report


def stream_utterance(model: Model, features, beam_size: int = 8, push_frames: int | None = None):
    """Stream a whole utterance through a fresh session; returns tokens and report."""
    session = StreamSession(model, beam_size)
    feats = np.asarray(features, dtype=np.float64)
    step = push_frames or len(feats) or 1
    for i in range(0, len(feats), step):
        session.push_features(feats[i:i + step])
    return session.finalize()


def write_report(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in REPORT_FIELDS})


def report_row(name: str, tokens_text: str, report: StreamReport) -> dict:
    rtf, latency = report.rtf_latency()
    return {
        "utterance": name,
        "audio_ms": f"{report.audio_ms:.1f}",
        "n_chunks": len(report.chunks),
        "rtf": f"{rtf:.4f}",
        "latency_ms": f"{latency:.2f}",
        "lookahead_ms": f"{report.chunks[0].lookahead_ms:.1f}",
        "transcript": tokens_text,
    }
