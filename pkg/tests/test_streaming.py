import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attransducer.decoding import decode_utterance
from attransducer.layers import UtteranceTooShort
from attransducer.model import Model, ModelConfig
from attransducer.streaming import (
    REPORT_FIELDS,
    ChunkMetrics,
    StreamSession,
    compute_rtf_latency,
    report_row,
    stream_utterance,
    write_report,
)

TINY = ModelConfig(feature_dim=6, n_p=2, n_lstm=1, d=8, d_dec=8, n_att=2, tau=1, w=2, vocab_size=4)


def _model(seed=0):
    model = Model.init(TINY, seed)
    model.params["joint.W_out"].data *= 6.0
    model.invalidate()
    return model


def _push_in_parts(session, feats, cuts):
    partials = []
    bounds = [0, *sorted(set(cuts)), len(feats)]
    for a, b in zip(bounds, bounds[1:]):
        out = session.push_features(feats[a:b])
        if out is not None:
            partials.append(out)
    return partials


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 500), st.integers(8, 120), st.lists(st.integers(0, 120), max_size=12))
def test_any_push_partition_matches_offline(seed, T, cuts):
    model = _model(seed % 7)
    feats = np.random.default_rng(seed).normal(size=(T, 6))
    session = StreamSession(model, beam_size=3)
    _push_in_parts(session, feats, [c for c in cuts if c < T])
    tokens, _ = session.finalize()
    assert tokens == decode_utterance(feats, model, 3).tokens


def test_frame_by_frame_equals_chunk_by_chunk():
    model = _model(1)
    feats = np.random.default_rng(1).normal(size=(97, 6))
    assert stream_utterance(model, feats, 4, 1)[0] == stream_utterance(model, feats, 4, 10)[0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 500), st.lists(st.integers(1, 97), max_size=10))
def test_partials_grow_monotonically(seed, cuts):
    model = _model(seed % 5)
    feats = np.random.default_rng(seed).normal(size=(97, 6))
    session = StreamSession(model, beam_size=4)
    partials = _push_in_parts(session, feats, cuts)
    tokens, _ = session.finalize()
    for earlier, later in zip(partials, partials[1:] + [tokens]):
        assert later[:len(earlier)] == earlier


def test_short_pushes_produce_no_output():
    model = _model()
    session = StreamSession(model)
    # 9 frames < one 100 ms chunk
    assert session.push_features(np.zeros((9, 6))) is None
    assert session.report.chunks == []


def test_output_waits_for_lookahead():
    model = Model.init(TINY.replace(tau=2), 0)
    session = StreamSession(model, chunk_ms=40.0)  # 4 frames -> 1 encoder frame per chunk
    # an encoder chunk of w=2 needs 2 outputs plus tau=2 lookahead frames: 16 input frames
    results = [session.push_features(np.ones((4, 6))) for _ in range(4)]
    assert results[:3] == [None, None, None]
    assert results[3] is not None


def test_empty_session():
    tokens, report = StreamSession(_model()).finalize()
    assert tokens == [] and report.chunks == []


def test_double_finalize_and_late_push():
    session = StreamSession(_model())
    session.push_features(np.zeros((20, 6)))
    session.finalize()
    with pytest.raises(RuntimeError):
        session.finalize()
    with pytest.raises(RuntimeError):
        session.push_features(np.zeros((1, 6)))


def test_too_short_stream():
    session = StreamSession(_model())
    session.push_features(np.zeros((3, 6)))
    with pytest.raises(UtteranceTooShort):
        session.finalize()


def test_metric_rows_match_processed_chunks():
    feats = np.random.default_rng(2).normal(size=(95, 6))
    _, report = stream_utterance(_model(2), feats, 2, 7)
    assert len(report.chunks) == 10  # nine full 100 ms chunks plus a 50 ms tail
    assert [c.audio_ms for c in report.chunks] == [100.0] * 9 + [50.0]
    assert report.audio_ms == 950.0


@pytest.mark.parametrize("tau,n_p,ms", [(4, 3, 320.0), (0, 3, 0.0), (2, 3, 160.0), (1, 2, 40.0)])
def test_lookahead_is_exact(tau, n_p, ms):
    cfg = ModelConfig(tau=tau, n_p=n_p)
    assert cfg.lookahead_ms == ms
    assert StreamSession(Model.init(TINY.replace(tau=tau, n_p=n_p), 0)).lookahead_ms == ms


def test_rtf_latency_arithmetic():
    assert compute_rtf_latency([ChunkMetrics(100.0, 50.0, 0.0)] * 3) == (0.5, 50.0)
    rtf, lat = compute_rtf_latency([ChunkMetrics(100.0, 20.0, 320.0), ChunkMetrics(100.0, 40.0, 320.0)])
    assert rtf == pytest.approx(0.3) and lat == pytest.approx(350.0)
    with pytest.raises(ValueError):
        compute_rtf_latency([])


def test_report_schema(tmp_path):
    feats = np.random.default_rng(3).normal(size=(60, 6))
    tokens, report = stream_utterance(_model(3), feats, 2)
    row = report_row("u1", " ".join(map(str, tokens)), report)
    write_report(tmp_path / "r.csv", [row])
    with open(tmp_path / "r.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == REPORT_FIELDS
    assert float(rows[0]["lookahead_ms"]) == TINY.lookahead_ms
    assert float(rows[0]["audio_ms"]) == 600.0
    assert float(rows[0]["rtf"]) >= 0 and float(rows[0]["latency_ms"]) >= TINY.lookahead_ms
