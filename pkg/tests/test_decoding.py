import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attransducer.data import silence
from attransducer.decoding import (
    U_MAX,
    ChunkDecoder,
    _extend,
    beam_search_chunk,
    decode_utterance,
    greedy_decode,
    initial_beam,
)
from attransducer.layers import UtteranceTooShort
from attransducer.model import Model, ModelConfig, chunk_encoder_outputs, encoder_length
from attransducer.numerics import log_softmax, logaddexp

TINY = ModelConfig(feature_dim=6, n_p=2, n_lstm=1, d=8, d_dec=8, n_att=2, tau=1, w=2, vocab_size=4)


def _sharp_model(config, seed, gain=6.0):
    """Random model with a peaked joint so decoding emits a mix of units and blanks."""
    model = Model.init(config, seed)
    model.params["joint.W_out"].data *= gain
    model.invalidate()
    return model


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(8, 60))
def test_beam_of_one_is_greedy(seed, T):
    model = _sharp_model(TINY, seed)
    feats = np.random.default_rng(seed).normal(size=(T, 6))
    greedy = greedy_decode(feats, model, return_result=True)
    beam = decode_utterance(feats, model, 1)
    assert beam.tokens == greedy.tokens
    assert beam.log_prob == greedy.log_prob


def test_blank_dominant_model_gives_empty_transcript():
    model = Model.init(TINY, 0)
    model.params["joint.b_out"].data[0] = 60.0
    model.invalidate()
    feats = np.random.default_rng(0).normal(size=(40, 6))
    res = decode_utterance(feats, model, 4)
    assert res.tokens == []
    # the empty hypothesis accumulates exactly the blank mass of each chunk
    h = model.encode(feats)
    s0, _ = model.predict_step(-1)
    expected = sum(log_softmax(model.joint(c, s0))[0] for c in chunk_encoder_outputs(h, 2).chunks)
    assert res.log_prob == pytest.approx(expected, abs=1e-12)
    assert greedy_decode(feats, model) == []


def test_emission_cap_bounds_output_length():
    model = Model.init(TINY, 1)
    model.params["joint.b_out"].data[2] = 60.0  # unit 2 always wins
    model.invalidate()
    feats = np.random.default_rng(1).normal(size=(40, 6))
    C = len(chunk_encoder_outputs(model.encode(feats), 2))
    assert greedy_decode(feats, model) == [2] * (U_MAX * C)
    assert len(decode_utterance(feats, model, 3).tokens) == U_MAX * C
    assert greedy_decode(feats, model, u_max=2) == [2] * (2 * C)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_beam_invariants(seed, B):
    model = _sharp_model(TINY, seed, gain=3.0)
    rng = np.random.default_rng(seed)
    dec = ChunkDecoder(model, B)
    for chunk in chunk_encoder_outputs(model.encode(rng.normal(size=(24, 6))), 2).chunks:
        dec.advance(chunk)
        prefixes = [h.prefix for h in dec.beam]
        assert 1 <= len(dec.beam) <= B
        assert len(set(prefixes)) == len(prefixes)
        assert all(h.log_prob <= 0 and 0 not in h.prefix for h in dec.beam)


def test_duplicate_prefixes_are_log_added():
    model = _sharp_model(TINY, 3, gain=1.0)
    chunk = np.random.default_rng(3).normal(size=(2, 8))
    root = initial_beam(model)[0]
    root.log_prob = -0.5
    child = _extend(model, root, 1, -1.25)
    out = {h.prefix: h.log_prob for h in beam_search_chunk([root, child], chunk, model, B=100, u_max=1)}

    jc = model.joint_chunk(chunk)
    lp_root = log_softmax(model.joint(jc, root.s))
    lp_child = log_softmax(model.joint(jc, child.s))
    via_root = root.log_prob + lp_root[1] + lp_child[0]
    via_child = child.log_prob + lp_child[0]
    assert out[(1,)] == pytest.approx(logaddexp(via_root, via_child), abs=1e-12)
    assert out[(1,)] >= max(via_root, via_child)
    assert out[()] == pytest.approx(root.log_prob + lp_root[0], abs=1e-12)


def test_decoding_is_deterministic():
    model = _sharp_model(TINY, 4)
    feats = np.random.default_rng(4).normal(size=(50, 6))
    assert decode_utterance(feats, model, 4).tokens == decode_utterance(feats, model, 4).tokens
    assert greedy_decode(feats, model) == greedy_decode(feats, model)


def test_decode_reports_per_chunk_timing():
    model = Model.init(TINY, 0)
    feats = np.zeros((37, 6))
    res = decode_utterance(feats, model, 2)
    assert len(res.chunk_ms) == math.ceil(encoder_length(37, 2) / 2)
    assert all(t >= 0 for t in res.chunk_ms)


def test_too_short_propagates():
    with pytest.raises(UtteranceTooShort):
        decode_utterance(np.zeros((3, 6)), Model.init(TINY, 0), 2)
    with pytest.raises(ValueError):
        decode_utterance(np.zeros((30, 6)), Model.init(TINY, 0), 0)


def test_beam_search_needs_a_beam():
    with pytest.raises(ValueError):
        beam_search_chunk([], np.zeros((2, 8)), Model.init(TINY, 0), 2)


def test_full_utterance_chunk_runs():
    feats = np.random.default_rng(5).normal(size=(48, 6))
    enc_len = encoder_length(48, 2)
    wide = _sharp_model(TINY.replace(w=enc_len), 5)
    res = decode_utterance(feats, wide, 4)
    assert len(res.chunk_ms) == 1
    assert len(res.tokens) <= U_MAX


def test_trained_model_beam_scores_improve_with_width(trained, testset):
    model = trained.model
    for utt in testset[:20]:
        scores = [decode_utterance(utt.features, model, B).log_prob for B in (1, 2, 4, 8)]
        assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))


def test_trained_model_is_quiet_on_silence(trained):
    model = trained.model
    feats = silence(trained.data_config, 160, seed=3)
    assert len(decode_utterance(feats, model, 8).tokens) <= 1
    assert len(greedy_decode(feats, model)) <= 1
