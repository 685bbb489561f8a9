import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from attransducer.config import dump_config, load_config
from attransducer.data import (
    SyntheticTaskConfig,
    generate_synthetic_dataset,
    read_features,
    read_manifest,
    token_patterns,
    write_features,
    write_manifest,
)
from attransducer.evaluate import error_breakdown_report
from attransducer.metrics import corpus_totals, format_table, token_error_rate
from attransducer.model import Model, ModelConfig
from attransducer.train import (
    TrainConfig,
    TrainingDiverged,
    batch_grid_elements,
    collate,
    make_batches,
    train,
)

SMALL_DATA = SyntheticTaskConfig(n_utterances=500)
SMALL_MODEL = ModelConfig(feature_dim=16, n_p=3, n_lstm=1, d=16, d_dec=16, n_att=2, tau=1, w=4, vocab_size=16)


@pytest.fixture(scope="module")
def dataset():
    return generate_synthetic_dataset(SMALL_DATA)


# synthetic data -----------------------------------------------------------------

def test_dataset_is_deterministic():
    cfg = SyntheticTaskConfig(n_utterances=20, seed=5)
    a, b = generate_synthetic_dataset(cfg), generate_synthetic_dataset(cfg)
    for x, y in zip(a, b):
        assert x.tokens == y.tokens
        assert x.features.tobytes() == y.features.tobytes()


def test_noise_free_single_token_contains_its_pattern():
    cfg = SyntheticTaskConfig(n_utterances=10, noise=0.0, min_tokens=1, max_tokens=1, seed=2)
    pats = token_patterns(cfg)
    for utt in generate_synthetic_dataset(cfg):
        (tok,) = utt.tokens
        rows = np.flatnonzero(np.abs(utt.features).sum(axis=1) > 0)
        assert len(rows) == cfg.pattern_frames
        np.testing.assert_array_equal(utt.features[rows], pats[tok].astype(np.float32))


def test_labels_are_sparse_and_blank_free(dataset):
    frames = sum(u.n_frames for u in dataset)
    tokens = sum(len(u.tokens) for u in dataset)
    assert frames / tokens >= 25  # roughly one unit per 30 frames
    assert all(0 not in u.tokens and len(u.tokens) >= 1 for u in dataset)


def test_invalid_task_config():
    with pytest.raises(ValueError):
        SyntheticTaskConfig(vocab_size=1)
    with pytest.raises(ValueError):
        SyntheticTaskConfig(min_frames=50, max_frames=10)
    with pytest.raises(ValueError):
        SyntheticTaskConfig(min_tokens=3, max_tokens=2)


def test_feature_files_and_manifest(tmp_path):
    utt = generate_synthetic_dataset(SyntheticTaskConfig(n_utterances=1))[0]
    write_features(tmp_path / "a.f32", utt.features)
    assert (tmp_path / "a.f32").stat().st_size == utt.features.size * 4
    np.testing.assert_array_equal(read_features(tmp_path / "a.f32", 16), utt.features)
    with pytest.raises(ValueError):
        read_features(tmp_path / "a.f32", 15)
    write_manifest(tmp_path / "m.tsv", [("a.f32", ["t01", "t03"]), ("b.f32", None)])
    assert read_manifest(tmp_path / "m.tsv") == [(tmp_path / "a.f32", ["t01", "t03"]), (tmp_path / "b.f32", None)]


# batching -------------------------------------------------------------------------

def test_batches_respect_frame_budget(dataset):
    batches = make_batches(dataset, 2000, np.random.default_rng(0))
    assert sorted(i for b in batches for i in b) == list(range(len(dataset)))
    for b in batches:
        assert len(b) == 1 or max(dataset[i].n_frames for i in b) * len(b) <= 2000


def test_collate_applies_scheduled_sampling_to_decoder_inputs_only(dataset):
    utts = dataset[:4]
    _, lengths, dec, targets = collate(utts, 16, 1.0, np.random.default_rng(0))
    assert targets == [list(u.tokens) for u in utts]
    assert (dec[:, 0] == 0).all()
    _, _, clean, _ = collate(utts, 16, 0.0, np.random.default_rng(0))
    for b, u in enumerate(utts):
        np.testing.assert_array_equal(clean[b, 1:len(u.tokens) + 1], u.tokens)
    assert lengths == [u.n_frames for u in utts]


def test_wider_chunks_shrink_the_joint_grid(dataset):
    """At equal memory, w=4 fits about 4x the frames of w=1 (grid shape accounting)."""
    utts = dataset[:50]
    narrow = batch_grid_elements(utts, SMALL_MODEL.replace(w=1))
    wide = batch_grid_elements(utts, SMALL_MODEL.replace(w=4))
    assert wide < narrow
    assert 3.0 <= narrow / wide <= 4.0
    for u in utts:
        assert batch_grid_elements([u], SMALL_MODEL.replace(w=4)) <= batch_grid_elements([u], SMALL_MODEL.replace(w=1))


# training -------------------------------------------------------------------------

def test_zero_learning_rate_changes_nothing(dataset):
    model = Model.init(SMALL_MODEL, 0)
    before = {n: p.data.copy() for n, p in model.params.items()}
    result = train(model, dataset[:8], TrainConfig(lr=0.0, steps=3, batch_frames=100_000, p_ss=0.0, log_every=0))
    for n, p in model.params.items():
        np.testing.assert_array_equal(p.data, before[n])
    assert result.losses[0] == result.losses[1] == result.losses[2]


def test_two_hundred_steps_halve_the_loss(dataset):
    result = train(Model.init(SMALL_MODEL, 0), dataset, TrainConfig(steps=200, log_every=0))
    initial = np.mean(result.losses[:10])
    final = np.mean(result.losses[-20:])
    assert final <= 0.5 * initial


def test_training_is_bit_reproducible(dataset, tmp_path):
    cfg = TrainConfig(steps=15, log_every=0, deterministic=True, seed=3)
    for name in ("a", "b"):
        train(Model.init(SMALL_MODEL, 3), dataset, cfg, checkpoint_path=tmp_path / f"{name}.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_periodic_checkpoints(dataset, tmp_path):
    path = tmp_path / "m.ckpt"
    train(Model.init(SMALL_MODEL, 0), dataset, TrainConfig(steps=4, checkpoint_every=2, log_every=0),
          checkpoint_path=path)
    assert Model.load(path).config == SMALL_MODEL


def test_divergence_aborts(dataset):
    model = Model.init(SMALL_MODEL, 0)
    model.params["joint.W_out"].data[0, 0] = np.nan
    model.invalidate()
    with pytest.raises(TrainingDiverged, match="step 1"):
        train(model, dataset[:4], TrainConfig(steps=2, log_every=0))


# metrics ---------------------------------------------------------------------------

def test_ter_examples():
    assert token_error_rate([1, 2, 3], [1, 2, 3]) == (0.0, 0, 0, 0)
    assert token_error_rate([], [4, 5, 6, 7]) == (1.0, 0, 4, 0)
    rate, i, d, s = token_error_rate([1, 3], [1, 2, 3])
    assert rate == pytest.approx(1 / 3) and (i, d, s) == (0, 1, 0)
    assert token_error_rate([1, 9, 3], [1, 2, 3])[1:] == (0, 0, 1)
    assert token_error_rate([5, 5], []) == (2.0, 2, 0, 0)


seqs = st.lists(st.integers(1, 5), max_size=8)


@given(seqs)
def test_ter_identity(x):
    assert token_error_rate(x, x)[0] == 0.0


@given(seqs, seqs, st.integers(1, 5), st.data())
def test_single_edit_changes_error_count_by_at_most_one(hyp, ref, tok, data):
    errors = sum(token_error_rate(hyp, ref)[1:])
    pos = data.draw(st.integers(0, len(hyp)))
    edited = hyp[:pos] + [tok] + hyp[pos:]
    assert abs(sum(token_error_rate(edited, ref)[1:]) - errors) <= 1


@given(seqs, seqs)
def test_edit_counts_are_consistent_with_lengths(hyp, ref):
    _, i, d, s = token_error_rate(hyp, ref)
    assert len(hyp) - len(ref) == i - d
    assert s <= min(len(hyp), len(ref))


def test_identical_models_give_identical_rows(dataset):
    model = Model.init(SMALL_MODEL, 0)
    rows = error_breakdown_report(model, model, dataset[:5], beam=2, names=("a", "b"))
    assert {k: v for k, v in rows[0].items() if k != "model"} == {k: v for k, v in rows[1].items() if k != "model"}
    table = format_table(rows)
    assert table.splitlines()[0].split() == ["model", "ins", "del", "sub", "ref_tokens", "ter"]


def test_corpus_totals_accumulate():
    totals = corpus_totals("x", [[1, 2], [3]], [[1, 2, 4], [3, 3]])
    assert (totals.insertions, totals.deletions, totals.substitutions, totals.ref_tokens) == (0, 2, 0, 5)
    assert totals.accuracy == pytest.approx(0.6)


# configuration -----------------------------------------------------------------------

def test_ini_round_trip(tmp_path):
    model, trainer, data = ModelConfig(d=32, w=8), TrainConfig(lr=5e-4, p_ss=0.2), SyntheticTaskConfig(seed=9)
    dump_config(tmp_path / "c.ini", model, trainer, data)
    assert load_config(tmp_path / "c.ini") == (model, trainer, data)


def test_ini_overrides_and_errors(tmp_path):
    (tmp_path / "c.ini").write_text("[model]\nw = 8\n[train]\ndeterministic = yes\n")
    model, trainer, _ = load_config(tmp_path / "c.ini", model__tau=4)
    assert (model.w, model.tau, trainer.deterministic) == (8, 4, True)
    (tmp_path / "bad.ini").write_text("[model]\nwidth = 8\n")
    with pytest.raises(ValueError):
        load_config(tmp_path / "bad.ini")
    (tmp_path / "bad2.ini").write_text("[optimizer]\nlr = 1\n")
    with pytest.raises(ValueError):
        load_config(tmp_path / "bad2.ini")
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.ini")
