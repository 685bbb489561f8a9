import csv

import pytest

from attransducer.cli import main
from attransducer.model import Model
from attransducer.streaming import REPORT_FIELDS

TINY_INI = """\
[model]
feature_dim = 16
n_p = 2
n_lstm = 1
d = 8
d_dec = 8
n_att = 2
tau = 1
w = 2
vocab_size = 16

[train]
steps = 4
batch_frames = 1000

[data]
n_utterances = 20
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.ini").write_text(TINY_INI)
    assert main(["train", "--config", str(root / "tiny.ini"), "--checkpoint", str(root / "m.ckpt"),
                 "--vocab", str(root / "vocab.txt"), "--seed", "1", "--deterministic"]) == 0
    assert main(["synth", "--config", str(root / "tiny.ini"), "--out", str(root / "test"),
                 "--n", "3", "--data-seed", "77"]) == 0
    return root


def test_train_writes_checkpoint_vocab_and_curve(workdir):
    model = Model.load(workdir / "m.ckpt")
    assert (model.config.d, model.config.w) == (8, 2)
    assert len((workdir / "vocab.txt").read_text().split()) == 17
    rows = list(csv.reader(open(workdir / "m.ckpt.loss.csv")))
    assert rows[0] == ["step", "loss"] and len(rows) == 5


def test_deterministic_training_is_bit_identical(workdir):
    args = ["train", "--config", str(workdir / "tiny.ini"), "--seed", "1", "--deterministic", "--checkpoint"]
    assert main(args + [str(workdir / "again.ckpt")]) == 0
    assert (workdir / "again.ckpt").read_bytes() == (workdir / "m.ckpt").read_bytes()


def test_decode_prints_transcripts_and_ter(workdir, capsys):
    manifest = str(workdir / "test" / "manifest.tsv")
    for extra in ([], ["--greedy"], ["--quantized", "--beam", "2"], ["--tau", "0", "--chunk-width", "3"]):
        assert main(["decode", "--checkpoint", str(workdir / "m.ckpt"), "--manifest", manifest,
                     "--vocab", str(workdir / "vocab.txt"), *extra]) == 0
        out = capsys.readouterr().out.splitlines()
        assert len([ln for ln in out if ln.startswith("utt")]) == 3
        assert out[-1].startswith("# TER")


def test_stream_bench_report(workdir, capsys):
    report = workdir / "bench.csv"
    assert main(["stream-bench", "--checkpoint", str(workdir / "m.ckpt"), "--manifest",
                 str(workdir / "test" / "manifest.tsv"), "--report", str(report), "--push-frames", "7"]) == 0
    rows = list(csv.DictReader(open(report)))
    assert tuple(rows[0]) == REPORT_FIELDS and len(rows) == 3
    assert all(float(r["lookahead_ms"]) == 1 * 4 * 10.0 for r in rows)
    assert "lookahead 40.0 ms" in capsys.readouterr().out


def test_quantize_shrinks_checkpoint(workdir, capsys):
    out = workdir / "q.ckpt"
    assert main(["quantize", "--checkpoint", str(workdir / "m.ckpt"), "--out", str(out)]) == 0
    assert out.stat().st_size < (workdir / "m.ckpt").stat().st_size
    assert main(["decode", "--checkpoint", str(out), "--manifest", str(workdir / "test" / "manifest.tsv")]) == 0


def test_report_errors_table(workdir, capsys):
    assert main(["report-errors", "--config", str(workdir / "tiny.ini"), "--checkpoint", str(workdir / "m.ckpt"),
                 "--checkpoint-b", str(workdir / "m.ckpt"), "--n", "3", "--beam", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ["model", "ins", "del", "sub", "ref_tokens", "ter"]
    assert lines[1].split()[1:] == lines[2].split()[1:]


def test_selftest_passes(capsys):
    assert main(["selftest", "--seed", "2"]) == 0
    assert capsys.readouterr().out.count("PASS") == 4


def test_contract_violations_exit_nonzero(workdir, tmp_path, capsys):
    assert main(["decode", "--checkpoint", str(tmp_path / "missing.ckpt"),
                 "--manifest", str(workdir / "test" / "manifest.tsv")]) == 2
    (tmp_path / "v.txt").write_text("<blank>\na\nb\n")
    assert main(["decode", "--checkpoint", str(workdir / "m.ckpt"), "--vocab", str(tmp_path / "v.txt"),
                 "--manifest", str(workdir / "test" / "manifest.tsv")]) == 2
    (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint")
    assert main(["quantize", "--checkpoint", str(tmp_path / "junk.ckpt"), "--out", str(tmp_path / "q")]) == 2
    assert main(["train", "--config", str(workdir / "tiny.ini"), "--chunk-width", "0",
                 "--checkpoint", str(tmp_path / "x.ckpt")]) == 2
    assert capsys.readouterr().err.count("error:") == 4
    with pytest.raises(SystemExit) as exc:
        main(["decode"])
    assert exc.value.code != 0
