"""Command-line entry point: ``attransducer <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .config import load_config
from .data import Utterance, generate_synthetic_dataset, read_features, read_manifest, write_features, write_manifest
from .decoding import decode_utterance, greedy_decode
from .evaluate import error_breakdown_report
from .layers import UtteranceTooShort
from .metrics import corpus_totals, format_table
from .model import Model, Vocabulary
from .quantization import quantize_weights
from .selftest import run_selftest
from .streaming import report_row, stream_utterance, write_report
from .train import TrainingDiverged, train

log = logging.getLogger("attransducer")


def _load_model(args) -> Model:
    model = Model.load(args.checkpoint)
    if getattr(args, "quantized", False):
        model = quantize_weights(model).to_model()
    changes = {}
    if getattr(args, "tau", None) is not None:
        changes["tau"] = args.tau
    if getattr(args, "chunk_width", None) is not None:
        changes["w"] = args.chunk_width
    if changes:
        model = Model(model.config.replace(**changes), model.params)
    return model


def _vocab(args, model: Model) -> Vocabulary:
    if getattr(args, "vocab", None):
        vocab = Vocabulary.load(args.vocab)
        if vocab.size != model.config.vocab_size:
            raise ValueError(f"vocabulary has {vocab.size} units, model expects {model.config.vocab_size}")
        return vocab
    return Vocabulary.synthetic(model.config.vocab_size)


def _configs(args):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["train__seed"] = args.seed
    if getattr(args, "deterministic", False):
        overrides["train__deterministic"] = True
    if getattr(args, "tau", None) is not None:
        overrides["model__tau"] = args.tau
    if getattr(args, "chunk_width", None) is not None:
        overrides["model__w"] = args.chunk_width
    if getattr(args, "steps", None) is not None:
        overrides["train__steps"] = args.steps
    return load_config(args.config, **overrides)


def cmd_synth(args) -> int:
    model_cfg, _, data_cfg = _configs(args)
    if args.n is not None or args.data_seed is not None:
        data_cfg = replace(data_cfg, **{k: v for k, v in (("n_utterances", args.n), ("seed", args.data_seed))
                                        if v is not None})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab = Vocabulary.synthetic(data_cfg.vocab_size)
    vocab.save(out / "vocab.txt")
    entries = []
    for i, utt in enumerate(generate_synthetic_dataset(data_cfg)):
        name = f"utt{i:05d}.f32"
        write_features(out / name, utt.features)
        entries.append((name, vocab.decode(utt.tokens)))
    write_manifest(out / "manifest.tsv", entries)
    print(f"wrote {len(entries)} utterances to {out}")
    return 0


def cmd_train(args) -> int:
    model_cfg, train_cfg, data_cfg = _configs(args)
    if model_cfg.feature_dim != data_cfg.feature_dim or model_cfg.vocab_size != data_cfg.vocab_size:
        raise ValueError("[model] and [data] disagree on feature_dim or vocab_size")
    dataset = generate_synthetic_dataset(data_cfg)
    model = Model.init(model_cfg, train_cfg.seed)
    t0 = time.process_time()
    result = train(model, dataset, train_cfg, checkpoint_path=args.checkpoint)
    cpu = time.process_time() - t0
    curve = Path(str(args.checkpoint) + ".loss.csv")
    with open(curve, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        w.writerows((i + 1, f"{v:.6f}") for i, v in enumerate(result.losses))
    if args.vocab:
        Vocabulary.synthetic(model_cfg.vocab_size).save(args.vocab)
    first, last = result.losses[:1] or [float("nan")], result.losses[-20:] or [float("nan")]
    print(f"trained {train_cfg.steps} steps in {cpu:.1f} CPU-s; loss {first[0]:.3f} -> "
          f"{sum(last) / len(last):.3f}; checkpoint {args.checkpoint}")
    return 0


def _utterances(args, model: Model):
    for path, ref in read_manifest(args.manifest):
        yield path, read_features(path, model.config.feature_dim), ref


def cmd_decode(args) -> int:
    model = _load_model(args)
    vocab = _vocab(args, model)
    hyps, refs = [], []
    for path, feats, ref in _utterances(args, model):
        tokens = greedy_decode(feats, model) if args.greedy else decode_utterance(feats, model, args.beam).tokens
        text = " ".join(vocab.decode(tokens))
        print(f"{path.name}\t{text}")
        if ref is not None:
            hyps.append(tokens)
            refs.append(vocab.encode(ref))
    if refs:
        totals = corpus_totals("decode", hyps, refs)
        print(f"# TER {totals.rate:.4f} (ins {totals.insertions}, del {totals.deletions}, "
              f"sub {totals.substitutions}, ref tokens {totals.ref_tokens})")
    return 0


def cmd_stream_bench(args) -> int:
    model = _load_model(args)
    vocab = _vocab(args, model)
    rows = []
    for path, feats, _ in _utterances(args, model):
        tokens, report = stream_utterance(model, feats, args.beam, args.push_frames)
        if not report.chunks:
            continue
        rows.append(report_row(path.name, " ".join(vocab.decode(tokens)), report))
    write_report(args.report, rows)
    if rows:
        rtf = np.mean([float(r["rtf"]) for r in rows])
        lat = np.mean([float(r["latency_ms"]) for r in rows])
        print(f"{len(rows)} utterances: mean RTF {rtf:.4f}, mean latency {lat:.1f} ms "
              f"(lookahead {rows[0]['lookahead_ms']} ms, all chunks incl. the first) -> {args.report}")
    return 0


def cmd_quantize(args) -> int:
    model = Model.load(args.checkpoint)
    q = quantize_weights(model)
    size = q.save(args.out)
    src = Path(args.checkpoint).stat().st_size
    print(f"{args.checkpoint}: {src} bytes -> {args.out}: {size} bytes ({src / size:.2f}x smaller)")
    return 0


def cmd_report_errors(args) -> int:
    a = _load_model(args)
    b = Model.load(args.checkpoint_b)
    if args.manifest:
        vocab = _vocab(args, a)
        testset = [Utterance(feats, tuple(vocab.encode(ref))) for _, feats, ref in _utterances(args, a)
                   if ref is not None]
    else:
        _, _, data_cfg = _configs(args)
        testset = generate_synthetic_dataset(replace(data_cfg, seed=data_cfg.seed + 10_000, n_utterances=args.n))
    rows = error_breakdown_report(a, b, testset, args.beam, names=(args.checkpoint, args.checkpoint_b))
    print(format_table(rows))
    return 0


def cmd_selftest(args) -> int:
    ok = run_selftest(seed=args.seed or 0, verbose=True)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="attransducer", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint=True):
        sp.add_argument("--config", help="INI file with [model], [train], [data] sections")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--vocab", help="vocabulary file, one token per line, line 0 is blank")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("synth", help="write a synthetic test set (features + manifest)")
    common(sp, checkpoint=False)
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int)
    sp.add_argument("--data-seed", type=int)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train on the synthetic task")
    common(sp)
    sp.add_argument("--deterministic", action="store_true")
    sp.add_argument("--tau", type=int)
    sp.add_argument("--chunk-width", type=int)
    sp.add_argument("--steps", type=int)
    sp.set_defaults(func=cmd_train)

    for name, func, helptext in (("decode", cmd_decode, "decode feature files"),
                                 ("stream-bench", cmd_stream_bench, "streaming RTF/latency benchmark")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--beam", type=int, default=8)
        sp.add_argument("--tau", type=int)
        sp.add_argument("--chunk-width", type=int)
        sp.add_argument("--quantized", action="store_true", help="8-bit weights, dequantized at load")
        sp.set_defaults(func=func)
    sub.choices["decode"].add_argument("--greedy", action="store_true")
    sub.choices["stream-bench"].add_argument("--report", required=True)
    sub.choices["stream-bench"].add_argument("--push-frames", type=int, help="frames per push (default: whole file)")

    sp = sub.add_parser("quantize", help="write an 8-bit weight checkpoint")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_quantize)

    sp = sub.add_parser("report-errors", help="insertion/deletion/substitution table for two models")
    common(sp)
    sp.add_argument("--checkpoint-b", required=True)
    sp.add_argument("--manifest")
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--beam", type=int, default=8)
    sp.add_argument("--quantized", action="store_true")
    sp.set_defaults(func=cmd_report_errors)

    sp = sub.add_parser("selftest", help="run the oracle cross-checks")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError, CheckpointError, UtteranceTooShort, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
