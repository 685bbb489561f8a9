"""Stream a synthetic test set through a checkpoint and write the RTF/latency report."""
import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from attransducer.config import load_config
from attransducer.data import generate_synthetic_dataset
from attransducer.model import Model
from attransducer.quantization import quantize_weights
from attransducer.streaming import report_row, stream_utterance, write_report

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("checkpoint")
    p.add_argument("--config", default=ROOT / "configs" / "synthetic.ini")
    p.add_argument("--report", default="stream_report.csv")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--beam", type=int, default=8)
    p.add_argument("--push-frames", type=int, default=10)
    p.add_argument("--quantized", action="store_true")
    args = p.parse_args()

    _, _, data_cfg = load_config(args.config)
    model = Model.load(args.checkpoint)
    if args.quantized:
        model = quantize_weights(model).to_model()
    testset = generate_synthetic_dataset(replace(data_cfg, n_utterances=args.n, seed=data_cfg.seed + 10_000))
    rows = []
    for i, utt in enumerate(testset):
        tokens, report = stream_utterance(model, utt.features, args.beam, args.push_frames)
        rows.append(report_row(f"utt{i:04d}", " ".join(map(str, tokens)), report))
    write_report(args.report, rows)
    rtf = np.mean([float(r["rtf"]) for r in rows])
    latency = np.mean([float(r["latency_ms"]) for r in rows])
    print(f"{len(rows)} utterances: mean RTF {rtf:.4f}, mean latency {latency:.1f} ms "
          f"(lookahead {model.config.lookahead_ms:.0f} ms); report {args.report}")


if __name__ == "__main__":
    main()
