"""Train the synthetic-task model and evaluate greedy, beam and 8-bit decoding."""
import argparse
import time
from dataclasses import replace
from pathlib import Path

from attransducer.config import load_config
from attransducer.data import generate_synthetic_dataset
from attransducer.evaluate import accuracy
from attransducer.model import Model
from attransducer.quantization import quantize_weights
from attransducer.train import train

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=ROOT / "configs" / "synthetic.ini")
    p.add_argument("--checkpoint", default="synthetic.ckpt")
    p.add_argument("--steps", type=int)
    p.add_argument("--n-test", type=int, default=100)
    args = p.parse_args()

    model_cfg, train_cfg, data_cfg = load_config(args.config)
    if args.steps is not None:
        train_cfg = replace(train_cfg, steps=args.steps)
    model = Model.init(model_cfg, train_cfg.seed)
    t0 = time.process_time()
    result = train(model, generate_synthetic_dataset(data_cfg), train_cfg, checkpoint_path=args.checkpoint)
    print(f"{train_cfg.steps} steps, {time.process_time() - t0:.0f} CPU-s, final loss {result.losses[-1]:.3f}")

    testset = generate_synthetic_dataset(replace(data_cfg, n_utterances=args.n_test, seed=data_cfg.seed + 10_000))
    quantized = quantize_weights(model).to_model()
    print(f"greedy accuracy    {accuracy(model, testset, 0):.3f}")
    print(f"beam 8 accuracy    {accuracy(model, testset, 8):.3f}")
    print(f"8-bit beam 8       {accuracy(quantized, testset, 8):.3f}")


if __name__ == "__main__":
    main()
