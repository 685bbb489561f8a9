"""Train w=1 and w=4 models with one recipe and compare their insertion,
deletion and substitution counts on a shared test set.
"""
import argparse
from dataclasses import replace
from pathlib import Path

from attransducer.config import load_config
from attransducer.data import generate_synthetic_dataset
from attransducer.evaluate import error_breakdown_report
from attransducer.metrics import format_table
from attransducer.model import Model
from attransducer.train import train

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=ROOT / "configs" / "synthetic.ini")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--beam", type=int, default=8)
    p.add_argument("--n-test", type=int, default=100)
    args = p.parse_args()

    model_cfg, train_cfg, data_cfg = load_config(args.config)
    train_cfg = replace(train_cfg, steps=args.steps, log_every=0)
    dataset = generate_synthetic_dataset(data_cfg)
    models = []
    for w in (1, 4):
        model = Model.init(model_cfg.replace(w=w), train_cfg.seed)
        train(model, dataset, train_cfg)
        models.append(model)
    testset = generate_synthetic_dataset(replace(data_cfg, n_utterances=args.n_test, seed=data_cfg.seed + 10_000))
    print(format_table(error_breakdown_report(*models, testset, beam=args.beam, names=("w=1", "w=4"))))


if __name__ == "__main__":
    main()
