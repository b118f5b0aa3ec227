#!/usr/bin/env python3
"""Train the core at several parallel-head weights and compare holdout NLLs.

The parallel head shares the trunk with the autoregressive head, so lam trades
capacity between them: lam=0 ignores the parallel logits entirely, lam=1 stops
training the autoregressive readout.
"""

import argparse

import numpy as np

from coltran.core import ModelConfig
from coltran.data import make_training_example
from coltran.synthetic import synthetic_corpus
from coltran.training import TrainConfig, evaluate_stage, train_stage


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lams", type=float, nargs="+", default=[0.0, 0.01, 0.1, 0.5])
    ap.add_argument("--count", type=int, default=120)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    cfg = ModelConfig(d=32, heads=4, blocks=1, encoder_blocks=1, mlp_width=128,
                      rows=8, cols=8, height=16, width=16)
    images = synthetic_corpus(args.count, cfg.height, cfg.width, seed=args.seed)
    examples = [make_training_example(img, cfg.rows, cfg.cols, name=f"im{i}")
                for i, img in enumerate(images)]
    cut = max(1, len(examples) // 10)
    train, holdout = examples[cut:], examples[:cut]

    print("lam\tholdout_nll_ar\tholdout_nll_parallel")
    for lam in args.lams:
        tc = TrainConfig(steps=args.steps, batch_size=8, lam=lam,
                         eval_every=args.steps, seed=0)
        res = train_stage("core", train, cfg, tc)
        m = evaluate_stage("core", holdout, res.params, cfg, lam)
        print(f"{lam}\t{m['nll_ar']:.4f}\t{m['nll_parallel']:.4f}")


if __name__ == "__main__":
    main()
