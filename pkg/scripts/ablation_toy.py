#!/usr/bin/env python3
"""Compare conditional modulation against plain additive conditioning.

Trains two cores with identical budgets on a synthetic corpus, one with all
three modulation mechanisms on and one with everything off (grayscale context
enters only through the additive skip). Reports holdout NLL for both, then
re-evaluates the conditional checkpoint under each live-flag preset.
"""

import argparse
import dataclasses

import numpy as np

from coltran.cli import EVAL_PRESETS
from coltran.conditional import BASELINE_ADDITIVE, AblationFlags
from coltran.core import ModelConfig
from coltran.data import make_training_example
from coltran.synthetic import synthetic_corpus
from coltran.training import TrainConfig, evaluate_stage, train_stage


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=200)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    images = synthetic_corpus(args.count, 16, 16, seed=args.seed)
    examples = [make_training_example(img, 8, 8, name=f"im{i}") for i, img in enumerate(images)]
    cut = max(1, len(examples) // 10)
    train, holdout = examples[cut:], examples[:cut]
    tc = TrainConfig(steps=args.steps, batch_size=8, eval_every=max(1, args.steps // 5), seed=0)

    def build(flags):
        return ModelConfig(d=32, heads=4, blocks=1, encoder_blocks=1, mlp_width=128,
                           rows=8, cols=8, height=16, width=16, ablation=flags)

    trained = {}
    for name, flags in (("full", AblationFlags()), ("baseline_additive", BASELINE_ADDITIVE)):
        cfg = build(flags)
        print(f"== training {name} ==")
        res = train_stage("core", train, cfg, tc,
                          log_fn=lambda r: print(f"  step={r['step']} nll_ar={r['nll_ar']:.4f}"))
        m = evaluate_stage("core", holdout, res.params, cfg, tc.lam)
        trained[name] = (res, m)
        print(f"{name}: holdout nll_ar={m['nll_ar']:.4f}")

    full_res, _ = trained["full"]
    print("\npreset sweep over the full checkpoint (no retraining):")
    base_cfg = build(AblationFlags())
    for preset, flags in EVAL_PRESETS.items():
        cfg = dataclasses.replace(base_cfg, ablation=flags)
        m = evaluate_stage("core", holdout, full_res.params, cfg, tc.lam)
        print(f"  {preset:<18} nll_ar={m['nll_ar']:.4f}")


if __name__ == "__main__":
    main()
