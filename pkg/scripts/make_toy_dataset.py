#!/usr/bin/env python3
"""Write a synthetic PNG corpus of flat-color collages for quick experiments.

Each image uses palette colors whose grayscale values are far apart, so the
luma channel nearly determines the color and a conditional model can learn
the mapping from very little data.
"""

import argparse
from pathlib import Path

from coltran.data import save_png
from coltran.synthetic import synthetic_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--count", type=int, default=200)
    ap.add_argument("--size", type=int, default=16, help="square image side in pixels")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    images = synthetic_corpus(args.count, args.size, args.size, seed=args.seed)
    for i, img in enumerate(images):
        save_png(out / f"img_{i:04d}.png", img)
    print(f"wrote {len(images)} {args.size}x{args.size} images to {out}")


if __name__ == "__main__":
    main()
