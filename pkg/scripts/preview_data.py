#!/usr/bin/env python3
"""Render a few synthetic scenes next to their clean and corrupted masks.

Writes <out>/<id>_{image,clean,noisy}.png so the generator and the noise
model can be eyeballed before committing to a long run.
"""

import argparse
from pathlib import Path

from crackseg.synthdata import (CrackSpec, NoiseSpec, SceneSpec, make_dataset,
                                save_image_png, save_mask_png)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=6)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--under-rate", type=float, default=0.4)
    ap.add_argument("--out", default="runs/preview")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = make_dataset(args.n, CrackSpec(), SceneSpec(),
                           NoiseSpec(under_rate=args.under_rate), seed=args.seed)
    for s in samples:
        save_image_png(out / f"{s.id}_image.png", s.image)
        save_mask_png(out / f"{s.id}_clean.png", s.clean_mask)
        save_mask_png(out / f"{s.id}_noisy.png", s.noisy_mask)
        dropped = int(s.clean_mask.sum()) - int(s.noisy_mask.sum())
        print(f"{s.id}: {int(s.clean_mask.sum())} crack px, {dropped} dropped by noise")
    print(f"wrote {3 * len(samples)} files under {out}")


if __name__ == "__main__":
    main()
