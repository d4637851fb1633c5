#!/usr/bin/env python3
"""Unsupervised domain adaptation ablation: SVHN -> MNIST, all ten digits.

Pretrains a source classifier, then adapts the encoder adversarially
against unlabeled target images with the classifier head frozen, and
prints source-only vs adapted test accuracy per seed.

Usage:
    python scripts/run_uda.py --data-root /root/data --out runs/uda
    python scripts/run_uda.py --synth --out runs/uda_synth   # no data needed
"""

import argparse
import sys
from pathlib import Path

from xferlearn.cli import main as cli_main


def build_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data-root", type=Path, default=Path("/root/data"))
    p.add_argument("--out", type=Path, default=Path("runs/uda"))
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--pretrain-steps", type=int, default=3000)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--synth", action="store_true",
                   help="run on the built-in synthetic fixture instead of real data")
    return p.parse_args()


def main():
    args = build_args()
    if args.synth:
        common = ["--experiment", "synth", "--source_classes", "0,1,2",
                  "--target_classes", "0,1,2", "--head_widths", "64,64",
                  "--pretrain_steps", str(min(args.pretrain_steps, 200)),
                  "--steps", str(min(args.steps, 150))]
    else:
        d = args.data_root
        common = ["--experiment", "ablation",
                  "--source_images", str(d / "svhn-train-images-idx3-ubyte"),
                  "--source_labels", str(d / "svhn-train-labels-idx1-ubyte"),
                  "--target_images", str(d / "train-images-idx3-ubyte"),
                  "--target_labels", str(d / "train-labels-idx1-ubyte"),
                  "--test_images", str(d / "t10k-images-idx3-ubyte"),
                  "--test_labels", str(d / "t10k-labels-idx1-ubyte"),
                  "--source_subsample", "10000",
                  "--pretrain_steps", str(args.pretrain_steps),
                  "--steps", str(args.steps)]
    common += ["--seeds", args.seeds, "--deterministic", "true"]

    pre = args.out / "pretrain"
    code = cli_main(["pretrain", *common, "--output_dir", str(pre)])
    if code != 0:
        return code
    return cli_main(["uda", *common, "--output_dir", str(args.out),
                     "--checkpoint", str(pre / "source.ckpt")])


if __name__ == "__main__":
    sys.exit(main())
