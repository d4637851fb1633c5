#!/usr/bin/env python3
"""Few-shot transfer experiment: SVHN digits 0-4 -> MNIST digits 5-9.

Pretrains on the labeled source set, then runs the target_only,
fine_tune, and full-model methods over k in {2, 5} and three seeds, and
prints the aggregate table.  Expects IDX files (SVHN pre-converted to
grayscale with scripts/prepare_svhn.py); see README for the layout.

Usage:
    python scripts/run_transfer.py --data-root /root/data --out runs/transfer
    python scripts/run_transfer.py --synth --out runs/transfer_synth   # no data needed
"""

import argparse
import sys
from pathlib import Path

from xferlearn.cli import main as cli_main


def build_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data-root", type=Path, default=Path("/root/data"))
    p.add_argument("--out", type=Path, default=Path("runs/transfer"))
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
                  "--target_classes", "3,4", "--k_values", "2,5",
                  "--head_widths", "64,64",
                  "--pretrain_steps", str(min(args.pretrain_steps, 200)),
                  "--steps", str(min(args.steps, 150))]
    else:
        d = args.data_root
        common = ["--experiment", "digits",
                  "--source_images", str(d / "svhn-train-images-idx3-ubyte"),
                  "--source_labels", str(d / "svhn-train-labels-idx1-ubyte"),
                  "--target_images", str(d / "train-images-idx3-ubyte"),
                  "--target_labels", str(d / "train-labels-idx1-ubyte"),
                  "--test_images", str(d / "t10k-images-idx3-ubyte"),
                  "--test_labels", str(d / "t10k-labels-idx1-ubyte"),
                  "--source_classes", "0,1,2,3,4", "--target_classes", "5,6,7,8,9",
                  "--source_subsample", "10000", "--k_values", "2,5",
                  "--pretrain_steps", str(args.pretrain_steps),
                  "--steps", str(args.steps)]
    common += ["--seeds", args.seeds, "--deterministic", "true"]

    pre = args.out / "pretrain"
    code = cli_main(["pretrain", *common, "--output_dir", str(pre)])
    if code != 0:
        return code
    return cli_main(["transfer", *common, "--output_dir", str(args.out),
                     "--checkpoint", str(pre / "source.ckpt"),
                     "--methods", "target_only,fine_tune,full"])


if __name__ == "__main__":
    sys.exit(main())
