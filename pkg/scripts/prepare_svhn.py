#!/usr/bin/env python3
"""Convert SVHN cropped-digit .mat files to grayscale IDX.

SVHN ships as Matlab files (train_32x32.mat / test_32x32.mat) holding
32x32 RGB digits with labels 1-10 where 10 means digit zero.  The
training pipeline consumes only single-channel IDX, so this converts
once up front: luminance 0.299 R + 0.587 G + 0.114 B, rounded half-up,
labels remapped so digit zero is 0.

Requires scipy (only for this conversion; the package itself does not).

Usage:
    python scripts/prepare_svhn.py train_32x32.mat \
        --images svhn-train-images-idx3-ubyte --labels svhn-train-labels-idx1-ubyte
"""

import argparse
import sys

import numpy as np

from xferlearn.data import rgb_to_grayscale, write_idx


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("mat_file", help="SVHN cropped-digits .mat file")
    p.add_argument("--images", required=True, help="output IDX image path")
    p.add_argument("--labels", required=True, help="output IDX label path")
    args = p.parse_args()

    try:
        from scipy.io import loadmat
    except ImportError:
        print("error: scipy is required for .mat conversion (pip install scipy)",
              file=sys.stderr)
        return 1

    mat = loadmat(args.mat_file)
    rgb = np.transpose(mat["X"], (3, 0, 1, 2))  # HWCN -> NHWC
    labels = mat["y"].ravel().astype(np.int64) % 10  # SVHN uses 10 for digit zero
    gray = rgb_to_grayscale(rgb)
    write_idx(args.images, gray, args.labels, labels)
    print(f"wrote {len(gray)} examples to {args.images} / {args.labels}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
