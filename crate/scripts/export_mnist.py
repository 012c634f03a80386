"""Export MNIST (70000 x 784) to headerless CSV via OpenML.

Usage: python3 scripts/export_mnist.py [OUT_DIR] [--limit N]

Needs network access on first use; scikit-learn caches the download.
Writes mnist.csv and mnist_labels.csv. Pixel values stay in 0..255.
"""
import argparse
from pathlib import Path

import numpy as np
from sklearn.datasets import fetch_openml

parser = argparse.ArgumentParser()
parser.add_argument("out", nargs="?", default=".")
parser.add_argument("--limit", type=int, default=None, help="keep only the first N rows")
args = parser.parse_args()

out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)
x, y = fetch_openml("mnist_784", version=1, return_X_y=True, as_frame=False, parser="auto")
if args.limit is not None:
    x, y = x[: args.limit], y[: args.limit]
np.savetxt(out / "mnist.csv", x, fmt="%d", delimiter=",")
np.savetxt(out / "mnist_labels.csv", y.astype(int), fmt="%d")
print(f"wrote {x.shape[0]} rows to {out}")
