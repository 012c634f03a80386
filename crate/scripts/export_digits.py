"""Export scikit-learn's bundled 8x8 digits to headerless CSV.

Usage: python3 scripts/export_digits.py [OUT_DIR]

Writes digits.csv (1797 x 64) and digits_labels.csv (one class id per line).
"""
import sys
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits

out = Path(sys.argv[1] if len(sys.argv) > 1 else ".")
out.mkdir(parents=True, exist_ok=True)
digits = load_digits()
np.savetxt(out / "digits.csv", digits.data, fmt="%d", delimiter=",")
np.savetxt(out / "digits_labels.csv", digits.target, fmt="%d")
print(f"wrote {digits.data.shape[0]} rows to {out}")
