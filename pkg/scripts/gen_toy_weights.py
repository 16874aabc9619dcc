#!/usr/bin/env python3
"""Regenerate the fixed toy-backbone weight files shipped in the package.

The arrays come from seeded numpy streams keyed by (layout, parameter
name), so rerunning this script always reproduces the committed files
byte for byte.
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from styleshield.backend.toy import _LAYOUTS, build_toy_weights  # noqa: E402


def main():
    out_dir = Path(__file__).resolve().parents[1] / "src" / "styleshield" / "data"
    out_dir.mkdir(parents=True, exist_ok=True)
    for layout_name in sorted(_LAYOUTS):
        arrays = build_toy_weights(layout_name)
        path = out_dir / (layout_name.replace("-", "_") + ".npz")
        np.savez(path, **arrays)
        total = sum(a.size for a in arrays.values())
        print(f"{path.name}: {len(arrays)} arrays, {total} values")


if __name__ == "__main__":
    main()
