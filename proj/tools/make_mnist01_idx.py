#!/usr/bin/env python3
"""Build a small MNIST 0/1 IDX pair from the `mnist` npm package.

The npm package (https://www.npmjs.com/package/mnist, MIT) ships a subset of
MNIST digits as JSON arrays of intensities in [0, 1] rounded to three
decimals. This script keeps the 0 and 1 digits, restores 8-bit pixels and
writes them in the classic IDX layout so the regular loader can read them.

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 tools/make_mnist01_idx.py package/src/digits tests/data/mnist01
"""

import json
import struct
import sys
from pathlib import Path

SIDE = 28


def load_digit(digits_dir: Path, digit: int) -> list[bytes]:
    raw = json.loads((digits_dir / f"{digit}.json").read_text())["data"]
    n = len(raw) // (SIDE * SIDE)
    images = []
    for i in range(n):
        chunk = raw[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
        images.append(bytes(min(255, max(0, round(v * 255))) for v in chunk))
    return images


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__)
        return 2
    digits_dir, out_dir = Path(sys.argv[1]), Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)

    zeros, ones = load_digit(digits_dir, 0), load_digit(digits_dir, 1)
    # Interleave so that any prefix holds both classes.
    images, labels = [], []
    for i in range(max(len(zeros), len(ones))):
        if i < len(zeros):
            images.append(zeros[i])
            labels.append(0)
        if i < len(ones):
            images.append(ones[i])
            labels.append(1)

    with open(out_dir / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), SIDE, SIDE))
        for img in images:
            f.write(img)
    with open(out_dir / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))
    print(f"wrote {len(images)} samples ({len(zeros)} zeros, {len(ones)} ones)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
