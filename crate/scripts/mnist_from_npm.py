"""Rebuild data/mnist from the digits bundled in the npm `mnist` package.

Usage:
    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_from_npm.py package data/mnist
"""

import gzip
import json
import random
import struct
import sys
from pathlib import Path

SHUFFLE_SEED = 20240611


def main(package: Path, out: Path) -> None:
    images, labels = [], []
    for digit in range(10):
        data = json.loads((package / "src" / "digits" / f"{digit}.json").read_text())["data"]
        assert len(data) % 784 == 0
        for i in range(len(data) // 784):
            pixels = data[i * 784 : (i + 1) * 784]
            images.append(bytes(min(255, max(0, round(v * 255))) for v in pixels))
            labels.append(digit)

    order = list(range(len(images)))
    random.Random(SHUFFLE_SEED).shuffle(order)

    out.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(out / "train-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for i in order:
            f.write(images[i])
    with gzip.GzipFile(out / "train-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels[i] for i in order))
    print(f"wrote {len(images)} images to {out}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
