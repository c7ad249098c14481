#!/usr/bin/env python3
"""Rebuild MNIST IDX files from the digit dumps shipped in the npm `mnist` package.

The package stores 10,000 MNIST digits as JSON arrays of pixel/255 rounded to
three decimals; rounding back to the nearest byte recovers the original pixel
values exactly (max rounding error 0.1275 < 0.5).

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist

Writes gzip-compressed `t10k-images-idx3-ubyte.gz` / `t10k-labels-idx1-ubyte.gz`
with samples ordered by digit, then by position in the source file.
"""
import gzip
import json
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    images = bytearray()
    labels = bytearray()
    count = 0
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(data) % 784 == 0
        for v in data:
            b = round(v * 255)
            assert 0 <= b <= 255 and abs(v * 255 - b) < 0.2
            images.append(b)
        n = len(data) // 784
        labels.extend([digit] * n)
        count += n
    dst.mkdir(parents=True, exist_ok=True)
    # mtime=0 keeps the archives byte-reproducible
    with gzip.GzipFile(dst / "t10k-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, count, 28, 28))
        f.write(images)
    with gzip.GzipFile(dst / "t10k-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, count))
        f.write(labels)
    print(f"wrote {count} samples to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
