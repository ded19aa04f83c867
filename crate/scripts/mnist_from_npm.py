#!/usr/bin/env python3
"""Rebuild data/mnist-desk from the digits bundled in the npm `mnist` package.

The package ships 10,000 MNIST digits as per-class JSON arrays of 784 floats
(pixel / 255, three decimals). They are decoded back to u8, shuffled with a
fixed seed, and split 8,000 / 2,000 into gzip-compressed IDX files.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist-desk
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

SIDE = 28
TRAIN = 8000


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    # mtime=0 keeps the archive bytes reproducible
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + payload)


def main(src, dst):
    samples = []
    for digit in range(10):
        raw = json.loads((Path(src) / f"{digit}.json").read_text())["data"]
        pixels = bytes(min(255, max(0, round(v * 255))) for v in raw)
        for i in range(len(pixels) // (SIDE * SIDE)):
            samples.append((pixels[i * SIDE * SIDE:(i + 1) * SIDE * SIDE], digit))
    random.Random(20250701).shuffle(samples)
    dst = Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    for prefix, part in (("train", samples[:TRAIN]), ("t10k", samples[TRAIN:])):
        write_idx(dst / f"{prefix}-images-idx3-ubyte.gz", 0x803, (len(part), SIDE, SIDE),
                  b"".join(p for p, _ in part))
        write_idx(dst / f"{prefix}-labels-idx1-ubyte.gz", 0x801, (len(part),),
                  bytes(l for _, l in part))
        print(prefix, len(part))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
