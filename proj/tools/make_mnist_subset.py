#!/usr/bin/env python3
"""Convert the digit set shipped in the `mnist` npm package to IDX files.

The package stores 10,000 MNIST digits as per-class JSON arrays of
784 floats (pixel/255 rounded to three decimals). Rounding is far finer than
1/255, so the original bytes are recovered exactly with round(v * 255).

Usage: make_mnist_subset.py <package dir> <output dir>
"""
import json
import os
import random
import struct
import sys


def main():
    pkg, out = sys.argv[1], sys.argv[2]
    samples = []
    for digit in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        for i in range(0, len(flat), 784):
            pixels = bytes(round(v * 255) for v in flat[i:i + 784])
            samples.append((pixels, digit))
    # interleave classes with a fixed shuffle so prefixes are usable subsets
    random.Random(20180304).shuffle(samples)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "train-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(samples), 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with open(os.path.join(out, "train-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 2049, len(samples)))
        f.write(bytes(label for _, label in samples))


if __name__ == "__main__":
    main()
