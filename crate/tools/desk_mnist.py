#!/usr/bin/env python3
"""Build a desk-scale MNIST set in IDX format from the digits bundled in the
`mnist` npm package (10000 genuine MNIST digits stored as JSON per class).

Usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 tools/desk_mnist.py package/src/digits data/mnist-desk

Writes train-images-idx3-ubyte.gz / train-labels-idx1-ubyte.gz (8000 examples)
and t10k-images-idx3-ubyte.gz / t10k-labels-idx1-ubyte.gz (2000 examples).
Example order is a fixed permutation (numpy RandomState(20150101)).
"""
import gzip
import json
import os
import struct
import sys

import numpy as np

TRAIN = 8000


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + payload)


def main(src, dst):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as f:
            raw = np.asarray(json.load(f)["data"], dtype=np.float64)
        n = raw.size // 784
        pix = np.rint(raw[: n * 784] * 255.0).clip(0, 255).astype(np.uint8)
        images.append(pix.reshape(n, 784))
        labels.append(np.full(n, digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.RandomState(20150101).permutation(len(labels))
    images, labels = images[order], labels[order]
    os.makedirs(dst, exist_ok=True)
    for name, sl in (("train", slice(0, TRAIN)), ("t10k", slice(TRAIN, None))):
        im, lb = images[sl], labels[sl]
        write_idx(os.path.join(dst, f"{name}-images-idx3-ubyte.gz"), 0x803, (len(lb), 28, 28), im.tobytes())
        write_idx(os.path.join(dst, f"{name}-labels-idx1-ubyte.gz"), 0x801, (len(lb),), lb.tobytes())
        print(name, len(lb), np.bincount(lb, minlength=10).tolist())


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
