#!/usr/bin/env python3
"""Build a 10,000-digit MNIST subset in IDX format from the `mnist` npm package.

The npm package ships 10,000 real MNIST digits as per-class JSON arrays of
784 floats in [0, 1]. They are quantized back to bytes, shuffled with a fixed
seed and split into train/test IDX files that `load_mnist` reads directly.

Usage: tools/fetch_mnist_subset.py [--tarball mnist-1.1.0.tgz] [--out data/mnist]
Without --tarball the package is fetched with `npm pack mnist@1.1.0`.
"""

import argparse
import json
import pathlib
import random
import struct
import subprocess
import tarfile
import tempfile

PIXELS = 28 * 28


def read_digits(tarball):
    digits = []
    with tarfile.open(tarball, "r:gz") as tar:
        for label in range(10):
            member = tar.getmember(f"package/src/digits/{label}.json")
            data = json.load(tar.extractfile(member))["data"]
            if len(data) % PIXELS:
                raise SystemExit(f"digit file {label}.json is not a multiple of 784 values")
            for start in range(0, len(data), PIXELS):
                pixels = bytes(min(255, max(0, round(v * 255))) for v in data[start:start + PIXELS])
                digits.append((pixels, label))
    return digits


def write_idx(out_dir, prefix, records):
    images = out_dir / f"{prefix}-images-idx3-ubyte"
    labels = out_dir / f"{prefix}-labels-idx1-ubyte"
    with open(images, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(records), 28, 28))
        for pixels, _ in records:
            f.write(pixels)
    with open(labels, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(records)))
        f.write(bytes(label for _, label in records))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--tarball", type=pathlib.Path)
    parser.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data/mnist"))
    parser.add_argument("--test-count", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=20150101)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tarball = args.tarball
        if tarball is None:
            subprocess.run(["npm", "pack", "mnist@1.1.0", "--pack-destination", tmp],
                           check=True, stdout=subprocess.DEVNULL)
            tarball = pathlib.Path(tmp) / "mnist-1.1.0.tgz"
        digits = read_digits(tarball)

    random.Random(args.seed).shuffle(digits)
    args.out.mkdir(parents=True, exist_ok=True)
    test, train = digits[:args.test_count], digits[args.test_count:]
    write_idx(args.out, "train", train)
    write_idx(args.out, "t10k", test)
    print(f"wrote {len(train)} train / {len(test)} test digits to {args.out}")


if __name__ == "__main__":
    main()
