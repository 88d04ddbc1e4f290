#!/usr/bin/env python3
"""Build the bundled 2000-digit MNIST subset as IDX files.

Input is the digits directory of the `mnist` npm package (src/digits/0.json
.. 9.json, each {"data": [784 floats per digit, ...]} with values in [0, 1]).
Takes the first TRAIN + TEST digits of every class, interleaves classes
round-robin, and writes big-endian IDX files.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist-subset
"""
import argparse
import json
import struct
from pathlib import Path

PIXELS = 28 * 28


def load_digit(path):
    flat = json.loads(path.read_text())["data"]
    if len(flat) % PIXELS:
        raise SystemExit(f"{path}: length {len(flat)} is not a multiple of {PIXELS}")
    return [flat[i:i + PIXELS] for i in range(0, len(flat), PIXELS)]


def to_bytes(img):
    return bytes(min(255, max(0, round(v * 255))) for v in img)


def write_idx(out, name, images, labels):
    with open(out / f"{name}-images.idx", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(to_bytes(img))
    with open(out / f"{name}-labels.idx", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--train", type=int, default=150, help="training digits per class")
    ap.add_argument("--test", type=int, default=50, help="test digits per class")
    args = ap.parse_args()

    per_class = [load_digit(args.digits_dir / f"{d}.json") for d in range(10)]
    split = {"train": ([], []), "test": ([], [])}
    for k in range(args.train + args.test):
        name = "train" if k < args.train else "test"
        for d in range(10):
            split[name][0].append(per_class[d][k])
            split[name][1].append(d)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, (imgs, labs) in split.items():
        write_idx(args.out_dir, name, imgs, labs)
        print(f"{name}: {len(imgs)} digits")


if __name__ == "__main__":
    main()
