#!/usr/bin/env python3
"""Write a 6000/1000 MNIST subset as IDX files.

Reads the per-digit JSON files shipped in the npm `mnist` package
(`src/digits/<k>.json`, key "data": flat 784-value rows scaled to [0, 1]).
Pixels are restored to bytes with round(v * 255).
"""

import argparse
import json
import struct
from pathlib import Path

import numpy as np


def load_digits(src: Path):
    images, labels = [], []
    for digit in range(10):
        flat = np.asarray(json.loads((src / f"{digit}.json").read_text())["data"])
        rows = flat.reshape(-1, 784)
        images.append(np.rint(rows * 255).clip(0, 255).astype(np.uint8))
        labels.append(np.full(len(rows), digit, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def write_idx(out: Path, stem: str, images: np.ndarray, labels: np.ndarray):
    with open(out / f"{stem}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        f.write(images.tobytes())
    with open(out / f"{stem}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--source", type=Path, required=True, help="directory with 0.json .. 9.json")
    parser.add_argument("--out", type=Path, default=Path("data"))
    parser.add_argument("--train", type=int, default=6000)
    parser.add_argument("--test", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    images, labels = load_digits(args.source)
    if args.train + args.test > len(images):
        parser.error(f"only {len(images)} digits available")
    order = np.random.default_rng(args.seed).permutation(len(images))
    train_idx = order[: args.train]
    test_idx = order[args.train : args.train + args.test]
    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(args.out, "train", images[train_idx], labels[train_idx])
    write_idx(args.out, "t10k", images[test_idx], labels[test_idx])
    print(f"wrote {len(train_idx)} train / {len(test_idx)} test digits to {args.out}")


if __name__ == "__main__":
    main()
