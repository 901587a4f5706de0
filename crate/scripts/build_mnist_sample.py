#!/usr/bin/env python3
"""Rebuild data/mnist-sample from the `mnist` npm package (10k MNIST digits).

Usage: npm pack mnist && python3 scripts/build_mnist_sample.py mnist-1.1.0.tgz

Pixel values in the package are stored as round(byte / 255, 3); the original
bytes are recovered exactly with round(v * 255).  Each digit is shuffled with a
fixed seed and split 80/20 into train/probe IDX files.
"""
import hashlib
import json
import random
import struct
import sys
import tarfile
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "data" / "mnist-sample"


def write_idx(images, labels, stem):
    img_path = OUT / f"{stem}-images-idx3-ubyte"
    lbl_path = OUT / f"{stem}-labels-idx1-ubyte"
    with open(img_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(lbl_path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))
    return [img_path.name, lbl_path.name]


def main(tgz):
    rng = random.Random(20211107)
    train, probe = [], []
    with tarfile.open(tgz) as tar:
        for digit in range(10):
            raw = json.load(tar.extractfile(f"package/src/digits/{digit}.json"))["data"]
            pix = [round(v * 255) for v in raw]
            imgs = [pix[i : i + 784] for i in range(0, len(pix), 784)]
            rng.shuffle(imgs)
            cut = int(len(imgs) * 0.8)
            train += [(img, digit) for img in imgs[:cut]]
            probe += [(img, digit) for img in imgs[cut:]]
    rng.shuffle(train)
    rng.shuffle(probe)
    OUT.mkdir(parents=True, exist_ok=True)
    splits = {}
    for stem, rows in (("train", train), ("probe", probe)):
        splits[stem] = write_idx([r[0] for r in rows], [r[1] for r in rows], stem)
    sha = {
        name: hashlib.sha256((OUT / name).read_bytes()).hexdigest()
        for names in splits.values()
        for name in names
    }
    manifest = {"name": "mnist-sample", "format": "idx", "splits": splits, "sha256": sha}
    (OUT / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


if __name__ == "__main__":
    main(sys.argv[1])
