#!/usr/bin/env python3
"""Build the desk-scale datasets under data/.

MNIST subset: digits from the npm `mnist` package (10,000 MNIST digits
stored as 784-float JSON arrays, 3-decimal precision). The first 200
digits of each class become the training set, the next 100 the test
set. Pixels are recovered as bytes with round(v * 255) and written as
standard IDX files.

Image Segmentation: the UCI table shipped inside the `river` wheel as
`river/datasets/segment.csv.zip`. That copy drops the constant
`region-pixel-count` column (always 9); it is restored so the file has
the 19 attributes of the UCI original.

usage: prepare_data.py <npm-mnist-package-dir> <river-wheel>
"""
import io
import json
import random
import struct
import sys
import zipfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def mnist(pkg):
    train, test = [], []
    for digit in range(10):
        doc = json.loads((Path(pkg) / "src" / "digits" / f"{digit}.json").read_text())
        flat = doc["data"]
        n = len(flat) // 784
        assert n >= 300, (digit, n)
        for i in range(300):
            px = flat[i * 784:(i + 1) * 784]
            img = [int(round(v * 255)) for v in px]
            assert all(abs(v - b / 255) < 6e-4 for v, b in zip(px, img))
            (train if i < 200 else test).append((img, digit))
    rng = random.Random(20240601)
    rng.shuffle(train)
    rng.shuffle(test)
    out = ROOT / "data" / "mnist-subset"
    out.mkdir(parents=True, exist_ok=True)
    write_idx_images(out / "train-images-idx3-ubyte", [i for i, _ in train])
    write_idx_labels(out / "train-labels-idx1-ubyte", [l for _, l in train])
    write_idx_images(out / "t10k-images-idx3-ubyte", [i for i, _ in test])
    write_idx_labels(out / "t10k-labels-idx1-ubyte", [l for _, l in test])


def segment(wheel):
    outer = zipfile.ZipFile(wheel)
    inner = zipfile.ZipFile(io.BytesIO(outer.read("river/datasets/segment.csv.zip")))
    lines = inner.read(inner.namelist()[0]).decode().splitlines()
    header = lines[0].split(",")
    assert header[:2] == ["region-centroid-col", "region-centroid-row"]
    rows = [header[:2] + ["region-pixel-count"] + header[2:]]
    for line in lines[1:]:
        cells = line.split(",")
        rows.append(cells[:2] + ["9"] + cells[2:])
    assert len(rows) == 2311 and all(len(r) == 20 for r in rows)
    out = ROOT / "data" / "segment"
    out.mkdir(parents=True, exist_ok=True)
    (out / "segment.csv").write_text("\n".join(",".join(r) for r in rows) + "\n")


if __name__ == "__main__":
    mnist(sys.argv[1])
    segment(sys.argv[2])
