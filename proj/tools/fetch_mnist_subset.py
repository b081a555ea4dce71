#!/usr/bin/env python3
"""Build a small MNIST subset in IDX format.

The 5000 digits bundled with the mlxtend wheel (500 per class) are shuffled
with a fixed seed and split into train/test IDX files.

    python tools/fetch_mnist_subset.py --out data/mnist5k
"""

import argparse
import gzip
import io
import pathlib
import struct
import subprocess
import sys
import tempfile
import zipfile

import numpy as np

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def find_wheel(explicit):
    if explicit:
        return pathlib.Path(explicit)
    for cand in sorted(pathlib.Path("/tmp/pkgs").glob("mlxtend-*.whl")):
        return cand
    tmp = pathlib.Path(tempfile.mkdtemp())
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-d", str(tmp), "mlxtend"],
        check=True,
    )
    return next(tmp.glob("mlxtend-*.whl"))


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/mnist5k")
    ap.add_argument("--wheel", help="path to an mlxtend wheel")
    ap.add_argument("--train", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    with zipfile.ZipFile(find_wheel(args.wheel)) as z:
        raw = gzip.decompress(z.read(MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    labels, images = table[:, -1], table[:, :-1]
    if images.shape[1] != 784:
        sys.exit(f"unexpected row width {images.shape[1]}")

    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order], labels[order]
    tr = args.train

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images-idx3-ubyte", images[:tr])
    write_labels(out / "train-labels-idx1-ubyte", labels[:tr])
    write_images(out / "t10k-images-idx3-ubyte", images[tr:])
    write_labels(out / "t10k-labels-idx1-ubyte", labels[tr:])
    print(f"wrote {tr} train / {len(labels) - tr} test examples to {out}")


if __name__ == "__main__":
    main()
