#!/usr/bin/env python3
"""Fetch MNIST and write the classic IDX file quartet into a data directory.

Tries, in order:
  1. nothing (files already present),
  2. a local mnist.npz (``MNIST_NPZ`` env var or ~/.keras/datasets/mnist.npz),
  3. downloading mnist.npz from the usual mirror,
  4. the npm registry's ``mnist`` package, which bundles 10,010 real MNIST
     digits (1,001 per class) as JSON. Pixel values there are p/255 rounded
     to 3 decimals, which inverts exactly to the original bytes. Without an
     official train/test partition, a deterministic stratified 75/25 split
     is used instead.

Usage: get_mnist.py OUTDIR
"""

import json
import os
import struct
import subprocess
import sys
import tarfile
import tempfile
import urllib.request

FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)

NPZ_URL = "https://storage.googleapis.com/tensorflow/tf-keras-datasets/mnist.npz"


def write_idx(outdir, prefix, images, labels):
    """images: list of bytes objects (28*28 each); labels: list of ints."""
    n = len(images)
    with open(os.path.join(outdir, prefix + "-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 2051, n, 28, 28))
        for img in images:
            f.write(img)
    with open(os.path.join(outdir, prefix + "-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 2049, n))
        f.write(bytes(labels))


def from_npz(outdir, path):
    import numpy as np

    data = np.load(path)
    xtr, ytr, xte, yte = data["x_train"], data["y_train"], data["x_test"], data["y_test"]
    write_idx(outdir, "train", [x.tobytes() for x in xtr.astype("uint8")], [int(y) for y in ytr])
    write_idx(outdir, "t10k", [x.tobytes() for x in xte.astype("uint8")], [int(y) for y in yte])
    print(f"wrote {len(ytr)}/{len(yte)} train/test images from {path}")


def from_npm(outdir):
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            ["npm", "pack", "mnist"], cwd=tmp, check=True,
            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
        )
        tarball = next(f for f in os.listdir(tmp) if f.endswith(".tgz"))
        with tarfile.open(os.path.join(tmp, tarball)) as tar:
            tar.extractall(tmp)
        train_imgs, train_labels, test_imgs, test_labels = [], [], [], []
        for digit in range(10):
            with open(os.path.join(tmp, "package", "src", "digits", f"{digit}.json")) as f:
                flat = json.load(f)["data"]
            n = len(flat) // 784
            imgs = [
                bytes(round(v * 255) for v in flat[i * 784 : (i + 1) * 784]) for i in range(n)
            ]
            n_train = round(0.75 * n)
            train_imgs += imgs[:n_train]
            train_labels += [digit] * n_train
            test_imgs += imgs[n_train:]
            test_labels += [digit] * (n - n_train)
    write_idx(outdir, "train", train_imgs, train_labels)
    write_idx(outdir, "t10k", test_imgs, test_labels)
    print(f"wrote {len(train_labels)}/{len(test_labels)} train/test images from npm mnist")


def main():
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    outdir = sys.argv[1]
    os.makedirs(outdir, exist_ok=True)
    if all(os.path.exists(os.path.join(outdir, f)) for f in FILES):
        print(f"mnist already present in {outdir}")
        return

    npz = os.environ.get("MNIST_NPZ", os.path.expanduser("~/.keras/datasets/mnist.npz"))
    if os.path.exists(npz):
        from_npz(outdir, npz)
        return

    try:
        with tempfile.NamedTemporaryFile(suffix=".npz") as tmp:
            urllib.request.urlretrieve(NPZ_URL, tmp.name)
            from_npz(outdir, tmp.name)
            return
    except Exception as e:
        print(f"npz download unavailable ({e}); trying the npm registry", file=sys.stderr)

    try:
        from_npm(outdir)
    except Exception as e:
        sys.exit(f"could not obtain MNIST from any source: {e}")


if __name__ == "__main__":
    main()
