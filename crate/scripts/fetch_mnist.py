#!/usr/bin/env python3
"""Build IDX files from the 10k MNIST digits bundled in the npm `mnist` package.

The canonical MNIST mirrors are often unreachable from CI sandboxes; the npm
registry usually is. Pixel values in the package are stored as fractions with
three decimals, so they are mapped back to bytes with round(v * 255).

usage: fetch_mnist.py OUT_DIR
"""
import json
import os
import struct
import subprocess
import sys
import tarfile
import tempfile


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "data/mnist"
    os.makedirs(out, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "--silent", "mnist@1.1.0"], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        with tarfile.open(os.path.join(tmp, "mnist-1.1.0.tgz")) as tar:
            tar.extractall(tmp)
        per_class = []
        for digit in range(10):
            path = os.path.join(tmp, "package", "src", "digits", f"{digit}.json")
            with open(path) as f:
                raw = json.load(f)["data"]
            n = len(raw) // 784
            per_class.append([raw[i * 784:(i + 1) * 784] for i in range(n)])
    # interleave classes so any prefix is roughly balanced
    images, labels = [], []
    idx = 0
    while any(idx < len(c) for c in per_class):
        for digit, c in enumerate(per_class):
            if idx < len(c):
                images.append(c[idx])
                labels.append(digit)
        idx += 1
    n = len(images)
    with open(os.path.join(out, "train-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for img in images:
            f.write(bytes(min(255, max(0, round(v * 255))) for v in img))
    with open(os.path.join(out, "train-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(labels))
    print(f"wrote {n} images to {out}")


if __name__ == "__main__":
    main()
