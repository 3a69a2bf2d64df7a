#!/usr/bin/env python3
"""Build MNIST IDX files from the digits bundled in the `mnist` npm package.

The npm package ships ~10k real MNIST digits as normalized floats, one JSON
file per class. They are converted back to bytes and split per class into a
train and a test partition, then written in the IDX format expected by
`load_idx`.

    python3 scripts/fetch_mnist.py --out data/mnist
"""
import argparse
import json
import pathlib
import random
import struct
import subprocess
import tarfile
import tempfile

ROWS = COLS = 28


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), ROWS, COLS))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def load_digits(package_dir):
    per_class = []
    for digit in range(10):
        raw = json.loads((package_dir / "src" / "digits" / f"{digit}.json").read_text())["data"]
        n = len(raw) // (ROWS * COLS)
        imgs = []
        for k in range(n):
            px = raw[k * ROWS * COLS:(k + 1) * ROWS * COLS]
            imgs.append([min(255, max(0, round(v * 255))) for v in px])
        per_class.append(imgs)
    return per_class


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--train-fraction", type=float, default=0.7)
    ap.add_argument("--package-dir", help="already unpacked npm package (skips npm pack)")
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        if args.package_dir:
            pkg = pathlib.Path(args.package_dir)
        else:
            subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                           stdout=subprocess.DEVNULL)
            with tarfile.open(next(pathlib.Path(tmp).glob("mnist-*.tgz"))) as tar:
                tar.extractall(tmp)
            pkg = pathlib.Path(tmp) / "package"
        per_class = load_digits(pkg)

    train, test = [], []
    for digit, imgs in enumerate(per_class):
        cut = int(len(imgs) * args.train_fraction)
        train += [(img, digit) for img in imgs[:cut]]
        test += [(img, digit) for img in imgs[cut:]]
    rng = random.Random(0)
    rng.shuffle(train)
    rng.shuffle(test)

    write_images(out / "train-images-idx3-ubyte", [i for i, _ in train])
    write_labels(out / "train-labels-idx1-ubyte", [l for _, l in train])
    write_images(out / "t10k-images-idx3-ubyte", [i for i, _ in test])
    write_labels(out / "t10k-labels-idx1-ubyte", [l for _, l in test])
    print(f"wrote {len(train)} train / {len(test)} test examples to {out}")


if __name__ == "__main__":
    main()
