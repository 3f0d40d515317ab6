#!/usr/bin/env python3
"""Materialize an MNIST-format digit corpus for the desk-scale runs.

Writes the classic four-file IDX layout (train-images-idx3-ubyte, ...) into
the target directory.  If a real MNIST copy is available (--mnist-dir or
$MNIST_DIR), its files are linked/copied through unchanged; otherwise the
scikit-learn 8x8 digits set is expanded (pixel-shifted copies) to the
requested sizes and packaged in the same byte format.  Deterministic.
"""

import argparse
import os
import shutil
import struct
import sys

FILES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]


def write_idx_images(path, images):
    # images: uint8 array {n, h, w}
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype("uint8").tobytes())


def from_mnist(mnist_dir, out_dir):
    for name in FILES:
        src = os.path.join(mnist_dir, name)
        if not os.path.exists(src):
            return False
    for name in FILES:
        shutil.copyfile(os.path.join(mnist_dir, name), os.path.join(out_dir, name))
    print(f"copied real MNIST from {mnist_dir}")
    return True


def expand(images, labels, count, rng):
    """Grow a set to `count` items by appending shifted copies."""
    import numpy as np

    out_i = [images]
    out_l = [labels]
    have = len(labels)
    while have < count:
        take = min(len(labels), count - have)
        idx = rng.permutation(len(labels))[:take]
        shifted = images[idx].copy()
        for j in range(take):
            dy, dx = rng.integers(-1, 2, size=2)
            shifted[j] = np.roll(np.roll(shifted[j], dy, axis=0), dx, axis=1)
        out_i.append(shifted)
        out_l.append(labels[idx])
        have += take
    return np.concatenate(out_i)[:count], np.concatenate(out_l)[:count]


def from_sklearn(out_dir, train_n, test_n, seed):
    import numpy as np
    from sklearn.datasets import load_digits

    ds = load_digits()
    images = np.clip(ds.images * (255.0 / 16.0), 0, 255).astype("uint8")  # {1797, 8, 8}
    labels = ds.target.astype("uint8")

    # Deterministic shuffled split, then expansion with shifted copies.
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(labels))
    images, labels = images[order], labels[order]
    cut = int(len(labels) * 0.8)
    tr_i, tr_l = expand(images[:cut], labels[:cut], train_n, rng)
    te_i, te_l = expand(images[cut:], labels[cut:], test_n, rng)

    write_idx_images(os.path.join(out_dir, FILES[0]), tr_i)
    write_idx_labels(os.path.join(out_dir, FILES[1]), tr_l)
    write_idx_images(os.path.join(out_dir, FILES[2]), te_i)
    write_idx_labels(os.path.join(out_dir, FILES[3]), te_l)
    print(f"packaged {len(tr_l)} train / {len(te_l)} test 8x8 digit images into {out_dir}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir")
    ap.add_argument("--mnist-dir", default=os.environ.get("MNIST_DIR", ""))
    ap.add_argument("--train-n", type=int, default=2400)
    ap.add_argument("--test-n", type=int, default=400)
    ap.add_argument("--seed", type=int, default=20260825)
    args = ap.parse_args()

    os.makedirs(args.out_dir, exist_ok=True)
    done = os.path.join(args.out_dir, ".ready")
    if os.path.exists(done):
        print(f"{args.out_dir} already prepared")
        return 0
    if args.mnist_dir and from_mnist(args.mnist_dir, args.out_dir):
        pass
    else:
        from_sklearn(args.out_dir, args.train_n, args.test_n, args.seed)
    with open(done, "w") as f:
        f.write("ok\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
