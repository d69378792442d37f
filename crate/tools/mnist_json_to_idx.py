#!/usr/bin/env python3
"""Convert the per-digit JSON arrays shipped in the npm `mnist` package
(10 000 MNIST digits, pixels in [0,1]) into IDX files.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/mnist_json_to_idx.py package/src/digits data/mnist-subset

Writes an 8000-image train split and a 2000-image test split, shuffled
with a fixed seed so the output is reproducible.
"""
import json
import random
import struct
import sys
from pathlib import Path

SIDE = 28
PIXELS = SIDE * SIDE
N_TRAIN = 8000


def load(digits_dir):
    samples = []
    for label in range(10):
        data = json.loads((digits_dir / f"{label}.json").read_text())["data"]
        assert len(data) % PIXELS == 0
        for k in range(len(data) // PIXELS):
            px = bytes(
                min(255, max(0, round(v * 255))) for v in data[k * PIXELS:(k + 1) * PIXELS]
            )
            samples.append((px, label))
    return samples


def write_idx(out_dir, stem, samples):
    with open(out_dir / f"{stem}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), SIDE, SIDE))
        for px, _ in samples:
            f.write(px)
    with open(out_dir / f"{stem}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for _, label in samples))


def main():
    digits_dir, out_dir = Path(sys.argv[1]), Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = load(digits_dir)
    random.Random(0).shuffle(samples)
    write_idx(out_dir, "train", samples[:N_TRAIN])
    write_idx(out_dir, "t10k", samples[N_TRAIN:])
    print(f"wrote {N_TRAIN} train / {len(samples) - N_TRAIN} test images to {out_dir}")


if __name__ == "__main__":
    main()
