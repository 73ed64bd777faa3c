"""Convert the digits bundled with the npm `mnist` package into IDX files.

The npm package (https://www.npmjs.com/package/mnist) ships 10,010 MNIST
training digits as JSON arrays of intensities rounded to 3 decimals. This
script restores the original bytes and writes a shuffled IDX pair:

    python3 python/make_mnist_subset.py <unpacked npm package dir> data/mnist

Obtain the package with `npm pack mnist && tar xzf mnist-1.1.0.tgz`.
"""

import json
import struct
import sys
from pathlib import Path

import numpy as np


def main() -> None:
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    pkg, out = Path(sys.argv[1]), Path(sys.argv[2])
    images, labels = [], []
    for digit in range(10):
        raw = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
        arr = np.rint(np.asarray(raw, dtype=np.float64) * 255.0).astype(np.uint8)
        arr = arr.reshape(-1, 28 * 28)
        images.append(arr)
        labels.append(np.full(len(arr), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(0).permutation(len(labels))
    images, labels = images[order], labels[order]

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        f.write(images.tobytes())
    with open(out / "train-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(labels.tobytes())
    print(f"wrote {len(labels)} images to {out}")


if __name__ == "__main__":
    main()
