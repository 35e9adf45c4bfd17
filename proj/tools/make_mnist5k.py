#!/usr/bin/env python3
"""Convert the 5,000-image MNIST subset shipped inside the mlxtend wheel to IDX files.

Usage: make_mnist5k.py <mlxtend-wheel-or-csv.gz> <out-dir>

Writes images-idx3-ubyte and labels-idx1-ubyte (magic 0x803 / 0x801, big-endian dims).
The source is sorted by class; records are interleaved round-robin by label so
that any prefix (the loaders' `limit`) stays class-balanced.
"""
import gzip
import struct
import sys
import zipfile
from pathlib import Path

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_rows(src: Path):
    if src.suffix == ".whl":
        raw = zipfile.ZipFile(src).read(CSV_MEMBER)
    else:
        raw = src.read_bytes()
    for line in gzip.decompress(raw).decode().splitlines():
        if line.strip():
            yield [int(float(v)) for v in line.split(",")]


def interleave(rows):
    by_label = {}
    for r in rows:
        by_label.setdefault(r[784], []).append(r)
    queues = [by_label[k] for k in sorted(by_label)]
    out = []
    for i in range(max(len(q) for q in queues)):
        out.extend(q[i] for q in queues if i < len(q))
    return out


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__, file=sys.stderr)
        return 2
    rows = interleave(list(read_rows(Path(sys.argv[1]))))
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    n = len(rows)
    with open(out / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for r in rows:
            f.write(bytes(r[:784]))
    with open(out / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(r[784] for r in rows))
    print(f"wrote {n} images to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
