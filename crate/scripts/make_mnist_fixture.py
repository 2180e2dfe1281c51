"""Convert the 5000-digit MNIST subset shipped with mlxtend into gzipped IDX files.

Usage: python3 make_mnist_fixture.py <mlxtend wheel or mnist_5k.csv.gz> <out_dir>

Rows are CSV: 784 pixel values then the label. Each class is shuffled with a
fixed seed and split 400 train / 100 test.
"""
import gzip
import random
import struct
import sys
import zipfile
from pathlib import Path


def read_rows(src):
    if src.endswith(".whl"):
        raw = zipfile.ZipFile(src).read("mlxtend/data/data/mnist_5k.csv.gz")
    else:
        raw = Path(src).read_bytes()
    for line in gzip.decompress(raw).decode().split():
        vals = [int(v) for v in line.split(",")]
        yield vals[:-1], vals[-1]


def write_idx(path, images, labels):
    with gzip.GzipFile(path.with_name(path.name + "-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with gzip.GzipFile(path.with_name(path.name + "-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    src, out = sys.argv[1], Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    by_class = {}
    for img, label in read_rows(src):
        by_class.setdefault(label, []).append(img)
    rng = random.Random(5000)
    train, test = [], []
    for label in sorted(by_class):
        imgs = by_class[label]
        rng.shuffle(imgs)
        train += [(i, label) for i in imgs[:400]]
        test += [(i, label) for i in imgs[400:]]
    rng.shuffle(train)
    rng.shuffle(test)
    for name, rows in (("train", train), ("test", test)):
        write_idx(out / name, [r[0] for r in rows], [r[1] for r in rows])


if __name__ == "__main__":
    main()
