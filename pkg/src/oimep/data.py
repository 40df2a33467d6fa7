"""Dataset loading: IDX files, the MNIST/100 subset, target encoding.

IDX is the classic big-endian container used by MNIST and
Fashion-MNIST: a 32-bit magic (0x803 for uint8 image cubes, 0x801 for
uint8 label vectors), the dimension sizes, then raw bytes.  Files may
be plain or gzip-compressed (.gz); pixels are scaled to [0, 1].

MNIST/100 is the small benchmark split used by Ising-machine papers:
100 training and 10 test examples per class, drawn class-balanced from
the full train/test sets with a seeded generator.
"""

from __future__ import annotations

import gzip
import hashlib
import os
import struct
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxError(ValueError):
    """Malformed IDX input."""


class IdxMagicError(IdxError):
    """The file does not start with the expected IDX magic number."""


class IdxTruncatedError(IdxError):
    """The file is shorter than its own header claims."""


class IdxCountMismatchError(IdxError):
    """Image and label files disagree on the number of examples."""


@dataclass
class Dataset:
    """A loaded split: images (N, pixels) in [0, 1], integer labels."""

    images: np.ndarray
    labels: np.ndarray
    name: str = ""
    split: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise IdxCountMismatchError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.labels)


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_header(raw: bytes, expected_magic: int, n_dims: int, path) -> tuple:
    header = 4 * (1 + n_dims)
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: too short for an IDX header")
    fields = struct.unpack(f">{1 + n_dims}I", raw[:header])
    if fields[0] != expected_magic:
        raise IdxMagicError(
            f"{path}: magic 0x{fields[0]:08x}, expected 0x{expected_magic:08x}"
        )
    return fields[1:], raw[header:]


def load_idx(images_path, labels_path, name: str = "", split: str = "") -> Dataset:
    """Parse an IDX image/label file pair into a normalized Dataset.

    Pixels are bytes 0..255 divided by 255 (float32).  Raises distinct
    errors for a wrong magic, a truncated file, and an image/label
    count mismatch.
    """
    (n, rows, cols), pixels = _parse_header(
        _read_bytes(images_path), IMAGE_MAGIC, 3, images_path
    )
    if len(pixels) < n * rows * cols:
        raise IdxTruncatedError(
            f"{images_path}: header promises {n}x{rows}x{cols} pixels, "
            f"file holds {len(pixels)}"
        )
    (n_labels,), label_bytes = _parse_header(
        _read_bytes(labels_path), LABEL_MAGIC, 1, labels_path
    )
    if len(label_bytes) < n_labels:
        raise IdxTruncatedError(f"{labels_path}: fewer label bytes than declared")
    if n != n_labels:
        raise IdxCountMismatchError(
            f"{images_path} has {n} images but {labels_path} has {n_labels} labels"
        )
    images = np.frombuffer(pixels, dtype=np.uint8, count=n * rows * cols)
    images = images.reshape(n, rows * cols).astype(np.float32) / np.float32(255.0)
    labels = np.frombuffer(label_bytes, dtype=np.uint8, count=n).astype(np.int64)
    return Dataset(images=images, labels=labels, name=name, split=split)


def write_idx(images_u8: np.ndarray, labels: np.ndarray, images_path, labels_path):
    """Write a uint8 image cube and labels as an IDX pair (test fixtures,
    subset exports).  Images must be (N, rows, cols)."""
    images_u8 = np.ascontiguousarray(images_u8, dtype=np.uint8)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    n, rows, cols = images_u8.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        fh.write(images_u8.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def make_mnist100(
    train: Dataset, test: Dataset, seed: int
) -> tuple[Dataset, Dataset]:
    """Class-balanced 1,000/100 subset: 100 train + 10 test per class."""
    rng = np.random.default_rng(seed)
    train_sub = _balanced_subset(train, 100, rng)
    test_sub = _balanced_subset(test, 10, rng)
    return (
        Dataset(train.images[train_sub], train.labels[train_sub], train.name, "train"),
        Dataset(test.images[test_sub], test.labels[test_sub], test.name, "test"),
    )


def _balanced_subset(ds: Dataset, per_class: int, rng) -> np.ndarray:
    picks = []
    for cls in range(10):
        pool = np.flatnonzero(ds.labels == cls)
        if len(pool) < per_class:
            raise ValueError(
                f"class {cls} has only {len(pool)} examples, need {per_class}"
            )
        picks.append(rng.choice(pool, size=per_class, replace=False))
    return np.sort(np.concatenate(picks))

def encode_target(label: int, n_y: int, low: float = -1.0) -> np.ndarray:
    """One-hot target on the cosine scale: +1 at the label, `low` elsewhere."""
    if not 0 <= label < n_y:
        raise ValueError(f"label {label} outside [0, {n_y})")
    target = np.full(n_y, low, dtype=np.float64)
    target[label] = 1.0
    return target


def encode_targets(labels: np.ndarray, n_y: int, low: float = -1.0) -> np.ndarray:
    """Vectorized `encode_target` for a whole label array -> (N, n_y)."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_y):
        raise ValueError("labels outside target range")
    targets = np.full((len(labels), n_y), low, dtype=np.float64)
    targets[np.arange(len(labels)), labels] = 1.0
    return targets


# Canonical sources.  SHA-256 digests are of the *decompressed* IDX
# content, so they hold no matter how a mirror compresses the files.
MNIST_FILES = {
    "train-images-idx3-ubyte": "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    "train-labels-idx1-ubyte": "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    "t10k-images-idx3-ubyte": "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    "t10k-labels-idx1-ubyte": "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
}
MNIST_URL = "https://storage.googleapis.com/cvdf-datasets/mnist/"
FMNIST_URL = "https://github.com/zalandoresearch/fashion-mnist/raw/master/data/fashion/"


def standard_paths(data_dir, dataset: str) -> tuple[Path, Path, Path, Path]:
    """(train images, train labels, test images, test labels) under
    data_dir/<dataset>/, preferring .gz when both forms exist."""
    sub = {"mnist": "mnist", "mnist100": "mnist", "fmnist": "fmnist"}[dataset]
    base = Path(data_dir) / sub
    names = (
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    )
    paths = []
    for name in names:
        gz = base / (name + ".gz")
        paths.append(gz if gz.exists() else base / name)
    return tuple(paths)


def load_dataset(data_dir, dataset: str, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Load (train, test) for 'mnist', 'fmnist' or 'mnist100'."""
    tr_i, tr_l, te_i, te_l = standard_paths(data_dir, dataset)
    for p in (tr_i, tr_l, te_i, te_l):
        if not Path(p).exists():
            raise FileNotFoundError(
                f"dataset file {p} not found; fetch it first "
                f"(see oimep.data.download_mnist) or point --data-dir at it"
            )
    base = "fmnist" if dataset == "fmnist" else "mnist"
    train = load_idx(tr_i, tr_l, name=base, split="train")
    test = load_idx(te_i, te_l, name=base, split="test")
    if dataset == "mnist100":
        train, test = make_mnist100(train, test, seed)
        train.name = test.name = "mnist100"
    return train, test


def download_mnist(dest_dir, dataset: str = "mnist") -> None:
    """Fetch the four IDX files into dest_dir/<dataset>/ (gzipped).

    MNIST downloads are verified against pinned SHA-256 digests of the
    decompressed content.  Fashion-MNIST has no pinned digests here;
    its checksums are printed for manual verification.
    """
    base_url = MNIST_URL if dataset == "mnist" else FMNIST_URL
    out = Path(dest_dir) / dataset
    out.mkdir(parents=True, exist_ok=True)
    for name, digest in MNIST_FILES.items():
        target = out / (name + ".gz")
        if not target.exists():
            urllib.request.urlretrieve(base_url + name + ".gz", target)
        actual = hashlib.sha256(gzip.decompress(target.read_bytes())).hexdigest()
        if dataset == "mnist":
            if actual != digest:
                raise IOError(f"{target}: checksum mismatch ({actual})")
        else:
            print(f"{target}: sha256(content) = {actual}")


def default_data_dir() -> str:
    """$OIMEP_DATA_DIR, falling back to ./data."""
    return os.environ.get("OIMEP_DATA_DIR", "data")
