"""Dataset ingestion (MNIST-style IDX, CIFAR-10 binary batches), synthetic
Gaussian inputs, seeded pair sampling, and a binary cache format.

All loaders produce float64 inputs scaled to [0, 1] (synthetic data is
left on its natural scale) and integer class labels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "Dataset",
    "PairSample",
    "IdxFormatError",
    "TruncatedFileError",
    "CountMismatchError",
    "load_idx",
    "load_cifar10",
    "synth_gaussian",
    "sample_pairs",
    "save_cache",
    "load_cache",
]


class IdxFormatError(DataError):
    """Magic number or record structure is wrong for the declared format."""


class TruncatedFileError(DataError):
    """File ends before the declared payload."""


class CountMismatchError(DataError):
    """Image and label files disagree about the sample count."""


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray   # (n, d) float64
    labels: np.ndarray   # (n,) int64, < c
    c: int
    provenance: str

    def __post_init__(self):
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise ValueError("inputs must be a nonempty (n, d) matrix")
        if labels.shape != (inputs.shape[0],):
            raise ValueError("labels must align with inputs")
        if not np.all(np.isfinite(inputs)):
            raise ValueError("inputs contain non-finite values")
        if self.c < 1 or labels.min() < 0 or labels.max() >= self.c:
            raise ValueError("labels must lie in [0, c)")
        inputs.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.c,
                       provenance=f"{self.provenance}[subset]")


@dataclass(frozen=True)
class PairSample:
    i: int
    j: int
    x_i: np.ndarray
    x_j: np.ndarray

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("pair indices must differ")
        if np.array_equal(self.x_i, self.x_j):
            raise ValueError("pair vectors must differ")


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_exact(f, nbytes: int, path, what: str) -> bytes:
    buf = f.read(nbytes)
    if len(buf) != nbytes:
        raise TruncatedFileError(f"{path}: truncated while reading {what} "
                                 f"(wanted {nbytes} bytes, got {len(buf)})")
    return buf


def load_idx(images_file, labels_file) -> Dataset:
    """Load an IDX image/label file pair (big-endian, magic-checked);
    pixels scaled to [0, 1] and flattened to rows*cols features."""
    images_file, labels_file = Path(images_file), Path(labels_file)
    for p in (images_file, labels_file):
        if not p.exists():
            raise DataError(f"{p}: file not found")

    with open(images_file, "rb") as f:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, images_file, "header"))
        if magic != IDX_IMAGES_MAGIC:
            raise IdxFormatError(f"{images_file}: bad images magic {magic:#010x} "
                                 f"(expected {IDX_IMAGES_MAGIC:#010x})")
        raw = _read_exact(f, n * rows * cols, images_file, "pixel payload")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols)

    with open(labels_file, "rb") as f:
        magic, n_labels = struct.unpack(">II", _read_exact(f, 8, labels_file, "header"))
        if magic != IDX_LABELS_MAGIC:
            raise IdxFormatError(f"{labels_file}: bad labels magic {magic:#010x} "
                                 f"(expected {IDX_LABELS_MAGIC:#010x})")
        raw = _read_exact(f, n_labels, labels_file, "label payload")
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if n != n_labels:
        raise CountMismatchError(f"{images_file} has {n} images but "
                                 f"{labels_file} has {n_labels} labels")
    return Dataset(pixels.astype(np.float64) / 255.0, labels,
                   c=int(labels.max()) + 1 if n else 0,
                   provenance=f"idx:{images_file.name}")


CIFAR_RECORD = 3073  # 1 label byte + 3*32*32 pixel bytes


def load_cifar10(path) -> Dataset:
    """Load CIFAR-10 binary batches: every record is one label byte followed
    by 3072 pixel bytes.  `path` may be a single batch file or a directory
    of *.bin batches (read in sorted name order)."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.bin"))
        if not files:
            raise DataError(f"{path}: no CIFAR-10 .bin batch files found")
    elif path.exists():
        files = [path]
    else:
        raise DataError(f"{path}: file not found")
    all_px, all_lb = [], []
    for f in files:
        raw = f.read_bytes()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD != 0:
            raise IdxFormatError(f"{f}: size {len(raw)} is not a multiple of the "
                                 f"{CIFAR_RECORD}-byte record")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        all_lb.append(rec[:, 0].astype(np.int64))
        all_px.append(rec[:, 1:].astype(np.float64) / 255.0)
    labels = np.concatenate(all_lb)
    if labels.max() > 9:
        raise IdxFormatError(f"{path}: label byte exceeds 9; not a CIFAR-10 batch")
    return Dataset(np.concatenate(all_px), labels, c=10, provenance=f"cifar10:{path.name}")


def synth_gaussian(n: int, d: int, seed: int) -> Dataset:
    """n rows of i.i.d. standard normal entries; labels all zero (unused)."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(n, d)), np.zeros(n, dtype=np.int64), c=1,
                   provenance=f"synth-gaussian(n={n},d={d},seed={seed})")


def sample_pairs(data: Dataset, count: int, seed: int, mode: str = "any") -> list[PairSample]:
    """Uniform index pairs (i, j), i != j, re-drawn when the two vectors are
    exactly equal; deterministic given the seed.  mode="within-class"
    restricts both indices to a common label."""
    if data.n < 2:
        raise ValueError("need at least 2 samples to draw pairs")
    if mode not in ("any", "within-class"):
        raise ValueError("mode must be 'any' or 'within-class'")
    rng = np.random.default_rng(seed)
    out: list[PairSample] = []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > 1000 * max(count, 1):
            raise ValueError("could not find distinct-vector pairs (degenerate dataset)")
        if mode == "within-class":
            cls = int(rng.integers(data.c))
            members = np.flatnonzero(data.labels == cls)
            if len(members) < 2:
                continue
            i, j = (int(v) for v in rng.choice(members, size=2, replace=False))
        else:
            i, j = (int(v) for v in rng.choice(data.n, size=2, replace=False))
        if np.array_equal(data.inputs[i], data.inputs[j]):
            continue
        out.append(PairSample(i, j, data.inputs[i], data.inputs[j]))
    return out


CACHE_MAGIC = b"RPDS1"


def save_cache(data: Dataset, path) -> None:
    """Write the internal cache format: magic "RPDS1", little-endian u64 n,
    u64 d, u32 c, then n*d float64 row-major, then n u32 labels."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<QQI", data.n, data.d, data.c))
        f.write(np.ascontiguousarray(data.inputs, dtype="<f8").tobytes())
        f.write(data.labels.astype("<u4").tobytes())


def load_cache(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, "rb") as f:
        magic = _read_exact(f, 5, path, "magic")
        if magic != CACHE_MAGIC:
            raise IdxFormatError(f"{path}: bad cache magic {magic!r}")
        n, d, c = struct.unpack("<QQI", _read_exact(f, 20, path, "header"))
        inputs = np.frombuffer(_read_exact(f, n * d * 8, path, "inputs"), dtype="<f8")
        labels = np.frombuffer(_read_exact(f, n * 4, path, "labels"), dtype="<u4")
    return Dataset(inputs.reshape(n, d).astype(np.float64), labels.astype(np.int64),
                   c=c, provenance=f"cache:{path.name}")
