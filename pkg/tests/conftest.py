import gzip
import os
import shutil
from pathlib import Path

import numpy as np
import pytest

from reluwalk.data import Dataset, load_idx
from reluwalk.network import (
    Arch,
    ConvSpec,
    DenseSpec,
    LayerGraph,
    ResidualSpec,
    he_init,
    mlp_arch,
)

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def tiny_net_zoo(n_dense2: int = 30, n_dense3: int = 6, n_conv: int = 7,
                 n_res: int = 7, seed0: int = 100) -> list[LayerGraph]:
    """Seeded mix of tiny graphs (hidden widths <= 16, input dim <= 4) for
    oracle cross-checks: 2- and 3-layer MLPs, conv stacks, residual blocks."""
    zoo = []
    s = seed0
    for _ in range(n_dense2):
        zoo.append(he_init(mlp_arch(d=4, m=14, L=2, c=3), seed=s))
        s += 1
    for _ in range(n_dense3):
        zoo.append(he_init(mlp_arch(d=3, m=7, L=3, c=2), seed=s))
        s += 1
    # two input channels keep 1x1-conv units generic (a single-channel 1x1
    # conv ties all output channels to one pixel's root; a full 2x2 kernel
    # bottlenecks to 4 units and invites degenerate simultaneous crossings)
    conv_arch = Arch((2, 1, 2), (ConvSpec(4, 1, 1), DenseSpec(6), DenseSpec(3)))
    for _ in range(n_conv):
        zoo.append(he_init(conv_arch, seed=s))
        s += 1
    res_arch = Arch((4,), (DenseSpec(6), ResidualSpec((DenseSpec(5), DenseSpec(6))), DenseSpec(2)))
    for _ in range(n_res):
        zoo.append(he_init(res_arch, seed=s))
        s += 1
    return zoo


def gaussian_pair(dim: int, seed: int):
    rng = np.random.default_rng(seed)
    return rng.normal(size=dim), rng.normal(size=dim)


@pytest.fixture(scope="session")
def digits_dataset() -> Dataset:
    """Real 10-class handwritten digits (8x8, scaled to [0,1]); the offline
    stand-in for image data when MNIST files are not present."""
    from sklearn.datasets import load_digits

    raw = load_digits()
    return Dataset(raw.data / 16.0, raw.target.astype(np.int64), c=10,
                   provenance="sklearn-digits")


def find_mnist(tmp_root: Path) -> dict[str, Path] | None:
    """Locate canonical MNIST IDX files via $RELUWALK_MNIST_DIR or
    ./data/mnist, transparently gunzipping *.gz copies."""
    candidates = []
    if os.environ.get("RELUWALK_MNIST_DIR"):
        candidates.append(Path(os.environ["RELUWALK_MNIST_DIR"]))
    candidates.append(Path("data/mnist"))
    for root in candidates:
        if not root.is_dir():
            continue
        found = {}
        for key, name in MNIST_FILES.items():
            plain = root / name
            gz = root / (name + ".gz")
            if plain.exists():
                found[key] = plain
            elif gz.exists():
                dest = tmp_root / name
                if not dest.exists():
                    with gzip.open(gz, "rb") as src, open(dest, "wb") as out:
                        shutil.copyfileobj(src, out)
                found[key] = dest
        if {"train_images", "train_labels"} <= set(found):
            return found
    return None


@pytest.fixture(scope="session")
def mnist_train(tmp_path_factory) -> Dataset | None:
    files = find_mnist(tmp_path_factory.mktemp("mnist"))
    if files is None:
        return None
    return load_idx(files["train_images"], files["train_labels"])
