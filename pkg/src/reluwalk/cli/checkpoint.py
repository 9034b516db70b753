"""Binary network checkpoints.

Format (all integers little-endian):
    magic "RPLN1"
    u32 layer count
    per layer:
        u8 kind  (1 = dense, 2 = conv, 3 = residual)
        u32 ndims, then ndims u32 values
            dense:    out, in
            conv:     out_c, in_c, kh, kw, stride, in_h, in_w
            residual: branch length, then the branch layers recursively
        float64 weights, row-major (dense matrix / conv kernel; residual
        blocks carry no weights of their own)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..network import ConvLayer, DenseLayer, LayerGraph, ResidualLayer

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointError",
           "CHECKPOINT_MAGIC"]

CHECKPOINT_MAGIC = b"RPLN1"

_KIND_DENSE, _KIND_CONV, _KIND_RES = 1, 2, 3


class CheckpointError(DataError):
    """Checkpoint file is malformed or cannot be reconstructed."""


def _write_layer(f, layer) -> None:
    if isinstance(layer, ResidualLayer):
        f.write(struct.pack("<B", _KIND_RES))
        f.write(struct.pack("<II", 1, len(layer.branch)))
        for sub in layer.branch:
            _write_layer(f, sub)
    elif isinstance(layer, ConvLayer):
        oc, ic, kh, kw = layer.kernel.shape
        _, h, w = layer.in_shape
        f.write(struct.pack("<B", _KIND_CONV))
        f.write(struct.pack("<I", 7))
        f.write(struct.pack("<7I", oc, ic, kh, kw, layer.stride, h, w))
        f.write(np.ascontiguousarray(layer.kernel, dtype="<f8").tobytes())
    elif isinstance(layer, DenseLayer):
        out, inn = layer.weight.shape
        f.write(struct.pack("<B", _KIND_DENSE))
        f.write(struct.pack("<I", 2))
        f.write(struct.pack("<2I", out, inn))
        f.write(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
    else:  # pragma: no cover
        raise CheckpointError(f"cannot serialize layer type {type(layer).__name__}")


def save_checkpoint(net: LayerGraph, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(net.layers)))
        for layer in net.layers:
            _write_layer(f, layer)


def _read_exact(f, n: int, path, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(f"{path}: truncated while reading {what}")
    return buf


def _read_layer(f, path, allow_residual: bool = True):
    (kind,) = struct.unpack("<B", _read_exact(f, 1, path, "layer kind"))
    (ndims,) = struct.unpack("<I", _read_exact(f, 4, path, "dim count"))
    dims = struct.unpack(f"<{ndims}I", _read_exact(f, 4 * ndims, path, "dims"))
    if kind == _KIND_DENSE:
        if ndims != 2:
            raise CheckpointError(f"{path}: dense layer needs 2 dims, has {ndims}")
        out, inn = dims
        raw = _read_exact(f, out * inn * 8, path, "dense weights")
        return DenseLayer(np.frombuffer(raw, dtype="<f8").reshape(out, inn).copy())
    if kind == _KIND_CONV:
        if ndims != 7:
            raise CheckpointError(f"{path}: conv layer needs 7 dims, has {ndims}")
        oc, ic, kh, kw, stride, h, w = dims
        raw = _read_exact(f, oc * ic * kh * kw * 8, path, "conv kernel")
        kernel = np.frombuffer(raw, dtype="<f8").reshape(oc, ic, kh, kw).copy()
        try:
            return ConvLayer(kernel, int(stride), (int(ic), int(h), int(w)))
        except ValueError as e:
            raise CheckpointError(f"{path}: inconsistent conv header: {e}") from e
    if kind == _KIND_RES:
        if not allow_residual:
            raise CheckpointError(f"{path}: nested residual blocks are not supported")
        if ndims != 1:
            raise CheckpointError(f"{path}: residual layer needs 1 dim, has {ndims}")
        subs = tuple(_read_layer(f, path, allow_residual=False) for _ in range(dims[0]))
        try:
            return ResidualLayer(subs)
        except ValueError as e:
            raise CheckpointError(f"{path}: inconsistent residual block: {e}") from e
    raise CheckpointError(f"{path}: unknown layer kind {kind}")


def load_checkpoint(path) -> LayerGraph:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: file not found")
    with open(path, "rb") as f:
        magic = f.read(5)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r} "
                                  f"(expected {CHECKPOINT_MAGIC!r}; wrong or unsupported format)")
        (n_layers,) = struct.unpack("<I", _read_exact(f, 4, path, "layer count"))
        layers = tuple(_read_layer(f, path) for _ in range(n_layers))
        trailing = f.read(1)
        if trailing:
            raise CheckpointError(f"{path}: trailing bytes after payload")
    try:
        return LayerGraph(layers)
    except ValueError as e:
        raise CheckpointError(f"{path}: layers do not compose: {e}") from e
