"""Bias-free ReLU layer graphs: construction, forward evaluation, and
activation-pattern machinery.

A graph is an ordered sequence of affine layers (dense, conv2d, or
residual-add blocks) with ReLU applied between consecutive layers but not
after the last one.  There are no bias terms anywhere, so every
pattern-fixed evaluation is linear (not merely affine) in the input; the
path walker in :mod:`reluwalk.pathwalk` relies on this.

Every ReLU application site is a "slot".  A slot holds one 0/1 indicator
bit per unit (conv units are (channel, position) pairs).  Residual blocks
contribute internal slots for the ReLUs inside their branch and, unless
the block is the last layer, one slot for the ReLU applied to the block
output after the identity shortcut is added.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

__all__ = [
    "DenseSpec",
    "ConvSpec",
    "ResidualSpec",
    "Arch",
    "mlp_arch",
    "DenseLayer",
    "ConvLayer",
    "ResidualLayer",
    "LayerGraph",
    "ActivationPattern",
    "OutputVector",
    "he_init",
    "forward",
    "forward_many",
    "forward_fixed",
    "capture_pattern",
    "normalize_output",
    "propagate_delta",
    "parameters",
    "with_parameters",
]


# ---------------------------------------------------------------------------
# Architecture descriptors


@dataclass(frozen=True)
class DenseSpec:
    out_dim: int

    def __post_init__(self):
        if self.out_dim < 1:
            raise ValueError(f"dense width must be >= 1, got {self.out_dim}")


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int
    stride: int = 1

    def __post_init__(self):
        if self.out_channels < 1 or self.kernel < 1 or self.stride < 1:
            raise ValueError("conv channels, kernel, and stride must all be >= 1")


@dataclass(frozen=True)
class ResidualSpec:
    branch: tuple[Union[DenseSpec, ConvSpec], ...]

    def __post_init__(self):
        if not self.branch:
            raise ValueError("residual branch must have at least one sublayer")


LayerSpec = Union[DenseSpec, ConvSpec, ResidualSpec]


@dataclass(frozen=True)
class Arch:
    """Shape-level description of a layer graph.

    input_shape is ``(d,)`` for vector inputs or ``(channels, h, w)`` for
    image inputs that feed convolutions.
    """

    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if len(self.input_shape) not in (1, 3):
            raise ValueError(f"input_shape must be (d,) or (c,h,w), got {self.input_shape}")
        if any(s < 1 for s in self.input_shape):
            raise ValueError(f"degenerate input shape {self.input_shape}")
        if not self.layers:
            raise ValueError("architecture needs at least one layer")


def mlp_arch(d: int, m: int, L: int, c: int) -> Arch:
    """Fully-connected architecture: L affine layers, L-1 hidden layers of
    width m, input dim d, output dim c."""
    if L < 1:
        raise ValueError(f"depth must be >= 1, got {L}")
    hidden = tuple(DenseSpec(m) for _ in range(L - 1))
    return Arch(input_shape=(d,), layers=hidden + (DenseSpec(c),))


# ---------------------------------------------------------------------------
# Concrete layers


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class DenseLayer:
    weight: np.ndarray  # (out, in)

    def __post_init__(self):
        object.__setattr__(self, "weight", _freeze(self.weight))
        if self.weight.ndim != 2 or min(self.weight.shape) < 1:
            raise ValueError(f"dense weight must be a nonempty 2-d matrix, got {self.weight.shape}")
        if not np.all(np.isfinite(self.weight)):
            raise ValueError("dense weight contains non-finite entries")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return self.weight


def _conv_out_hw(h: int, w: int, k: int, stride: int) -> tuple[int, int]:
    if h < k or w < k:
        raise ValueError(f"kernel {k} does not fit {h}x{w} input (no padding)")
    return (h - k) // stride + 1, (w - k) // stride + 1


def _conv_matrix(kernel: np.ndarray, stride: int, in_shape: tuple[int, int, int]) -> np.ndarray:
    """Materialize the affine map induced by a valid (unpadded) convolution
    on flattened inputs."""
    oc, ic, kh, kw = kernel.shape
    C, H, W = in_shape
    H2, W2 = _conv_out_hw(H, W, kh, stride)
    M = np.zeros((oc * H2 * W2, C * H * W))
    for o in range(oc):
        for y in range(H2):
            for x in range(W2):
                row = (o * H2 + y) * W2 + x
                for i in range(ic):
                    iy = y * stride
                    ix = x * stride
                    for ky in range(kh):
                        base = (i * H + iy + ky) * W + ix
                        M[row, base:base + kw] = kernel[o, i, ky]
    return M


@dataclass(frozen=True)
class ConvLayer:
    kernel: np.ndarray  # (out_c, in_c, k, k)
    stride: int
    in_shape: tuple[int, int, int]  # (channels, h, w)
    matrix: np.ndarray = field(default=None, repr=False)  # set in __post_init__

    def __post_init__(self):
        object.__setattr__(self, "kernel", _freeze(self.kernel))
        if self.kernel.ndim != 4:
            raise ValueError(f"conv kernel must be 4-d (out_c,in_c,k,k), got {self.kernel.shape}")
        if self.kernel.shape[1] != self.in_shape[0]:
            raise ValueError(
                f"kernel expects {self.kernel.shape[1]} input channels, layer input has {self.in_shape[0]}")
        if min(self.kernel.shape) < 1 or self.stride < 1:
            raise ValueError("degenerate conv geometry")
        if not np.all(np.isfinite(self.kernel)):
            raise ValueError("conv kernel contains non-finite entries")
        object.__setattr__(self, "matrix", _freeze(_conv_matrix(self.kernel, self.stride, self.in_shape)))

    @property
    def out_shape(self) -> tuple[int, int, int]:
        oc, _, kh, _ = self.kernel.shape
        h2, w2 = _conv_out_hw(self.in_shape[1], self.in_shape[2], kh, self.stride)
        return (oc, h2, w2)

    @property
    def in_dim(self) -> int:
        return int(np.prod(self.in_shape))

    @property
    def out_dim(self) -> int:
        return int(np.prod(self.out_shape))


@dataclass(frozen=True)
class ResidualLayer:
    """Identity-shortcut block: out = z + branch(z), ReLUs between branch
    sublayers (not after the last one; the outer graph position supplies
    the block-output ReLU)."""

    branch: tuple[Union[DenseLayer, ConvLayer], ...]

    def __post_init__(self):
        if not self.branch:
            raise ValueError("residual branch is empty")
        if any(isinstance(s, ResidualLayer) for s in self.branch):
            raise ValueError("nested residual blocks are not supported")
        if self.branch[-1].out_dim != self.branch[0].in_dim:
            raise ValueError(
                f"identity shortcut needs branch out dim {self.branch[-1].out_dim} "
                f"== in dim {self.branch[0].in_dim}")
        for a, b in zip(self.branch, self.branch[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError("branch sublayer dimensions do not compose")

    @property
    def in_dim(self) -> int:
        return self.branch[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.in_dim


Layer = Union[DenseLayer, ConvLayer, ResidualLayer]


# ---------------------------------------------------------------------------
# Layer graph


@dataclass(frozen=True)
class LayerGraph:
    """Immutable sequence of affine layers with implicit interleaved ReLUs.

    slot_sizes / slot_owner / slot_labels describe the ReLU sites in
    evaluation order; slot_owner[i] is the index of the top-level layer
    that computes slot i's preactivation.
    """

    layers: tuple[Layer, ...]
    input_dim: int = field(init=False)
    output_dim: int = field(init=False)
    depth: int = field(init=False)
    slot_sizes: tuple[int, ...] = field(init=False)
    slot_owner: tuple[int, ...] = field(init=False)
    slot_labels: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("empty layer graph")
        dims = [ly.in_dim for ly in self.layers] + [self.layers[-1].out_dim]
        for i, (a, b) in enumerate(zip(self.layers[:-1], self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ValueError(
                    f"layer {i} out dim {a.out_dim} != layer {i + 1} in dim {b.in_dim}")
        sizes, owner, labels = [], [], []
        last = len(self.layers) - 1
        for l, ly in enumerate(self.layers):
            if isinstance(ly, ResidualLayer):
                for j, sub in enumerate(ly.branch[:-1]):
                    sizes.append(sub.out_dim)
                    owner.append(l)
                    labels.append(f"layer{l + 1}.branch{j + 1}")
                if l < last:
                    sizes.append(ly.out_dim)
                    owner.append(l)
                    labels.append(f"layer{l + 1}")
            elif l < last:
                sizes.append(ly.out_dim)
                owner.append(l)
                labels.append(f"layer{l + 1}")
        object.__setattr__(self, "input_dim", dims[0])
        object.__setattr__(self, "output_dim", dims[-1])
        object.__setattr__(self, "depth", len(self.layers))
        object.__setattr__(self, "slot_sizes", tuple(sizes))
        object.__setattr__(self, "slot_owner", tuple(owner))
        object.__setattr__(self, "slot_labels", tuple(labels))

    @property
    def total_hidden_units(self) -> int:
        return sum(self.slot_sizes)

    def slot_offsets(self) -> np.ndarray:
        """Start index of each slot in the flattened unit ordering."""
        return np.concatenate([[0], np.cumsum(self.slot_sizes)])


# ---------------------------------------------------------------------------
# He initialization


def _he_dense(rng: np.random.Generator, out_dim: int, in_dim: int) -> DenseLayer:
    if out_dim < 1 or in_dim < 1:
        raise ValueError(f"zero width in dense layer ({out_dim}x{in_dim})")
    return DenseLayer(rng.normal(0.0, math.sqrt(2.0 / in_dim), (out_dim, in_dim)))


def _he_conv(rng: np.random.Generator, spec: ConvSpec, in_shape: tuple[int, int, int]) -> ConvLayer:
    ic = in_shape[0]
    fan_in = ic * spec.kernel * spec.kernel
    if spec.out_channels < 1 or fan_in < 1:
        raise ValueError("zero fan-in or zero channels in conv layer")
    kernel = rng.normal(0.0, math.sqrt(2.0 / fan_in),
                        (spec.out_channels, ic, spec.kernel, spec.kernel))
    return ConvLayer(kernel, spec.stride, in_shape)


def he_init(arch: Arch, seed: int) -> LayerGraph:
    """Draw all weights i.i.d. N(0, 2/fan_in) from a generator seeded with
    `seed`.  The draw order is fixed (layers in graph order, branch
    sublayers in branch order), so identical seeds give bit-identical
    graphs."""
    rng = np.random.default_rng(seed)
    shape = arch.input_shape  # current activation shape, (d,) or (c,h,w)
    layers: list[Layer] = []
    for spec in arch.layers:
        if isinstance(spec, DenseSpec):
            layers.append(_he_dense(rng, spec.out_dim, int(np.prod(shape))))
            shape = (spec.out_dim,)
        elif isinstance(spec, ConvSpec):
            if len(shape) != 3:
                raise ValueError("conv layer needs a (c,h,w) input; declare it before any dense layer")
            conv = _he_conv(rng, spec, shape)
            layers.append(conv)
            shape = conv.out_shape
        elif isinstance(spec, ResidualSpec):
            sub_shape = shape
            subs: list[Union[DenseLayer, ConvLayer]] = []
            for s in spec.branch:
                if isinstance(s, DenseSpec):
                    subs.append(_he_dense(rng, s.out_dim, int(np.prod(sub_shape))))
                    sub_shape = (s.out_dim,)
                elif isinstance(s, ConvSpec):
                    if len(sub_shape) != 3:
                        raise ValueError("conv sublayer needs a (c,h,w) input")
                    conv = _he_conv(rng, s, sub_shape)
                    subs.append(conv)
                    sub_shape = conv.out_shape
                else:
                    raise ValueError(f"unsupported branch spec {s!r}")
            layers.append(ResidualLayer(tuple(subs)))
            # identity shortcut keeps the shape
        else:
            raise ValueError(f"unsupported layer spec {spec!r}")
    return LayerGraph(tuple(layers))


# ---------------------------------------------------------------------------
# Evaluation

def _apply_affine(layer: Union[DenseLayer, ConvLayer], h: np.ndarray) -> np.ndarray:
    return h @ layer.matrix.T


def _relu(g: np.ndarray) -> np.ndarray:
    return np.maximum(g, 0.0)


def _masked(g: np.ndarray, bits: np.ndarray) -> np.ndarray:
    # np.where(bits, g, 0) reproduces max(g, 0) bit-for-bit when bits were
    # captured at g itself; for foreign patterns it is the indicator product.
    return np.where(bits != 0, g, 0.0)


def _trace(net: LayerGraph, x: np.ndarray, pattern: "ActivationPattern | None" = None):
    """Evaluate the graph on `x` (vector or matrix of row vectors).

    With pattern=None this is the true forward pass (ReLU); otherwise every
    ReLU is replaced by the fixed 0/1 indicator from `pattern`.  Returns
    (per-slot preactivations, output).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.input_dim:
        raise ValueError(f"input dim {x.shape[-1]} != network input dim {net.input_dim}")
    pres: list[np.ndarray] = []
    cursor = 0

    def act(g):
        nonlocal cursor
        pres.append(g)
        out = _relu(g) if pattern is None else _masked(g, pattern.slots[cursor])
        cursor += 1
        return out

    h = x
    last = len(net.layers) - 1
    for l, ly in enumerate(net.layers):
        if isinstance(ly, ResidualLayer):
            u = h
            for j, sub in enumerate(ly.branch):
                g = _apply_affine(sub, u)
                u = act(g) if j < len(ly.branch) - 1 else g
            block = h + u
            h = act(block) if l < last else block
        else:
            g = _apply_affine(ly, h)
            h = act(g) if l < last else g
    return pres, h


# ---------------------------------------------------------------------------
# Activation patterns


@dataclass(frozen=True, eq=False)
class ActivationPattern:
    """One 0/1 vector per ReLU slot; bit i is 1 iff the preactivation was
    >= 0 at the capture point (ties count as active)."""

    slots: tuple[np.ndarray, ...]

    def __post_init__(self):
        frozen = []
        for s in self.slots:
            a = np.ascontiguousarray(s, dtype=np.uint8)
            a.flags.writeable = False
            frozen.append(a)
        object.__setattr__(self, "slots", tuple(frozen))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ActivationPattern):
            return NotImplemented
        return len(self.slots) == len(other.slots) and all(
            np.array_equal(a, b) for a, b in zip(self.slots, other.slots))

    def __hash__(self):
        return hash(tuple(s.tobytes() for s in self.slots))

    def matches(self, net: LayerGraph) -> bool:
        return tuple(len(s) for s in self.slots) == net.slot_sizes

    def flipped(self, slot: int, unit: int) -> "ActivationPattern":
        new = [s.copy() for s in self.slots]
        new[slot][unit] ^= 1
        return ActivationPattern(tuple(new))

    def flat(self) -> np.ndarray:
        if not self.slots:
            return np.zeros(0, dtype=np.uint8)
        return np.concatenate(self.slots)

    @classmethod
    def all_ones(cls, net: LayerGraph) -> "ActivationPattern":
        return cls(tuple(np.ones(s, dtype=np.uint8) for s in net.slot_sizes))


def capture_pattern(net: LayerGraph, x: np.ndarray) -> ActivationPattern:
    """Record the activation indicators produced by a forward pass at x."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("capture_pattern takes a single input vector")
    pres, _ = _trace(net, x)
    return ActivationPattern(tuple((g >= 0.0).astype(np.uint8) for g in pres))


# ---------------------------------------------------------------------------
# Outputs


@dataclass(frozen=True)
class OutputVector:
    values: np.ndarray
    norm: float

    def __post_init__(self):
        object.__setattr__(self, "values", _freeze(self.values))

    @classmethod
    def of(cls, values: np.ndarray) -> "OutputVector":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, float(np.linalg.norm(values)))

    def __len__(self) -> int:
        return len(self.values)


def forward(net: LayerGraph, x: np.ndarray) -> OutputVector:
    """True forward pass on a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward takes a single input vector; see forward_many")
    _, out = _trace(net, x)
    return OutputVector.of(out)


def forward_many(net: LayerGraph, X: np.ndarray) -> np.ndarray:
    """Forward pass on a batch of row vectors; returns an (n, c) array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("forward_many takes an (n, d) matrix")
    _, out = _trace(net, X)
    return out


def forward_fixed(net: LayerGraph, z: np.ndarray, pattern: ActivationPattern) -> OutputVector:
    """Evaluate with every ReLU replaced by the fixed indicator bits of
    `pattern`; the result is linear in z."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("forward_fixed takes a single input vector")
    if not pattern.matches(net):
        raise ValueError("pattern slot sizes do not match network")
    _, out = _trace(net, z, pattern)
    return OutputVector.of(out)


def normalize_output(f: "OutputVector | np.ndarray") -> OutputVector:
    """Scale an output vector to unit Euclidean norm."""
    if isinstance(f, OutputVector):
        values, norm = f.values, f.norm
    else:
        values = np.asarray(f, dtype=np.float64)
        norm = float(np.linalg.norm(values))
    if norm <= 0.0:
        raise ValueError("cannot normalize a zero output vector")
    return OutputVector.of(values / norm)


# ---------------------------------------------------------------------------
# Structural delta propagation (the indicator-product gap form)


def propagate_delta(net: LayerGraph, pattern: ActivationPattern, slot: int,
                    delta: np.ndarray) -> np.ndarray:
    """Push a post-mask delta injected at `slot` linearly to the output.

    The delta replaces the masked value at the slot (the mask at the slot
    itself is NOT applied); downstream masks come from `pattern`.  Used to
    evaluate a one-bit pattern-flip gap as a single matrix product instead
    of a difference of two full evaluations.
    """
    if not pattern.matches(net):
        raise ValueError("pattern slot sizes do not match network")
    if not 0 <= slot < len(net.slot_sizes):
        raise ValueError(f"slot {slot} out of range")
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (net.slot_sizes[slot],):
        raise ValueError("delta shape does not match slot size")

    cursor = 0
    active: np.ndarray | None = None
    last = len(net.layers) - 1
    for l, ly in enumerate(net.layers):
        if isinstance(ly, ResidualLayer):
            nb = len(ly.branch)
            internal = range(cursor, cursor + nb - 1)
            block_slot = cursor + nb - 1 if l < last else None
            if active is not None:
                # delta enters the block input: flows through shortcut + branch
                u = active
                for j, sub in enumerate(ly.branch):
                    g = _apply_affine(sub, u)
                    u = _masked(g, pattern.slots[internal[0] + j]) if j < nb - 1 else g
                block = active + u
            elif slot in internal or slot == block_slot:
                if slot == block_slot:
                    block = None  # injected at the block-output slot below
                else:
                    j0 = slot - cursor
                    u = delta
                    for j in range(j0 + 1, nb):
                        g = _apply_affine(ly.branch[j], u)
                        u = _masked(g, pattern.slots[cursor + j]) if j < nb - 1 else g
                    block = u  # shortcut carries no delta
            else:
                cursor += nb - 1 + (1 if block_slot is not None else 0)
                continue
            if block_slot is not None:
                if block is None:
                    active = delta
                else:
                    active = _masked(block, pattern.slots[block_slot])
                cursor = block_slot + 1
            else:
                return block
        else:
            own_slot = cursor if l < last else None
            if active is not None:
                g = _apply_affine(ly, active)
                if own_slot is None:
                    return g
                active = _masked(g, pattern.slots[own_slot])
                cursor += 1
            elif own_slot is not None and slot == own_slot:
                active = delta
                cursor += 1
            elif own_slot is not None:
                cursor += 1
    raise AssertionError("delta never reached the output")  # pragma: no cover


# ---------------------------------------------------------------------------
# Parameter access (used by the trainer and checkpointing)


def parameters(net: LayerGraph) -> list:
    """Weight arrays in graph order; residual blocks contribute a sublist."""
    out = []
    for ly in net.layers:
        if isinstance(ly, ResidualLayer):
            out.append([sub.kernel if isinstance(sub, ConvLayer) else sub.weight
                        for sub in ly.branch])
        elif isinstance(ly, ConvLayer):
            out.append(ly.kernel)
        else:
            out.append(ly.weight)
    return out


def _rebuild_layer(ly: Layer, p) -> Layer:
    if isinstance(ly, ResidualLayer):
        return ResidualLayer(tuple(_rebuild_layer(sub, q) for sub, q in zip(ly.branch, p)))
    if isinstance(ly, ConvLayer):
        return ConvLayer(np.array(p, dtype=np.float64), ly.stride, ly.in_shape)
    return DenseLayer(np.array(p, dtype=np.float64))


def with_parameters(net: LayerGraph, params: list) -> LayerGraph:
    """Trainer-issued replacement: a new graph with the given weights."""
    if len(params) != len(net.layers):
        raise ValueError("parameter structure does not match graph")
    return LayerGraph(tuple(_rebuild_layer(ly, p) for ly, p in zip(net.layers, params)))
