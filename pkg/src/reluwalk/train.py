"""Minibatch SGD (optionally with momentum) on cross-entropy-over-softmax,
with reverse-mode gradients through the bias-free ReLU graph.

The ReLU subgradient at exactly zero is taken as 1, matching the >= 0
convention of the activation indicators, so the backward masks are the
same bits a pattern capture would record.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .data import Dataset
from .network import (
    ConvLayer,
    DenseLayer,
    LayerGraph,
    ResidualLayer,
    parameters,
    with_parameters,
)

__all__ = [
    "TrainConfig",
    "TrainLog",
    "TrainingDivergedError",
    "softmax_cross_entropy",
    "softmax_cross_entropy_grad",
    "backward",
    "train",
    "accuracy",
]


class TrainingDivergedError(NumericError):
    """Loss became non-finite; carries the last good weights."""

    def __init__(self, step: int, last_good: LayerGraph):
        super().__init__(f"training diverged at step {step}")
        self.step = step
        self.last_good = last_good


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.0
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    eval_every: int = 0          # 0 disables periodic checkpoints
    log_checkpoints: bool = False  # additionally checkpoint at steps 1,2,4,8,...

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    eval_steps: list[int] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    checkpoints: list[tuple[int, LayerGraph]] = field(default_factory=list)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross entropy of softmax(logits) against integer labels,
    computed with max-subtraction for stability."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError("logits must be an (n, c) matrix")
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError("labels must be one id per row")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=1))
    return float(np.mean(logz - shifted[np.arange(n), labels]))


def softmax_cross_entropy_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of the mean loss w.r.t. the logits: (softmax - onehot)/n."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    p[np.arange(n), labels] -= 1.0
    return p / n


def _im2col(h: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """(n, H2*W2, in_c*k*k) patch matrix for the conv kernel gradient."""
    n = h.shape[0]
    C, H, W = layer.in_shape
    oc, ic, kh, kw = layer.kernel.shape
    H2, W2 = layer.out_shape[1], layer.out_shape[2]
    img = h.reshape(n, C, H, W)
    cols = np.empty((n, H2 * W2, ic * kh * kw))
    s = layer.stride
    for y in range(H2):
        for x in range(W2):
            patch = img[:, :, y * s:y * s + kh, x * s:x * s + kw]
            cols[:, y * W2 + x, :] = patch.reshape(n, -1)
    return cols


def _affine_backward(layer, h_in: np.ndarray, d_out: np.ndarray):
    """Weight gradient and input gradient of one affine layer."""
    if isinstance(layer, ConvLayer):
        n = h_in.shape[0]
        oc = layer.kernel.shape[0]
        H2, W2 = layer.out_shape[1], layer.out_shape[2]
        cols = _im2col(h_in, layer)                       # (n, P, ickk)
        dg = d_out.reshape(n, oc, H2 * W2)                # (n, oc, P)
        dk = np.einsum("nop,npf->of", dg, cols).reshape(layer.kernel.shape)
        dh = d_out @ layer.matrix
        return dk, dh
    dw = d_out.T @ h_in
    dh = d_out @ layer.weight
    return dw, dh


def backward(net: LayerGraph, inputs: np.ndarray, labels: np.ndarray):
    """Loss and exact weight gradients of the mean cross entropy on a batch.

    Returns (loss, grads) where grads mirrors parameters(net): one array
    per layer, a list of arrays for residual blocks.
    """
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != net.input_dim:
        raise ValueError(f"batch dim {X.shape[1]} != network input dim {net.input_dim}")
    labels = np.asarray(labels).ravel()

    # forward, keeping per-layer inputs and masks
    h = X
    saved = []  # per top-level layer: (h_in, kind-specific cache)
    last = len(net.layers) - 1
    for l, ly in enumerate(net.layers):
        if isinstance(ly, ResidualLayer):
            z = h
            sub_saved = []
            u = z
            nb = len(ly.branch)
            for j, sub in enumerate(ly.branch):
                g = u @ sub.matrix.T
                mask = (g >= 0.0) if j < nb - 1 else None
                sub_saved.append((u, mask))
                u = np.where(mask, g, 0.0) if mask is not None else g
            block = z + u
            out_mask = (block >= 0.0) if l < last else None
            saved.append(("res", z, sub_saved, out_mask))
            h = np.where(out_mask, block, 0.0) if out_mask is not None else block
        else:
            g = h @ ly.matrix.T
            mask = (g >= 0.0) if l < last else None
            saved.append(("aff", h, mask))
            h = np.where(mask, g, 0.0) if mask is not None else g
    logits = h
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite activations in forward pass")
    loss = softmax_cross_entropy(logits, labels)

    # reverse sweep
    d = softmax_cross_entropy_grad(logits, labels)
    grads = [None] * len(net.layers)
    for l in range(last, -1, -1):
        ly = net.layers[l]
        rec = saved[l]
        if rec[0] == "aff":
            _, h_in, mask = rec
            if mask is not None:
                d = np.where(mask, d, 0.0)
            grads[l], d = _affine_backward(ly, h_in, d)
        else:
            _, z, sub_saved, out_mask = rec
            if out_mask is not None:
                d = np.where(out_mask, d, 0.0)
            d_branch = d
            sub_grads = [None] * len(ly.branch)
            for j in range(len(ly.branch) - 1, -1, -1):
                h_in, mask = sub_saved[j]
                if mask is not None:
                    d_branch = np.where(mask, d_branch, 0.0)
                sub_grads[j], d_branch = _affine_backward(ly.branch[j], h_in, d_branch)
            grads[l] = sub_grads
            d = d + d_branch  # identity shortcut
    return loss, grads


def accuracy(net: LayerGraph, data: Dataset, batch: int = 4096) -> float:
    """Fraction of samples whose argmax logit matches the label."""
    from .network import forward_many
    hits = 0
    for i in range(0, data.n, batch):
        logits = forward_many(net, data.inputs[i:i + batch])
        hits += int(np.count_nonzero(np.argmax(logits, axis=1) == data.labels[i:i + batch]))
    return hits / data.n


def _checkpoint_steps(cfg: TrainConfig, total_steps: int) -> set[int]:
    steps = set()
    if cfg.eval_every > 0:
        steps.update(range(cfg.eval_every, total_steps + 1, cfg.eval_every))
    if cfg.log_checkpoints:
        s = 1
        while s <= total_steps:
            steps.add(s)
            s *= 2
    steps.add(total_steps)
    return steps


def train(net: LayerGraph, data: Dataset, cfg: TrainConfig) -> tuple[LayerGraph, TrainLog]:
    """Run minibatch SGD; deterministic given cfg.seed (shuffling and
    batching included).  Raises TrainingDivergedError carrying the last
    checkpointed weights if the loss goes non-finite."""
    if data.n < 1:
        raise ValueError("empty dataset")
    if data.inputs.shape[1] != net.input_dim:
        raise ValueError("dataset dim does not match network")
    rng = np.random.default_rng(cfg.seed)
    params = [([q.copy() for q in p] if isinstance(p, list) else p.copy())
              for p in parameters(net)]
    velocity = [([np.zeros_like(q) for q in p] if isinstance(p, list) else np.zeros_like(p))
                for p in params]
    steps_per_epoch = -(-data.n // cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    ckpt_at = _checkpoint_steps(cfg, total)
    log = TrainLog()

    def snapshot() -> LayerGraph:
        return with_parameters(net, params)

    current = snapshot()
    last_good = current
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(data.n)
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            try:
                loss, grads = backward(current, data.inputs[idx], data.labels[idx])
            except NumericError:
                raise TrainingDivergedError(step, last_good) from None
            if not np.isfinite(loss):
                raise TrainingDivergedError(step, last_good)
            step += 1
            for p, v, g in zip(params, velocity, grads):
                if isinstance(p, list):
                    for pi, vi, gi in zip(p, v, g):
                        vi *= cfg.momentum
                        vi += gi
                        pi -= cfg.learning_rate * vi
                else:
                    v *= cfg.momentum
                    v += g
                    p -= cfg.learning_rate * v
            current = snapshot()
            log.steps.append(step)
            log.losses.append(loss)
            if step in ckpt_at:
                last_good = current
                log.checkpoints.append((step, current))
                log.eval_steps.append(step)
                log.train_accuracy.append(accuracy(current, data))
    return current, log
