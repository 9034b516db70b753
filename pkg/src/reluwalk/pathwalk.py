"""Exact enumeration of activation-region break points along a linear input
path, per-segment directional gradients via the indicator-product method,
and the gradient-gap sequence.

On a segment where the activation pattern is fixed, every preactivation of
the bias-free graph is linear in the input, hence affine in the path
parameter t:  g_i(t) = (1-t) g_i(x0) + t g_i(x1).  The walker advances
from t=0, repeatedly finding the smallest preactivation root ahead of the
current position, flipping that unit's indicator bit, and recomputing the
coefficients of the layers downstream of the flip.  Each finished segment
is re-verified with a fresh pattern capture at its midpoint.

Brute-force oracles (central finite differences for segment gradients and
a dense sign-scan grid for node counts) live here as well so the exact
walker is always checkable against methods that share none of its code
path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .network import (
    ActivationPattern,
    LayerGraph,
    capture_pattern,
    forward,
    forward_fixed,
    propagate_delta,
    _apply_affine,
    _masked,
    _trace,
)

__all__ = [
    "LinearPath",
    "PathProfile",
    "make_path",
    "walk_path",
    "segment_gradient",
    "gradient_gaps",
    "node_gap_product",
    "continuity_residuals",
    "fd_gradient_oracle",
    "dense_node_oracle",
]

# A unit only counts as crossing when its slope clears this fraction of the
# largest slope; roots of numerically-flat preactivations are rounding noise.
SLOPE_TOL = 1e-14
# Relative advance past a committed node before searching for the next one.
ADVANCE_TOL = 1e-12


@dataclass(frozen=True)
class LinearPath:
    """X(t) = (1-t) x0 + t x1 for t in [0, 1], with x0 != x1."""

    x0: np.ndarray
    x1: np.ndarray
    v: np.ndarray = field(init=False)
    v_norm: float = field(init=False)
    unit_dir: np.ndarray = field(init=False)

    def __post_init__(self):
        x0 = np.ascontiguousarray(self.x0, dtype=np.float64)
        x1 = np.ascontiguousarray(self.x1, dtype=np.float64)
        if x0.ndim != 1 or x0.shape != x1.shape:
            raise ValueError("path endpoints must be equal-length vectors")
        v = x1 - x0
        v_norm = float(np.linalg.norm(v))
        if v_norm == 0.0:
            raise ValueError("path endpoints are identical (x0 != x1 required)")
        with np.errstate(invalid="ignore"):  # inf endpoints surface later as NumericError
            unit_dir = v / v_norm
        for name, val in (("x0", x0), ("x1", x1), ("v", v), ("unit_dir", unit_dir)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)
        object.__setattr__(self, "v_norm", v_norm)

    @property
    def dim(self) -> int:
        return len(self.x0)

    def point(self, t) -> np.ndarray:
        """Interpolant; exact at the endpoints."""
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 0:
            return (1.0 - t) * self.x0 + t * self.x1
        return np.outer(1.0 - t, self.x0) + np.outer(t, self.x1)


def make_path(x0, x1) -> LinearPath:
    return LinearPath(np.asarray(x0, dtype=np.float64), np.asarray(x1, dtype=np.float64))


@dataclass(frozen=True)
class PathProfile:
    """Everything the walk learned about one (x0, x1) pair.

    nodes        strictly increasing break points in (0, 1), length K
    crossings    (slot, unit) id of the bit that flips at each node
    patterns     K+1 activation patterns, one per segment
    gradients    (K+1, c) array: normalized segment gradient per component
    norm_scale   scalar dividing all outputs for this pair (1.0 = raw)
    """

    path: LinearPath
    nodes: np.ndarray
    crossings: tuple[tuple[int, int], ...]
    patterns: tuple[ActivationPattern, ...]
    gradients: np.ndarray
    norm_scale: float

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        grads = np.ascontiguousarray(self.gradients, dtype=np.float64)
        nodes.flags.writeable = False
        grads.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "gradients", grads)
        if len(self.patterns) != len(nodes) + 1:
            raise ValueError("need exactly K+1 segment patterns")
        if grads.ndim != 2 or grads.shape[0] != len(nodes) + 1:
            raise ValueError("need a (K+1, c) gradient array")
        if len(self.crossings) != len(nodes):
            raise ValueError("need one crossing id per node")

    @property
    def K(self) -> int:
        return len(self.nodes)

    @property
    def num_components(self) -> int:
        return self.gradients.shape[1]

    @property
    def gaps(self) -> np.ndarray:
        """(K, c) array of gradient gaps Y_k = R_k - R_{k-1}."""
        return np.diff(self.gradients, axis=0)

    def segment_midpoints(self) -> np.ndarray:
        edges = np.concatenate([[0.0], self.nodes, [1.0]])
        return 0.5 * (edges[:-1] + edges[1:])


def gradient_gaps(profile: PathProfile, component: int) -> np.ndarray:
    """Gap sequence Y_k for one output component (empty when K = 0)."""
    c = profile.num_components
    if not 0 <= component < c:
        raise ValueError(f"component {component} out of range [0, {c})")
    return profile.gaps[:, component]


def segment_gradient(net: LayerGraph, path: LinearPath, pattern: ActivationPattern,
                     component: int | None = None, norm_scale: float = 1.0):
    """Directional gradient of the (scaled) output on a segment with the
    given activation pattern: forward_fixed at the unit direction, divided
    by norm_scale.  Constant across the segment by piecewise linearity."""
    out = forward_fixed(net, path.unit_dir, pattern).values / norm_scale
    if component is None:
        return out
    if not 0 <= component < len(out):
        raise ValueError(f"component {component} out of range [0, {len(out)})")
    return float(out[component])


class _FixedEval:
    """Per-layer cache of a fixed-pattern evaluation of one input, supporting
    recomputation from the layer owning a flipped slot downward."""

    def __init__(self, net: LayerGraph, x: np.ndarray, pattern: ActivationPattern):
        self.net = net
        self.x = x
        self.pattern = pattern
        self.layer_inputs: list[np.ndarray] = []
        self.slot_pre: list[np.ndarray] = []
        self._recompute(0)

    def _recompute(self, from_layer: int) -> None:
        net, pattern = self.net, self.pattern
        if from_layer == 0:
            h = self.x
            self.layer_inputs = []
            self.slot_pre = []
            start = 0
        else:
            h = self.layer_inputs[from_layer]
            first_slot = next(i for i, o in enumerate(net.slot_owner) if o >= from_layer)
            del self.layer_inputs[from_layer:]
            del self.slot_pre[first_slot:]
            start = from_layer
        cursor = len(self.slot_pre)
        last = len(net.layers) - 1
        for l in range(start, len(net.layers)):
            ly = net.layers[l]
            self.layer_inputs.append(h)
            if hasattr(ly, "branch"):
                u = h
                nb = len(ly.branch)
                for j, sub in enumerate(ly.branch):
                    g = _apply_affine(sub, u)
                    if j < nb - 1:
                        self.slot_pre.append(g)
                        u = _masked(g, pattern.slots[cursor])
                        cursor += 1
                block = h + g
                if l < last:
                    self.slot_pre.append(block)
                    h = _masked(block, pattern.slots[cursor])
                    cursor += 1
                else:
                    self.output = block
            else:
                g = _apply_affine(ly, h)
                if l < last:
                    self.slot_pre.append(g)
                    h = _masked(g, pattern.slots[cursor])
                    cursor += 1
                else:
                    self.output = g

    def flat_pre(self) -> np.ndarray:
        if not self.slot_pre:
            return np.zeros(0)
        return np.concatenate(self.slot_pre)

    def set_pattern(self, pattern: ActivationPattern, from_layer: int = 0) -> None:
        self.pattern = pattern
        self._recompute(from_layer)


def walk_path(net: LayerGraph, path: LinearPath, *, normalize: bool = True,
              node_cap: int = 1_000_000, full_recompute: bool = False,
              rollback_limit: int = 1000) -> PathProfile:
    """Enumerate all nodes of the network output along the path and the
    per-segment gradients between them.

    With normalize=True, gradients are divided by the pair scale
    (||f(x0)|| + ||f(x1)||) / 2, a single scalar per pair so piecewise
    linearity is preserved.  Raises NumericError on non-finite
    preactivations or when the node count exceeds node_cap.
    """
    if path.dim != net.input_dim:
        raise ValueError(f"path dim {path.dim} != network input dim {net.input_dim}")
    if normalize:
        norm_scale = 0.5 * (forward(net, path.x0).norm + forward(net, path.x1).norm)
        if norm_scale <= 0.0:
            raise NumericError("zero output at both endpoints; cannot normalize the pair")
    else:
        norm_scale = 1.0

    offsets = net.slot_offsets()

    def slot_unit(flat: int) -> tuple[int, int]:
        s = int(np.searchsorted(offsets, flat, side="right") - 1)
        return s, int(flat - offsets[s])

    pattern = capture_pattern(net, path.x0)
    ev0 = _FixedEval(net, path.x0, pattern)
    ev1 = _FixedEval(net, path.x1, pattern)

    nodes: list[float] = []
    crossings: list[tuple[int, int]] = []
    patterns: list[ActivationPattern] = []
    t_cur = 0.0
    last_flip = -1
    reconciles = 0
    n_units = net.total_hidden_units
    flat_ids = np.arange(n_units)

    def reconcile(captured: ActivationPattern) -> None:
        """The verified segment disagrees with the walking pattern: the root
        finder missed flips (this happens when a crossing lands exactly on a
        region where downstream preactivations are identically zero, so the
        missed unit has no root under either adjacent pattern).  Record one
        node per differing bit at the current position, ascending unit id,
        keeping the one-bit-per-node chain intact.  At t=0 the boundary
        pattern is corrected without recording nodes (nodes live in (0,1))."""
        nonlocal pattern, last_flip
        diff = np.flatnonzero(captured.flat() != pattern.flat())
        for fu in diff:
            s, un = slot_unit(int(fu))
            if t_cur > 0.0:
                patterns.append(pattern)
                nodes.append(t_cur)
                crossings.append((s, un))
            pattern = pattern.flipped(s, un)
        if t_cur > 0.0 and len(diff):
            last_flip = int(diff[-1])
        ev0.set_pattern(pattern)
        ev1.set_pattern(pattern)

    while True:
        b = ev0.flat_pre()
        a = ev1.flat_pre() - b
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(a))):
            raise NumericError("non-finite preactivation encountered on the path")
        eps = ADVANCE_TOL * (1.0 - t_cur)
        if n_units:
            amax = float(np.max(np.abs(a)))
            ok = np.abs(a) > SLOPE_TOL * amax if amax > 0.0 else np.zeros(n_units, bool)
            roots = np.full(n_units, np.inf)
            np.divide(-b, a, out=roots, where=ok)
            eligible = ok & (roots > t_cur + eps) & (roots < 1.0)
            # units tied at the current node location continue in ascending id order
            tied = ok & (np.abs(roots - t_cur) <= eps) & (flat_ids > last_flip) \
                & (roots > 0.0) & (roots < 1.0)
            cand = eligible | tied
        else:
            cand = np.zeros(0, bool)

        if not cand.any():
            # last segment [t_cur, 1]: verify and finish
            if 1.0 - t_cur > eps:
                cap = capture_pattern(net, path.point(0.5 * (t_cur + 1.0)))
                if cap != pattern:
                    reconciles += 1
                    if reconciles > rollback_limit:
                        raise NumericError("segment verification kept failing; pathological path")
                    reconcile(cap)
                    continue
            patterns.append(pattern)
            break

        r_min = float(np.min(roots[cand]))
        tied_now = cand & (roots <= r_min + eps)
        u = int(np.flatnonzero(tied_now)[0])
        t_next = max(float(roots[u]), t_cur)  # clamp eps-early tie roots

        # verify the segment we are about to close; a zero-length tie segment
        # has no interior (capture at the node itself is ambiguous), so tie
        # flips proceed unverified one bit at a time
        if t_next - t_cur > eps:
            cap = capture_pattern(net, path.point(0.5 * (t_cur + t_next)))
            if cap != pattern:
                reconciles += 1
                if reconciles > rollback_limit:
                    raise NumericError("segment verification kept failing; pathological path")
                reconcile(cap)
                continue

        if len(nodes) >= node_cap:
            raise NumericError(f"node count exceeded cap ({node_cap}); pathological input")

        # just past the root the sign equals the slope sign; a unit whose bit
        # already matches (a zero-touch that does not switch sign, which can
        # only arise in tie continuations) contributes no node
        slot, unit = slot_unit(u)
        new_bit = 1 if a[u] > 0.0 else 0
        if pattern.slots[slot][unit] == new_bit:
            t_cur = max(t_cur, t_next)
            last_flip = u
            continue

        patterns.append(pattern)
        nodes.append(t_next)
        crossings.append((slot, unit))
        pattern = pattern.flipped(slot, unit)
        from_layer = 0 if full_recompute else net.slot_owner[slot]
        ev0.set_pattern(pattern, from_layer)
        ev1.set_pattern(pattern, from_layer)
        t_cur = t_next
        last_flip = u

    grads = np.stack([segment_gradient(net, path, p, norm_scale=norm_scale)
                      for p in patterns])
    return PathProfile(path=path, nodes=np.array(nodes), crossings=tuple(crossings),
                       patterns=tuple(patterns), gradients=grads, norm_scale=norm_scale)


def node_gap_product(net: LayerGraph, profile: PathProfile, k: int) -> np.ndarray:
    """Gap vector at node k computed by the direct indicator-product form
    (single product through the graph) rather than as R_k - R_{k-1}."""
    if not 0 <= k < profile.K:
        raise ValueError(f"node index {k} out of range [0, {profile.K})")
    slot, unit = profile.crossings[k]
    left = profile.patterns[k]
    right = profile.patterns[k + 1]
    sign = 1.0 if right.slots[slot][unit] else -1.0
    pres, _ = _trace(net, profile.path.unit_dir, left)
    eta = pres[slot][unit]
    delta = np.zeros(net.slot_sizes[slot])
    delta[unit] = sign * eta
    return propagate_delta(net, left, slot, delta) / profile.norm_scale


def continuity_residuals(net: LayerGraph, profile: PathProfile) -> np.ndarray:
    """Per-node max-abs mismatch between the left-segment and right-segment
    affine evaluations of the (scaled) output at the node; zero for a
    correctly reconstructed piecewise-linear function."""
    res = np.zeros(profile.K)
    for k, t in enumerate(profile.nodes):
        x = profile.path.point(t)
        left = forward_fixed(net, x, profile.patterns[k]).values
        right = forward_fixed(net, x, profile.patterns[k + 1]).values
        res[k] = np.max(np.abs(left - right)) / profile.norm_scale
    return res


def fd_gradient_oracle(net: LayerGraph, path: LinearPath, t: float, h: float,
                       norm_scale: float = 1.0) -> np.ndarray:
    """Central-difference directional gradient of the (scaled) output at
    X(t):  (u(t+h) - u(t-h)) / (2 h ||v||) per component.

    Independent of the walker; requires [t-h, t+h] to sit inside one
    activation region and raises if the stencil straddles a node.
    """
    if h <= 0.0:
        raise ValueError("step h must be positive")
    if t - h < 0.0 or t + h > 1.0:
        raise ValueError("stencil leaves the path interval [0, 1]")
    lo = path.point(t - h)
    hi = path.point(t + h)
    if capture_pattern(net, lo) != capture_pattern(net, hi):
        raise ValueError("finite-difference stencil straddles a node; "
                         "evaluate at a segment midpoint instead")
    f_lo = forward(net, lo).values
    f_hi = forward(net, hi).values
    return (f_hi - f_lo) / (2.0 * h * path.v_norm * norm_scale)


def dense_node_oracle(net: LayerGraph, path: LinearPath, grid: int,
                      chunk: int = 1 << 17) -> int:
    """Count preactivation sign changes over a uniform grid of `grid` cells
    on [0, 1].  Exact whenever the minimum node spacing exceeds 1/grid;
    coarser grids undercount (two crossings inside one cell cancel or
    merge).  Shares no code with the walker's root finding.
    """
    if grid < 1000:
        raise ValueError("grid must be >= 1e3 for a meaningful scan")
    if path.dim != net.input_dim:
        raise ValueError("path does not match network input dim")
    t_all = np.linspace(0.0, 1.0, grid + 1)
    count = 0
    prev_signs: np.ndarray | None = None
    for start in range(0, grid + 1, chunk):
        ts = t_all[start:start + chunk]
        X = path.point(ts)
        pres, _ = _trace(net, X)
        if not pres:
            return 0
        signs = np.concatenate([(g >= 0.0) for g in pres], axis=1)
        if prev_signs is not None:
            signs = np.concatenate([prev_signs[None, :], signs], axis=0)
        count += int(np.count_nonzero(signs[1:] != signs[:-1]))
        prev_signs = signs[-1]
    return count
