"""Flat key-value experiment configs and the architecture descriptor
grammar.

Config files are plain text, one ``key = value`` per line, ``#`` starts a
comment.  Every random choice is driven by an explicit seed in the file;
there is no ambient randomness.

Architecture grammar::

    mlp d=784 m=100 L=2 c=10
    seq in=1x6x6 conv(o=4,k=3,s=1) res(conv(o=4,k=3,s=1),conv(o=4,k=3,s=1)) dense(o=10)

``mlp`` expands to L-1 hidden dense layers of width m plus a dense output
layer.  ``seq`` lists layers explicitly; ``in=`` is either a flat dim or
``CxHxW``; parenthesized arguments carry no spaces.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError
from ..network import Arch, ConvSpec, DenseSpec, ResidualSpec, mlp_arch
from ..train import TrainConfig

__all__ = ["ExperimentConfig", "parse_arch", "parse_config", "KINDS"]

KINDS = ("node-count", "gap-deviation", "deflection", "bridge-sim",
         "train-sweep", "margin-fluctuation")


def _kv_tokens(tokens: list[str], what: str) -> dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ConfigError(f"{what}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def _split_args(body: str) -> list[str]:
    """Split a parenthesized argument list on top-level commas."""
    args, depth, cur = [], 0, []
    for ch in body:
        if ch == "(":
            depth += 1
            cur.append(ch)
        elif ch == ")":
            depth -= 1
            cur.append(ch)
        elif ch == "," and depth == 0:
            args.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if cur:
        args.append("".join(cur))
    return [a.strip() for a in args if a.strip()]


def _parse_layer(tok: str):
    if tok.startswith("dense(") and tok.endswith(")"):
        kv = _kv_tokens(_split_args(tok[6:-1]), tok)
        return DenseSpec(int(kv["o"]))
    if tok.startswith("conv(") and tok.endswith(")"):
        kv = _kv_tokens(_split_args(tok[5:-1]), tok)
        return ConvSpec(int(kv["o"]), int(kv["k"]), int(kv.get("s", "1")))
    if tok.startswith("res(") and tok.endswith(")"):
        subs = tuple(_parse_layer(a) for a in _split_args(tok[4:-1]))
        if any(isinstance(s, ResidualSpec) for s in subs):
            raise ConfigError("nested res(...) blocks are not supported")
        return ResidualSpec(subs)
    raise ConfigError(f"unknown layer token {tok!r}")


def parse_arch(text: str) -> Arch:
    tokens = text.split()
    if not tokens:
        raise ConfigError("empty architecture descriptor")
    try:
        if tokens[0] == "mlp":
            kv = _kv_tokens(tokens[1:], "mlp arch")
            missing = {"d", "m", "L", "c"} - set(kv)
            if missing:
                raise ConfigError(f"mlp arch missing {sorted(missing)}")
            return mlp_arch(d=int(kv["d"]), m=int(kv["m"]), L=int(kv["L"]), c=int(kv["c"]))
        if tokens[0] == "seq":
            if len(tokens) < 3 or not tokens[1].startswith("in="):
                raise ConfigError("seq arch needs 'in=<shape>' followed by layers")
            shape = tuple(int(s) for s in tokens[1][3:].split("x"))
            layers = tuple(_parse_layer(t) for t in tokens[2:])
            return Arch(input_shape=shape, layers=layers)
    except (ValueError, KeyError) as e:
        raise ConfigError(f"bad architecture descriptor {text!r}: {e}") from e
    raise ConfigError(f"architecture must start with 'mlp' or 'seq', got {tokens[0]!r}")


_KNOWN_KEYS = {
    "kind", "arch", "dataset", "nets", "pairs", "seed", "normalize", "out",
    "threads", "node-cap", "pair-mode", "components",
    "lr", "momentum", "batch-size", "epochs", "eval-every", "log-checkpoints",
    "train-subset", "checkpoint",
    "bridge-k", "bridge-trials", "bridge-sigma",
}

_BOOL = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    arch_text: str | None = None
    dataset: str | None = None
    nets: int = 1
    pairs: int = 1
    normalize: bool = True
    out: str = "runs/out"
    threads: int = 1
    node_cap: int = 1_000_000
    pair_mode: str = "any"
    checkpoint: str | None = None
    train: TrainConfig | None = None
    train_subset: int = 0            # 0 = use the whole dataset
    bridge_k: int = 100
    bridge_trials: int = 100_000
    bridge_sigma: float | None = None
    raw_text: str = ""

    @property
    def arch(self) -> Arch | None:
        return parse_arch(self.arch_text) if self.arch_text else None

    def config_hash(self) -> str:
        canon = "\n".join(sorted(
            line.split("#", 1)[0].strip()
            for line in self.raw_text.splitlines()
            if line.split("#", 1)[0].strip()))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _require(kv: dict, keys: list[str], kind: str) -> None:
    missing = [k for k in keys if k not in kv]
    if missing:
        raise ConfigError(f"kind '{kind}' requires config keys {missing}")


def parse_config(text: str) -> ExperimentConfig:
    kv: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.lower()
        if k not in _KNOWN_KEYS:
            raise ConfigError(f"line {ln}: unknown config key {k!r}")
        if k in kv:
            raise ConfigError(f"line {ln}: duplicate config key {k!r}")
        kv[k] = v

    if "kind" not in kv:
        raise ConfigError("config is missing 'kind'")
    kind = kv["kind"]
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; choose from {KINDS}")
    if "seed" not in kv:
        raise ConfigError("config is missing 'seed' (all randomness must be explicit)")

    try:
        seed = int(kv["seed"])
        nets = int(kv.get("nets", "1"))
        pairs = int(kv.get("pairs", "1"))
        threads = int(kv.get("threads", "1"))
        node_cap = int(kv.get("node-cap", "1000000"))
        train_subset = int(kv.get("train-subset", "0"))
        bridge_k = int(kv.get("bridge-k", "100"))
        bridge_trials = int(kv.get("bridge-trials", "100000"))
        bridge_sigma = float(kv["bridge-sigma"]) if "bridge-sigma" in kv else None
        normalize = _BOOL.get(kv.get("normalize", "true").lower())
        if normalize is None:
            raise ConfigError(f"normalize must be a boolean, got {kv['normalize']!r}")
    except ValueError as e:
        raise ConfigError(f"bad numeric config value: {e}") from e

    # kind-specific requirements
    if kind == "bridge-sim":
        _require(kv, ["bridge-k", "bridge-trials"], kind)
    else:
        _require(kv, ["arch", "dataset"], kind)
        parse_arch(kv["arch"])  # fail fast on bad descriptors
    if kind in ("train-sweep", "margin-fluctuation"):
        _require(kv, ["epochs"], kind)

    train_cfg = None
    if any(k in kv for k in ("lr", "momentum", "batch-size", "epochs", "eval-every", "log-checkpoints")):
        try:
            train_cfg = TrainConfig(
                learning_rate=float(kv.get("lr", "0.1")),
                momentum=float(kv.get("momentum", "0.0")),
                batch_size=int(kv.get("batch-size", "64")),
                epochs=int(kv.get("epochs", "10")),
                seed=seed,
                eval_every=int(kv.get("eval-every", "0")),
                log_checkpoints=_BOOL.get(kv.get("log-checkpoints", "true").lower(), True),
            )
        except ValueError as e:
            raise ConfigError(f"bad training config: {e}") from e

    pair_mode = kv.get("pair-mode", "any")
    if pair_mode not in ("any", "within-class"):
        raise ConfigError(f"pair-mode must be 'any' or 'within-class', got {pair_mode!r}")

    return ExperimentConfig(
        kind=kind, seed=seed, arch_text=kv.get("arch"), dataset=kv.get("dataset"),
        nets=nets, pairs=pairs, normalize=normalize, out=kv.get("out", "runs/out"),
        threads=threads, node_cap=node_cap, pair_mode=pair_mode,
        checkpoint=kv.get("checkpoint"), train=train_cfg, train_subset=train_subset,
        bridge_k=bridge_k, bridge_trials=bridge_trials, bridge_sigma=bridge_sigma,
        raw_text=text,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())
