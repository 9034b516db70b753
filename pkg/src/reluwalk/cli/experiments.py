"""Config-driven experiment pipelines.

Each kind maps to one family of measurements:

    node-count          fresh init per trial, count path nodes (Fig. 2a style)
    gap-deviation       init-state walks, bridge-predicted midpoint deviation
    deflection          same walks, measured midpoint deflection
    bridge-sim          pure pinned-walk Monte Carlo (no network)
    train-sweep         SGD with checkpoints, walk metrics per checkpoint
    margin-fluctuation  SGD with checkpoints, pair margin vs pair fluctuation

Per-trial and per-pair seeds are split from the master seed with
SeedSequence spawn keys (counter mode), so results do not depend on the
thread count and identical configs give byte-identical reports.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .. import __version__
from ..data import Dataset, PairSample, load_cache, load_cifar10, load_idx, sample_pairs, synth_gaussian
from ..errors import ConfigError, DataError
from ..network import LayerGraph, forward, he_init, normalize_output
from ..pathwalk import PathProfile, make_path, walk_path
from ..stats import (
    bridge_simulate,
    deflection_midpoint,
    gaussian_increments,
    margin,
    pair_fluctuation,
    pair_margin,
)
from ..train import TrainConfig, train
from .checkpoint import load_checkpoint
from .config import ExperimentConfig
from .reports import ExperimentReport, Row, Series, aggregate_rows

__all__ = ["run_experiment", "resolve_dataset", "derive_seed", "pair_walk_metrics"]


def derive_seed(master: int, *key: int) -> int:
    """Counter-mode child seed: independent streams for any (master, key)."""
    ss = np.random.SeedSequence(entropy=master, spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def resolve_dataset(spec: str | None) -> Dataset:
    """Dataset reference grammar:
        synth-gaussian n=1000 d=64 seed=1
        mnist images=PATH labels=PATH
        cifar10 path=PATH
        cache path=PATH
    """
    if not spec:
        raise ConfigError("experiment needs a 'dataset' key")
    tokens = spec.split()
    kind, kv = tokens[0], {}
    for tok in tokens[1:]:
        if "=" not in tok:
            raise ConfigError(f"dataset spec: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        kv[k] = v
    try:
        if kind == "synth-gaussian":
            return synth_gaussian(n=int(kv["n"]), d=int(kv["d"]), seed=int(kv.get("seed", "0")))
        if kind == "mnist":
            return load_idx(kv["images"], kv["labels"])
        if kind == "cifar10":
            return load_cifar10(kv["path"])
        if kind == "cache":
            return load_cache(kv["path"])
    except KeyError as e:
        raise ConfigError(f"dataset spec {spec!r} is missing {e}") from e
    except ValueError as e:
        raise ConfigError(f"bad dataset spec {spec!r}: {e}") from e
    raise ConfigError(f"unknown dataset kind {kind!r}")


def _meta(cfg: ExperimentConfig) -> dict:
    return {"kind": cfg.kind, "config_hash": cfg.config_hash(), "version": __version__}


def pair_walk_metrics(net: LayerGraph, pair: PairSample, labels: tuple[int, int] | None,
                      *, normalize: bool, node_cap: int) -> tuple[PathProfile, dict]:
    """Walk one pair and compute the per-pair scalar metrics.

    Margins and the midpoint fluctuation use per-input unit normalization
    (each output vector is divided by its own norm); the walk's gradient
    scaling uses the single per-pair scalar so segments stay linear.
    """
    path = make_path(pair.x_i, pair.x_j)
    profile = walk_path(net, path, normalize=normalize, node_cap=node_cap)
    K = profile.K
    sigma_hat = float(np.sqrt(np.mean(np.square(profile.gaps)))) if K > 0 else None
    if K > 0:
        ks = K // 2
        gap_dev = sigma_hat * math.sqrt((ks * (K - ks)) / K)
        defl = [deflection_midpoint(profile, j) for j in range(profile.num_components)]
        defl_rms = float(np.sqrt(np.mean(np.square(defl))))
    else:
        gap_dev = None
        defl = []
        defl_rms = None
    pm = pf = None
    if labels is not None:
        u0 = normalize_output(forward(net, pair.x_i))
        u1 = normalize_output(forward(net, pair.x_j))
        umid = normalize_output(forward(net, path.point(0.5)))
        pm = pair_margin(margin(u0, labels[0]), margin(u1, labels[1]))
        pf = pair_fluctuation(u0.values, u1.values, umid.values)
    return profile, {"K": K, "sigma_hat": sigma_hat, "gap_dev_mid": gap_dev,
                     "deflection": defl, "deflection_rms": defl_rms, "pm": pm, "pf": pf}


def _walk_rows(net: LayerGraph, pairs: list[PairSample], data: Dataset,
               cfg: ExperimentConfig, *, with_margins: bool, seed: int,
               prefix: str = "") -> list[Row]:
    def job(args):
        idx, pair = args
        labels = ((int(data.labels[pair.i]), int(data.labels[pair.j]))
                  if with_margins else None)
        _, mt = pair_walk_metrics(net, pair, labels,
                                  normalize=cfg.normalize, node_cap=cfg.node_cap)
        rows = []
        pid = f"{prefix}p{idx}"
        if mt["deflection"]:
            for j, dj in enumerate(mt["deflection"]):
                rows.append(Row(pair_id=pid, component=j, K=mt["K"],
                                sigma_hat=mt["sigma_hat"], gap_dev_mid=mt["gap_dev_mid"],
                                deflection_mid=dj, pm=mt["pm"], pf=mt["pf"], seed=seed))
        else:
            rows.append(Row(pair_id=pid, component=-1, K=mt["K"],
                            sigma_hat=mt["sigma_hat"], gap_dev_mid=mt["gap_dev_mid"],
                            deflection_mid=None, pm=mt["pm"], pf=mt["pf"], seed=seed))
        return rows

    jobs = list(enumerate(pairs))
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            chunks = list(ex.map(job, jobs))
    else:
        chunks = [job(j) for j in jobs]
    return [r for ch in chunks for r in ch]


def _load_or_init(cfg: ExperimentConfig, seed: int) -> LayerGraph:
    if cfg.checkpoint:
        return load_checkpoint(cfg.checkpoint)
    return he_init(cfg.arch, seed=seed)


def _run_node_count(cfg: ExperimentConfig) -> ExperimentReport:
    data = resolve_dataset(cfg.dataset)
    rows: list[Row] = []
    trials = cfg.nets

    def job(i: int) -> Row:
        net_seed = derive_seed(cfg.seed, 0, i)
        net = he_init(cfg.arch, seed=net_seed)
        pair = sample_pairs(data, 1, seed=derive_seed(cfg.seed, 1, i), mode=cfg.pair_mode)[0]
        profile = walk_path(net, make_path(pair.x_i, pair.x_j),
                            normalize=False, node_cap=cfg.node_cap)
        return Row(pair_id=f"p{i}", component=-1, K=profile.K, seed=net_seed)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            rows = list(ex.map(job, range(trials)))
    else:
        rows = [job(i) for i in range(trials)]
    return ExperimentReport(kind=cfg.kind, rows=tuple(rows),
                            series=aggregate_rows(cfg.kind, rows), meta=_meta(cfg))


def _run_walk_metrics(cfg: ExperimentConfig) -> ExperimentReport:
    data = resolve_dataset(cfg.dataset)
    with_margins = data.c >= 2
    rows: list[Row] = []
    for i in range(cfg.nets):
        net_seed = derive_seed(cfg.seed, 0, i)
        net = _load_or_init(cfg, net_seed)
        pairs = sample_pairs(data, cfg.pairs, seed=derive_seed(cfg.seed, 1, i),
                             mode=cfg.pair_mode)
        rows.extend(_walk_rows(net, pairs, data, cfg, with_margins=with_margins,
                               seed=net_seed, prefix=f"n{i}-"))
    return ExperimentReport(kind=cfg.kind, rows=tuple(rows),
                            series=aggregate_rows(cfg.kind, rows), meta=_meta(cfg))


def _run_bridge_sim(cfg: ExperimentConfig) -> ExperimentReport:
    bs = bridge_simulate(gaussian_increments(cfg.bridge_sigma if cfg.bridge_sigma else 1.0),
                         K=cfg.bridge_k, trials=cfg.bridge_trials, seed=cfg.seed,
                         sigma=cfg.bridge_sigma)
    ks = np.arange(cfg.bridge_k + 1, dtype=float)
    series = (
        Series("bridge_theory", tuple((float(k), float(v), 0.0, bs.trials)
                                      for k, v in zip(ks, bs.deviation_profile))),
        Series("bridge_empirical", tuple((float(k), float(v), float(se), bs.trials)
                                         for k, v, se in zip(ks, bs.empirical_profile,
                                                             bs.variance_se))),
    )
    return ExperimentReport(kind=cfg.kind, rows=(), series=series, meta=_meta(cfg))


def _training_data(cfg: ExperimentConfig) -> Dataset:
    data = resolve_dataset(cfg.dataset)
    if data.c < 2:
        raise DataError("training needs labeled data with at least 2 classes")
    if cfg.train_subset and cfg.train_subset < data.n:
        idx = np.random.default_rng(derive_seed(cfg.seed, 9)).choice(
            data.n, size=cfg.train_subset, replace=False)
        data = data.subset(np.sort(idx))
    return data


def _run_sweep(cfg: ExperimentConfig) -> ExperimentReport:
    if cfg.train is None:
        raise ConfigError("train-sweep needs training keys (epochs, lr, ...)")
    data = _training_data(cfg)
    net0 = _load_or_init(cfg, derive_seed(cfg.seed, 0))
    pairs = sample_pairs(data, cfg.pairs, seed=derive_seed(cfg.seed, 1), mode=cfg.pair_mode)
    rows: list[Row] = []
    rows.extend(_walk_rows(net0, pairs, data, cfg, with_margins=True,
                           seed=cfg.seed, prefix="s0:"))
    _, log = train(net0, data, cfg.train)
    for step, net in log.checkpoints:
        rows.extend(_walk_rows(net, pairs, data, cfg, with_margins=True,
                               seed=cfg.seed, prefix=f"s{step}:"))
    return ExperimentReport(kind=cfg.kind, rows=tuple(rows),
                            series=aggregate_rows(cfg.kind, rows), meta=_meta(cfg))


_RUNNERS = {
    "node-count": _run_node_count,
    "gap-deviation": _run_walk_metrics,
    "deflection": _run_walk_metrics,
    "bridge-sim": _run_bridge_sim,
    "train-sweep": _run_sweep,
    "margin-fluctuation": _run_sweep,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Execute the configured pipeline and return the report (the caller
    decides where to emit it)."""
    runner = _RUNNERS.get(cfg.kind)
    if runner is None:
        raise ConfigError(f"unknown experiment kind {cfg.kind!r}")
    return runner(cfg)
