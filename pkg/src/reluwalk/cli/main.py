"""Command-line entry point.

Subcommands:
    init        build a network from the config and save a checkpoint
    train       run a training sweep experiment (train-sweep / margin-fluctuation)
    analyze     run an init-state or checkpoint analysis experiment
                (node-count / gap-deviation / deflection)
    bridge-sim  run the pinned-random-walk Monte Carlo
    report      re-aggregate an emitted report.csv into summary.csv + SVGs

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from ..errors import ConfigError, DataError, NumericError
from ..network import he_init
from .checkpoint import save_checkpoint
from .config import ExperimentConfig, load_config
from .experiments import derive_seed, run_experiment
from .reports import ExperimentReport, aggregate_rows, emit_report, read_report_csv

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

_FAMILIES = {
    "train": ("train-sweep", "margin-fluctuation"),
    "analyze": ("node-count", "gap-deviation", "deflection"),
    "bridge-sim": ("bridge-sim",),
}


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reluwalk",
                                 description="ReLU network geometry along linear input paths")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("init", "train", "analyze", "bridge-sim"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--threads", type=int, default=None, help="pair-level worker threads")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    rp = sub.add_parser("report")
    rp.add_argument("--config", required=True, help="config the report was produced from")
    rp.add_argument("--out", default=None, help="directory holding report.csv")
    return ap


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "threads", None) is not None:
        cfg = replace(cfg, threads=args.threads)
    if getattr(args, "out", None) is not None:
        cfg = replace(cfg, out=args.out)
    return cfg


def _cmd_init(cfg: ExperimentConfig) -> int:
    if cfg.arch is None:
        raise ConfigError("init needs an 'arch' key")
    net = he_init(cfg.arch, seed=derive_seed(cfg.seed, 0))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "net.rpln"
    save_checkpoint(net, path)
    print(f"initialized {cfg.arch_text!r} -> {path} "
          f"(d={net.input_dim}, c={net.output_dim}, hidden={net.total_hidden_units})")
    return EXIT_OK


def _cmd_run(cfg: ExperimentConfig, family: str) -> int:
    allowed = _FAMILIES[family]
    if cfg.kind not in allowed:
        raise ConfigError(f"subcommand '{family}' handles kinds {allowed}, "
                          f"config says {cfg.kind!r}")
    report = run_experiment(cfg)
    paths = emit_report(report, cfg.out)
    print(f"{cfg.kind}: {len(report.rows)} rows, {len(report.series)} series -> {cfg.out}")
    for p in paths:
        print(f"  {p}")
    return EXIT_OK


def _cmd_report(cfg: ExperimentConfig) -> int:
    if cfg.kind == "bridge-sim":
        raise ConfigError("bridge-sim summaries cannot be re-aggregated from rows; rerun the sim")
    src = Path(cfg.out) / "report.csv"
    if not src.exists():
        raise DataError(f"{src}: no report.csv to aggregate")
    rows = read_report_csv(src)
    report = ExperimentReport(kind=cfg.kind, rows=tuple(rows),
                              series=aggregate_rows(cfg.kind, rows),
                              meta={"kind": cfg.kind, "config_hash": cfg.config_hash(),
                                    "version": "reaggregated"})
    paths = emit_report(report, cfg.out)
    print(f"re-aggregated {len(rows)} rows -> {cfg.out}")
    for p in paths:
        print(f"  {p}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        if args.command == "init":
            return _cmd_init(cfg)
        if args.command == "report":
            return _cmd_report(cfg)
        return _cmd_run(cfg, args.command)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
