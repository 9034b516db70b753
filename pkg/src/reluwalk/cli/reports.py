"""Report containers and file emission: fixed-schema report.csv, summary.csv
with one (series, x, mean, std, n) row per summary point, one minimal SVG
polyline per series, and meta.txt with the config hash and code version.

All numbers are written with repr() of the Python float, which round-trips
bit-exactly, so aggregates recomputed from a parsed report.csv match the
in-memory values and reruns of the same config are byte-identical.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["Row", "Series", "ExperimentReport", "emit_report",
           "aggregate_rows", "read_report_csv"]

REPORT_COLUMNS = ("pair_id", "component", "K", "sigma_hat", "gap_dev_mid",
                  "deflection_mid", "pm", "pf", "seed")


@dataclass(frozen=True)
class Row:
    pair_id: str
    component: int
    K: int
    sigma_hat: float | None = None
    gap_dev_mid: float | None = None
    deflection_mid: float | None = None
    pm: float | None = None
    pf: float | None = None
    seed: int | None = None


@dataclass(frozen=True)
class Series:
    """One summary curve: points are (x, mean, std, n)."""
    name: str
    points: tuple[tuple[float, float, float, int], ...]


@dataclass(frozen=True)
class ExperimentReport:
    kind: str
    rows: tuple[Row, ...]
    series: tuple[Series, ...]
    meta: dict = field(default_factory=dict)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    path.write_text(buf.getvalue())


def emit_report(report: ExperimentReport, out_dir) -> list[Path]:
    """Write report.csv, summary.csv, meta.txt, and one SVG per series.
    Returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    p = out / "report.csv"
    _write_csv(p, REPORT_COLUMNS,
               ([r.pair_id, _fmt(r.component), _fmt(r.K), _fmt(r.sigma_hat),
                 _fmt(r.gap_dev_mid), _fmt(r.deflection_mid), _fmt(r.pm),
                 _fmt(r.pf), _fmt(r.seed)] for r in report.rows))
    written.append(p)

    p = out / "summary.csv"
    _write_csv(p, ("series", "x", "mean", "std", "n"),
               ([s.name, _fmt(x), _fmt(mean), _fmt(std), _fmt(n)]
                for s in report.series for (x, mean, std, n) in s.points))
    written.append(p)

    p = out / "meta.txt"
    p.write_text("".join(f"{k} = {report.meta[k]}\n" for k in sorted(report.meta)))
    written.append(p)

    for s in report.series:
        p = out / f"{s.name}.svg"
        p.write_text(_series_svg(s))
        written.append(p)
    return written


def _series_svg(series: Series, width: int = 640, height: int = 480, pad: int = 50) -> str:
    xs = np.array([p[0] for p in series.points], dtype=float)
    ys = np.array([p[1] for p in series.points], dtype=float)
    x_lo, x_hi = (xs.min(), xs.max()) if len(xs) else (0.0, 1.0)
    y_lo, y_hi = (ys.min(), ys.max()) if len(ys) else (0.0, 1.0)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x):
        return pad + (x - x_lo) / (x_hi - x_lo) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y_lo) / (y_hi - y_lo) * (height - 2 * pad)

    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    name = escape(series.name)
    return (
        f'<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n'
        f'  <rect width="{width}" height="{height}" fill="white"/>\n'
        f'  <text x="{width // 2}" y="20" text-anchor="middle" font-size="14">{name}</text>\n'
        f'  <line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
        f'stroke="black"/>\n'
        f'  <line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>\n'
        f'  <text x="{pad}" y="{height - pad + 20}" font-size="11">{x_lo:.6g}</text>\n'
        f'  <text x="{width - pad}" y="{height - pad + 20}" text-anchor="end" '
        f'font-size="11">{x_hi:.6g}</text>\n'
        f'  <text x="{pad - 5}" y="{height - pad}" text-anchor="end" font-size="11">{y_lo:.6g}</text>\n'
        f'  <text x="{pad - 5}" y="{pad}" text-anchor="end" font-size="11">{y_hi:.6g}</text>\n'
        f'  <polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{pts}"/>\n'
        f'</svg>\n'
    )


def _stats_point(x: float, values) -> tuple[float, float, float, int]:
    a = np.asarray([v for v in values if v is not None], dtype=float)
    if a.size == 0:
        return (x, float("nan"), float("nan"), 0)
    return (x, float(a.mean()), float(a.std()), int(a.size))


def aggregate_rows(kind: str, rows) -> tuple[Series, ...]:
    """Recompute the summary series from report rows.  Shared by the
    experiment runners and the `report` subcommand so re-aggregation of an
    emitted report.csv reproduces summary.csv exactly."""
    rows = list(rows)
    series: list[Series] = []

    def by_step():
        groups: dict[int, list[Row]] = {}
        for r in rows:
            step = int(r.pair_id.split(":", 1)[0][1:]) if r.pair_id.startswith("s") else 0
            groups.setdefault(step, []).append(r)
        return sorted(groups.items())

    if kind == "node-count":
        ks = [r.K for r in rows]
        if ks:
            lo, hi = min(ks), max(ks)
            hist = tuple((float(v), float(ks.count(v)), 0.0, len(ks))
                         for v in range(lo, hi + 1))
            series.append(Series("node_count_hist", hist))
        series.append(Series("node_count", (_stats_point(0.0, ks),)))
    elif kind in ("gap-deviation", "deflection"):
        per_pair: dict[str, Row] = {}
        for r in rows:
            per_pair.setdefault(r.pair_id, r)
        pair_rows = list(per_pair.values())
        series.append(Series("K", (_stats_point(0.0, [r.K for r in pair_rows]),)))
        series.append(Series("sigma_hat", (_stats_point(0.0, [r.sigma_hat for r in pair_rows]),)))
        series.append(Series("gap_dev_mid", (_stats_point(0.0, [r.gap_dev_mid for r in pair_rows]),)))
        defl = [r.deflection_mid for r in rows if r.deflection_mid is not None]
        rms = float(np.sqrt(np.mean(np.square(defl)))) if defl else float("nan")
        series.append(Series("deflection_mid_rms", ((0.0, rms, 0.0, len(defl)),)))
    elif kind in ("train-sweep", "margin-fluctuation"):
        names = ("K", "gap_dev_mid", "deflection_mid", "pm", "pf")
        curves: dict[str, list] = {n: [] for n in names}
        for step, rws in by_step():
            per_pair: dict[str, Row] = {}
            for r in rws:
                per_pair.setdefault(r.pair_id, r)
            prs = list(per_pair.values())
            curves["K"].append(_stats_point(step, [r.K for r in prs]))
            curves["gap_dev_mid"].append(_stats_point(step, [r.gap_dev_mid for r in prs]))
            curves["pm"].append(_stats_point(step, [r.pm for r in prs]))
            curves["pf"].append(_stats_point(step, [r.pf for r in prs]))
            defl = [r.deflection_mid for r in rws if r.deflection_mid is not None]
            rms = float(np.sqrt(np.mean(np.square(defl)))) if defl else float("nan")
            curves["deflection_mid"].append((float(step), rms, 0.0, len(defl)))
        for n in names:
            series.append(Series(n, tuple(curves[n])))
    return tuple(series)


def read_report_csv(path) -> list[Row]:
    rows = []
    with open(path, newline="") as f:
        rd = csv.DictReader(f)
        for rec in rd:
            def fl(k):
                return float(rec[k]) if rec[k] != "" else None
            rows.append(Row(
                pair_id=rec["pair_id"],
                component=int(rec["component"]),
                K=int(rec["K"]),
                sigma_hat=fl("sigma_hat"),
                gap_dev_mid=fl("gap_dev_mid"),
                deflection_mid=fl("deflection_mid"),
                pm=fl("pm"),
                pf=fl("pf"),
                seed=int(rec["seed"]) if rec["seed"] != "" else None,
            ))
    return rows
