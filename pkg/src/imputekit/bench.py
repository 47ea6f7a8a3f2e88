"""Benchmark harness: methods x datasets x rates x replicates.

Every cell derives its own seeds from the base seed and its coordinates, so
cells are order-independent, individually re-runnable, and safe to execute
in a process pool. Failed cells become first-class error records rather
than killing the grid.

Reports: grid.csv (deterministic per-cell metrics), timings.csv (measured
wall times, kept out of grid.csv so reruns are byte-identical),
aggregate.csv, rank.csv, per-dataset SVG curves of MAE and MMD versus rate,
and run_summary.json with the configuration fingerprint.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .amputation import ampute, apply_mask, derive_seed
from .data_model import DataTable
from .methods import run_method
from .metrics import METRIC_NAMES, MetricReport, SinkhornConfig, evaluate

GRID_COLUMNS = ("dataset", "method", "rate", "replicate", "nrmse", "sinkhorn", "mae", "pev", "mmd")
RANK_RULE = ("nrmse", "sinkhorn", "mmd")


@dataclass
class BenchCell:
    dataset: str
    method: str
    rate: float
    replicate: int
    seed: int
    report: MetricReport | None = None
    error: str | None = None


@dataclass
class BenchGrid:
    cells: list[BenchCell]
    config: dict
    fingerprint: str

    @property
    def failures(self) -> list[BenchCell]:
        return [c for c in self.cells if c.error is not None]


def config_fingerprint(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _cell_spec(config, dataset, method, rate, rep):
    return {
        "dataset": dataset.name,
        "method": method,
        "rate": float(rate),
        "replicate": rep,
        "mask_seed": derive_seed(config["base_seed"], dataset.name, float(rate), rep),
        "method_seed": derive_seed(config["base_seed"], dataset.name, method, float(rate), rep),
    }


def run_cell(
    table: DataTable,
    method: str,
    rate: float,
    replicate: int,
    base_seed: int,
    mechanism: str = "mar",
    method_opts: dict | None = None,
    sinkhorn_config: SinkhornConfig | None = None,
) -> MetricReport:
    """Ampute -> impute -> evaluate one cell, reproducible in isolation."""
    mask_seed = derive_seed(base_seed, table.name, float(rate), replicate)
    mask = ampute(table, rate, mask_seed, mechanism=mechanism, replicate=replicate)
    holed = apply_mask(table, mask)
    method_seed = derive_seed(base_seed, table.name, method, float(rate), replicate)
    result = run_method(holed, mask.mask, method, seed=method_seed, opts=method_opts)
    return evaluate(
        table, result.completed, mask.mask,
        wall_time_s=result.wall_time_s,
        sinkhorn_config=sinkhorn_config,
    )


def _worker(args):
    (idx, table, method, rate, rep, base_seed, mechanism, method_opts, sink_kw) = args
    try:
        report = run_cell(
            table, method, rate, rep, base_seed,
            mechanism=mechanism,
            method_opts=method_opts,
            sinkhorn_config=SinkhornConfig(**sink_kw) if sink_kw else None,
        )
        return idx, report, None
    except Exception as exc:  # keep the grid alive; record the failure
        return idx, None, f"{type(exc).__name__}: {exc}"


def run_grid(
    datasets: list[DataTable],
    methods: list[str],
    rates: list[float],
    n_reps: int,
    base_seed: int,
    mechanism: str = "mar",
    workers: int = 1,
    method_opts: dict | None = None,
    sinkhorn: dict | None = None,
) -> BenchGrid:
    """Evaluate every (dataset, method, rate, replicate) combination."""
    if not datasets or not methods or not rates or n_reps < 1:
        raise ValueError("run_grid needs datasets, methods, rates, and n_reps >= 1")
    config = {
        "datasets": [t.name for t in datasets],
        "methods": list(methods),
        "rates": [float(r) for r in rates],
        "n_reps": int(n_reps),
        "base_seed": int(base_seed),
        "mechanism": mechanism,
        "method_opts": method_opts or {},
        "sinkhorn": sinkhorn or {},
    }
    jobs = []
    cells = []
    idx = 0
    for table in datasets:
        for method in methods:
            for rate in rates:
                for rep in range(n_reps):
                    seed = derive_seed(base_seed, table.name, method, float(rate), rep)
                    cells.append(BenchCell(table.name, method, float(rate), rep, seed))
                    jobs.append(
                        (idx, table, method, float(rate), rep, base_seed,
                         mechanism, method_opts or {}, sinkhorn or {})
                    )
                    idx += 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, report, err in pool.map(_worker, jobs, chunksize=1):
                cells[i].report = report
                cells[i].error = err
    else:
        for job in jobs:
            i, report, err = _worker(job)
            cells[i].report = report
            cells[i].error = err
    return BenchGrid(cells=cells, config=config, fingerprint=config_fingerprint(config))


def aggregate(grid: BenchGrid) -> list[dict]:
    """Arithmetic means of the five metrics at three groupings:
    (dataset, method), (dataset, method, rate), and (method, rate) across
    datasets. Failed cells are excluded and counted."""
    rows = []
    ok = [c for c in grid.cells if c.report is not None]

    def summarize(cells, dataset, method, rate):
        agg = {}
        for metric in METRIC_NAMES:
            vals = [c.report.aggregate[metric] for c in cells]
            vals = [v for v in vals if np.isfinite(v)]
            agg[metric] = float(np.mean(vals)) if vals else float("nan")
        n_failed = sum(
            1 for c in grid.cells
            if c.error is not None
            and (dataset == "all" or c.dataset == dataset)
            and c.method == method
            and (rate == "all" or c.rate == rate)
        )
        return {
            "dataset": dataset, "method": method, "rate": rate,
            "n_cells": len(cells), "n_failed": n_failed, **agg,
        }

    datasets = sorted({c.dataset for c in grid.cells})
    methods = sorted({c.method for c in grid.cells})
    rates = sorted({c.rate for c in grid.cells})
    for ds in datasets:
        for m in methods:
            sel = [c for c in ok if c.dataset == ds and c.method == m]
            if sel or any(c.dataset == ds and c.method == m for c in grid.cells):
                rows.append(summarize(sel, ds, m, "all"))
            for r in rates:
                sel_r = [c for c in sel if c.rate == r]
                if sel_r or any(
                    c.dataset == ds and c.method == m and c.rate == r for c in grid.cells
                ):
                    rows.append(summarize(sel_r, ds, m, r))
    for m in methods:
        for r in rates:
            sel = [c for c in ok if c.method == m and c.rate == r]
            if sel:
                rows.append(summarize(sel, "all", m, r))
    return rows


def rank_best(agg_rows: list[dict], rule: tuple[str, ...] = RANK_RULE) -> list[dict]:
    """Best and second-best method per dataset, lexicographic on `rule`
    (lower is better), ties broken by mae then method id."""
    out = []
    per_dataset = {}
    for row in agg_rows:
        if row["dataset"] != "all" and row["rate"] == "all":
            per_dataset.setdefault(row["dataset"], []).append(row)
    for ds in sorted(per_dataset):
        rows = per_dataset[ds]
        if len(rows) < 2:
            continue
        rows = sorted(
            rows,
            key=lambda r: tuple(r[m] for m in rule) + (r["mae"], r["method"]),
        )
        for rank_label, row in zip(("best", "second_best"), rows[:2]):
            out.append({
                "dataset": ds,
                "rank": rank_label,
                "method": row["method"],
                **{m: row[m] for m in METRIC_NAMES},
                "rule": "+".join(rule),
            })
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# series colors follow the figure conventions: the composite imputer is
# black and drawn last; the iterative forest is gray
METHOD_COLORS = {
    "pain": "#000000",
    "missforest": "#808080",
    "mean": "#d62728",
    "mode": "#ff7f0e",
    "median": "#17becf",
    "mice": "#9467bd",
    "knn": "#1f77b4",
    "sice": "#e377c2",
    "combined_avg": "#8c564b",
    "combined_typed": "#2ca02c",
    "autoencoder": "#e0c030",
}
_FALLBACK_COLORS = ("#4b0082", "#006400", "#8b4513", "#2f4f4f", "#b03060")


def _svg_plot(series: dict[str, list[tuple[float, float]]], title: str, ylabel: str) -> str:
    width, height = 640, 420
    ml, mr, mt, mb = 60, 150, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    xs = sorted({x for pts in series.values() for x, _ in pts})
    ys = [y for pts in series.values() for _, y in pts if np.isfinite(y)]
    if not xs or not ys:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"/>'
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(x):
        return ml + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y):
        return mt + ph - (y - y_lo) / (y_hi - y_lo) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="12">',
        f'<text x="{ml}" y="{mt - 15}" font-size="14">{title}</text>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="#333"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="#333"/>',
    ]
    for x in xs:
        parts.append(
            f'<text x="{sx(x):.1f}" y="{mt + ph + 18}" text-anchor="middle">'
            f"{x * 100:.0f}%</text>"
        )
    for frac in (0.0, 0.5, 1.0):
        yv = y_lo + frac * (y_hi - y_lo)
        parts.append(
            f'<text x="{ml - 8}" y="{sy(yv):.1f}" text-anchor="end">{yv:.3g}</text>'
        )
    parts.append(
        f'<text x="15" y="{mt + ph / 2:.0f}" transform="rotate(-90 15 {mt + ph / 2:.0f})" '
        f'text-anchor="middle">{ylabel}</text>'
    )
    names = sorted(series)
    if "pain" in names:  # draw the composite imputer last, on top
        names.remove("pain")
        names.append("pain")
    fallback = 0
    for li, name in enumerate(names):
        color = METHOD_COLORS.get(name)
        if color is None:
            color = _FALLBACK_COLORS[fallback % len(_FALLBACK_COLORS)]
            fallback += 1
        pts = sorted(series[name])
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts if np.isfinite(y))
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>'
        )
        ly = mt + 14 * li
        parts.append(
            f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{ml + pw + 35}" y="{ly + 4}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def emit_report(grid: BenchGrid, out_dir: str | Path) -> dict[str, Path]:
    """Write grid.csv, timings.csv, aggregate.csv, rank.csv, SVG curves, and
    run_summary.json. Output bytes depend only on the grid contents (timing
    lives in timings.csv and the summary)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    order = sorted(range(len(grid.cells)), key=lambda i: (
        grid.cells[i].dataset, grid.cells[i].method,
        grid.cells[i].rate, grid.cells[i].replicate,
    ))
    grid_rows, time_rows = [], []
    for i in order:
        c = grid.cells[i]
        key = [c.dataset, c.method, repr(c.rate), c.replicate]
        if c.report is None:
            grid_rows.append(key + [""] * 5)
            time_rows.append(key + [""])
        else:
            a = c.report.aggregate
            grid_rows.append(
                key + [repr(float(a[m])) for m in ("nrmse", "sinkhorn", "mae", "pev", "mmd")]
            )
            time_rows.append(key + [repr(float(c.report.wall_time_s))])
    paths["grid"] = out / "grid.csv"
    _write_csv(paths["grid"], list(GRID_COLUMNS), grid_rows)
    paths["timings"] = out / "timings.csv"
    _write_csv(paths["timings"], ["dataset", "method", "rate", "replicate", "time_s"], time_rows)

    agg_rows = aggregate(grid)
    paths["aggregate"] = out / "aggregate.csv"
    _write_csv(
        paths["aggregate"],
        ["dataset", "method", "rate", "n_cells", "n_failed", *METRIC_NAMES],
        [
            [r["dataset"], r["method"],
             r["rate"] if isinstance(r["rate"], str) else repr(r["rate"]),
             r["n_cells"], r["n_failed"], *(repr(float(r[m])) for m in METRIC_NAMES)]
            for r in agg_rows
        ],
    )
    ranks = rank_best(agg_rows)
    paths["rank"] = out / "rank.csv"
    _write_csv(
        paths["rank"],
        ["dataset", "rank", "method", *METRIC_NAMES, "rule"],
        [
            [r["dataset"], r["rank"], r["method"],
             *(repr(float(r[m])) for m in METRIC_NAMES), r["rule"]]
            for r in ranks
        ],
    )

    for ds in sorted({c.dataset for c in grid.cells}):
        for metric in ("mae", "mmd"):
            series: dict[str, list[tuple[float, float]]] = {}
            for row in agg_rows:
                if row["dataset"] == ds and row["rate"] != "all":
                    series.setdefault(row["method"], []).append(
                        (float(row["rate"]), row[metric])
                    )
            svg = _svg_plot(series, f"{ds}: {metric.upper()} vs missingness", metric.upper())
            p = out / f"{ds}_{metric}.svg"
            p.write_text(svg, encoding="utf-8")
            paths[f"{ds}_{metric}"] = p

    summary = {
        "config": grid.config,
        "config_fingerprint": grid.fingerprint,
        "n_cells": len(grid.cells),
        "n_failed": len(grid.failures),
        "failures": [
            {"dataset": c.dataset, "method": c.method, "rate": c.rate,
             "replicate": c.replicate, "error": c.error}
            for c in grid.failures
        ],
        "total_time_s": sum(
            c.report.wall_time_s for c in grid.cells if c.report is not None
        ),
        "rank_rule": "+".join(RANK_RULE),
    }
    paths["summary"] = out / "run_summary.json"
    paths["summary"].write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return paths
