"""Command-line interface.

Commands: ampute (make a holed copy of a dataset), impute (fill one), bench
(run the full grid and emit reports), datasets (inspect the manifest).
Exit codes: 0 success, 1 partial bench failure, 2 usage or config error.
All randomness derives from the --seed / config seed, so reruns with the
same flags write identical data files.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .amputation import ampute, apply_mask, load_mask_matrix, save_mask
from .bench import aggregate, emit_report, rank_best, run_grid
from .data_model import load_csv, save_csv
from .fixtures import bundled_data_dir, load_manifest
from .methods import method_ids, run_method
from .metrics import SinkhornConfig, evaluate

USAGE_ERROR = 2
PARTIAL_FAILURE = 1


class CliError(Exception):
    pass


def _cmd_datasets(args) -> int:
    manifest = Path(args.manifest) if args.manifest else bundled_data_dir() / "manifest.json"
    tables = load_manifest(manifest)
    print(f"manifest: {manifest}")
    for t in tables:
        n_cont = sum(1 for k in t.kinds if k == "continuous")
        n_disc = t.n_cols - n_cont
        print(
            f"  {t.name}: {t.n_rows} rows x {t.n_cols} cols "
            f"({n_cont} continuous, {n_disc} discrete)"
        )
    return 0


def _cmd_ampute(args) -> int:
    if not (0 < args.rate <= 0.5):
        raise CliError(f"--rate must be in (0, 0.5], got {args.rate}")
    if args.mechanism not in ("mcar", "mar"):
        raise CliError(f"--mechanism must be mcar or mar, got {args.mechanism!r}")
    table = load_csv(args.input)
    mask = ampute(table, args.rate, args.seed, mechanism=args.mechanism)
    holed = apply_mask(table, mask)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    amputed_path = prefix.with_name(prefix.name + ".amputed.csv")
    save_csv(holed, amputed_path)
    csv_path, json_path = save_mask(mask, prefix)
    # extend the sidecar with run metadata (no timestamp: reruns must match)
    meta = json.loads(json_path.read_text(encoding="utf-8"))
    meta.update(command="ampute", input=str(args.input), version=__version__)
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {amputed_path}, {csv_path}, {json_path} "
          f"(achieved rate {mask.achieved_rate:.4f})")
    return 0


def _cmd_impute(args) -> int:
    if args.method not in method_ids():
        raise CliError(
            f"unknown method {args.method!r}; valid ids: {', '.join(sorted(method_ids()))}"
        )
    table = load_csv(args.input)
    if args.mask:
        mask = load_mask_matrix(args.mask)
        if mask.shape != table.cells.shape:
            raise CliError(
                f"mask shape {mask.shape} does not match table {table.cells.shape}"
            )
    else:
        mask = table.missing_mask()
    opts = {}
    if args.config:
        opts = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(opts, dict):
            raise CliError("--config must hold a JSON object of option keys")
    result = run_method(table, mask, args.method, seed=args.seed, opts=opts)
    out_path = Path(args.output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_csv(table.with_cells(result.completed), out_path)
    report = {
        "command": "impute",
        "method": args.method,
        "seed": args.seed,
        "version": __version__,
        "wall_time_s": result.wall_time_s,
        "params": _jsonable(result.params),
    }
    if args.truth:
        truth = load_csv(args.truth)
        if truth.cells.shape != table.cells.shape:
            raise CliError("--truth shape does not match the input table")
        mr = evaluate(truth, result.completed, mask, wall_time_s=result.wall_time_s)
        report["metrics"] = json.loads(mr.to_json())
    report_path = out_path.with_suffix(".report.json")
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
    print(f"wrote {out_path} and {report_path}")
    return 0


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _load_bench_config(path: Path) -> dict:
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read bench config {path}: {exc}") from exc
    for key in ("methods", "rates", "n_reps", "base_seed"):
        if key not in cfg:
            raise CliError(f"bench config missing required key {key!r}")
    bad = [m for m in cfg["methods"] if m not in method_ids()]
    if bad:
        raise CliError(f"bench config lists unknown methods: {bad}")
    if not all(0 < r <= 0.5 for r in cfg["rates"]):
        raise CliError("bench config rates must lie in (0, 0.5]")
    return cfg


def _cmd_bench(args) -> int:
    cfg_path = Path(args.config)
    cfg = _load_bench_config(cfg_path)
    manifest = cfg.get("manifest", "manifest.json")
    manifest_path = Path(manifest)
    if not manifest_path.is_absolute():
        manifest_path = cfg_path.parent / manifest_path
    datasets = load_manifest(manifest_path, names=cfg.get("datasets"))
    methods = cfg["methods"]
    rates = [float(r) for r in cfg["rates"]]
    n_reps = int(cfg["n_reps"])
    n_cells = len(datasets) * len(methods) * len(rates) * n_reps
    if args.dry_run:
        print(f"bench plan: {len(datasets)} datasets x {len(methods)} methods x "
              f"{len(rates)} rates x {n_reps} replicates = {n_cells} cells")
        for t in datasets:
            print(f"  dataset {t.name}: {t.n_rows} rows x {t.n_cols} cols")
        print(f"  methods: {', '.join(methods)}")
        print(f"  rates: {', '.join(f'{r:g}' for r in rates)}")
        return 0
    workers = args.workers if args.workers is not None else int(cfg.get("workers", 1))
    t0 = time.perf_counter()
    grid = run_grid(
        datasets, methods, rates, n_reps,
        base_seed=int(cfg["base_seed"]),
        mechanism=cfg.get("mechanism", "mar"),
        workers=workers,
        method_opts=cfg.get("method_opts") or {},
        sinkhorn=cfg.get("sinkhorn") or {},
    )
    elapsed = time.perf_counter() - t0
    out_dir = Path(args.out)
    paths = emit_report(grid, out_dir)
    run_manifest = {
        "command": "bench",
        "config_path": str(cfg_path),
        "config_fingerprint": grid.fingerprint,
        "seed": int(cfg["base_seed"]),
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "elapsed_s": elapsed,
        "workers": workers,
    }
    (out_dir / "run_manifest.json").write_text(
        json.dumps(run_manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    ranks = rank_best(aggregate(grid))
    if ranks:
        print(f"{'dataset':<14} {'rank':<12} {'method':<15} "
              f"{'nrmse':>9} {'sinkhorn':>9} {'mae':>9} {'pev':>9} {'mmd':>9}")
        for r in ranks:
            print(f"{r['dataset']:<14} {r['rank']:<12} {r['method']:<15} "
                  f"{r['nrmse']:>9.4f} {r['sinkhorn']:>9.4f} {r['mae']:>9.4f} "
                  f"{r['pev']:>9.4f} {r['mmd']:>9.4f}")
    n_failed = len(grid.failures)
    print(f"\n{n_cells - n_failed}/{n_cells} cells succeeded in {elapsed:.1f}s; "
          f"reports in {out_dir}")
    if n_failed:
        for c in grid.failures[:10]:
            print(f"  FAILED {c.dataset}/{c.method}/rate={c.rate}/rep={c.replicate}: {c.error}")
        return PARTIAL_FAILURE
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="imputekit",
        description="Tabular missing-data imputation toolkit and benchmark harness.",
    )
    p.add_argument("--version", action="version", version=f"imputekit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("datasets", help="inspect bundled or external dataset manifests")
    d.add_argument("action", choices=["list"], help="what to do")
    d.add_argument("--manifest", help="manifest path (default: bundled)")
    d.set_defaults(fn=_cmd_datasets)

    a = sub.add_parser("ampute", help="remove cells from a complete dataset")
    a.add_argument("input", help="complete CSV to ampute")
    a.add_argument("--rate", type=float, required=True, help="target missing fraction (0, 0.5]")
    a.add_argument("--mechanism", default="mar", help="mcar or mar")
    a.add_argument("--seed", type=int, default=0, help="mask seed")
    a.add_argument("--out-prefix", required=True,
                   help="prefix for .amputed.csv, .mask.csv, and .json outputs")
    a.set_defaults(fn=_cmd_ampute)

    i = sub.add_parser("impute", help="fill the missing cells of a dataset")
    i.add_argument("input", help="holed CSV to impute")
    i.add_argument("output", help="completed CSV to write")
    i.add_argument("--method", required=True,
                   help=f"one of: {', '.join(sorted(method_ids()))}")
    i.add_argument("--mask", help="0/1 mask CSV (default: the input's missing cells)")
    i.add_argument("--truth", help="ground-truth CSV; adds metrics to the report")
    i.add_argument("--config", help="JSON file of method options")
    i.add_argument("--seed", type=int, default=0, help="method seed")
    i.set_defaults(fn=_cmd_impute)

    b = sub.add_parser("bench", help="run the benchmark grid from a config file")
    b.add_argument("--config", required=True, help="bench config JSON (e.g. desk.json)")
    b.add_argument("--out", required=True, help="output directory for reports")
    b.add_argument("--dry-run", action="store_true", help="print the plan and exit")
    b.add_argument("--workers", type=int, help="override the config worker count")
    b.set_defaults(fn=_cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
