"""Synthetic dataset generators and the bundled fixture set.

Live downloads are out of scope, so the toolkit ships deterministic
synthetic stand-ins: a correlated Gaussian table, a mixed
continuous/discrete table driven by a shared latent factor, and a
concrete-mixture-shaped table (1030 x 9, all continuous). Values are
written with fixed decimals so CSV round-trips are bit-exact.

A JSON manifest lists each fixture with its expected shape and column
kinds; `load_manifest` validates those expectations at load time.
"""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .data_model import DataTable, SchemaError, load_csv, save_csv

DEFAULT_FIXTURE_SEED = 7


def make_correlated_gaussian(
    n: int = 1000,
    d: int = 8,
    rho: float = 0.7,
    seed: int = DEFAULT_FIXTURE_SEED,
    decimals: int = 2,
    name: str = "gauss_corr",
) -> DataTable:
    """Equicorrelated Gaussian features (pairwise correlation rho)."""
    rng = np.random.default_rng(seed)
    cov = np.full((d, d), rho)
    np.fill_diagonal(cov, 1.0)
    cells = rng.standard_normal((n, d)) @ np.linalg.cholesky(cov).T
    cells = np.round(cells, decimals)
    return DataTable.from_cells(name, cells, [f"x{j}" for j in range(d)])


def make_mixed(
    n: int = 500,
    n_continuous: int = 4,
    n_discrete: int = 2,
    seed: int = DEFAULT_FIXTURE_SEED,
    name: str = "mixed",
) -> DataTable:
    """Mixed-kind table: one latent factor drives every column."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n)
    cols, names, kinds = [], [], {}
    for j in range(n_continuous):
        load = 0.6 + 0.3 * rng.random()
        scale = float(rng.uniform(0.5, 20.0))
        shift = float(rng.uniform(-5.0, 25.0))
        x = shift + scale * (load * z + np.sqrt(1 - load**2) * rng.standard_normal(n))
        cols.append(np.round(x, 2))
        names.append(f"c{j}")
    for j in range(n_discrete):
        k = int(rng.integers(3, 7))
        load = 0.7
        latent = load * z + np.sqrt(1 - load**2) * rng.standard_normal(n)
        edges = np.quantile(latent, np.linspace(0, 1, k + 1)[1:-1])
        cols.append(np.digitize(latent, edges).astype(float))
        names.append(f"g{j}")
        kinds[f"g{j}"] = "discrete"
    cells = np.column_stack(cols)
    return DataTable.from_cells(name, cells, names, kinds=kinds)


def make_concrete_like(seed: int = DEFAULT_FIXTURE_SEED, name: str = "concrete") -> DataTable:
    """Concrete-mixture-shaped table: 1030 rows, 9 continuous columns."""
    rng = np.random.default_rng(seed)
    n = 1030
    z = rng.standard_normal(n)
    spec = [
        ("cement", 280.0, 100.0, 0.6),
        ("slag", 75.0, 60.0, -0.3),
        ("ash", 55.0, 40.0, -0.2),
        ("water", 181.0, 21.0, -0.4),
        ("superplasticizer", 6.2, 4.0, 0.3),
        ("coarse_aggregate", 972.0, 77.0, -0.1),
        ("fine_aggregate", 773.0, 80.0, -0.2),
        ("age", 45.0, 60.0, 0.1),
        ("strength", 35.8, 16.0, 0.8),
    ]
    cols = []
    for _, mu, sd, load in spec:
        noise = rng.standard_normal(n)
        x = mu + sd * (load * z + np.sqrt(1 - load**2) * noise)
        x = np.maximum(x, 0.0)
        cols.append(np.round(x, 2))
    # age in days, positive and right-skewed like curing schedules
    cols[7] = np.round(np.exp(rng.normal(3.0, 1.0, size=n)) + 1.0, 2)
    cells = np.column_stack(cols)
    kinds = {nm: "continuous" for nm, *_ in spec}
    return DataTable.from_cells(name, cells, [nm for nm, *_ in spec], kinds=kinds)


DESK_METHODS = [
    "mean", "median", "mode", "knn", "mice", "sice",
    "combined_avg", "combined_typed", "missforest", "autoencoder", "pain",
]

DESK_CONFIG = {
    "manifest": "manifest.json",
    "datasets": ["gauss_corr", "mixed"],
    "methods": DESK_METHODS,
    "rates": [0.05, 0.10, 0.20, 0.30, 0.40],
    "n_reps": 5,
    "base_seed": 7,
    "mechanism": "mar",
    "workers": 4,
    "sinkhorn": {"epsilon": 0.1, "max_iter": 300, "tolerance": 1e-6},
    "method_opts": {},
}


def fixture_tables() -> list[DataTable]:
    return [
        make_correlated_gaussian(n=600, name="gauss_corr"),
        make_mixed(name="mixed"),
        make_concrete_like(),
    ]


def write_fixture_set(out_dir: str | Path) -> Path:
    """Write the fixture CSVs, manifest.json, and desk.json bench config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for table in fixture_tables():
        path = out / f"{table.name}.csv"
        save_csv(table, path)
        entries.append({
            "name": table.name,
            "path": f"{table.name}.csv",
            "rows": table.n_rows,
            "cols": table.n_cols,
            "kinds": list(table.kinds),
        })
    manifest = out / "manifest.json"
    manifest.write_text(
        json.dumps({"datasets": entries}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    (out / "desk.json").write_text(
        json.dumps(DESK_CONFIG, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest


def load_manifest(path: str | Path, names: list[str] | None = None) -> list[DataTable]:
    """Load manifest datasets, checking shape and kind expectations."""
    path = Path(path)
    spec = json.loads(path.read_text(encoding="utf-8"))
    tables = []
    for entry in spec["datasets"]:
        if names is not None and entry["name"] not in names:
            continue
        csv_path = path.parent / entry["path"]
        kinds = dict(zip(
            _csv_header(csv_path), entry["kinds"]
        )) if "kinds" in entry else None
        table = load_csv(csv_path, schema=kinds, name=entry["name"])
        if table.n_rows != entry["rows"] or table.n_cols != entry["cols"]:
            raise SchemaError(
                f"{entry['name']}: expected {entry['rows']}x{entry['cols']}, "
                f"got {table.n_rows}x{table.n_cols}"
            )
        tables.append(table)
    if names is not None:
        missing = set(names) - {t.name for t in tables}
        if missing:
            raise SchemaError(f"manifest {path} lacks datasets: {sorted(missing)}")
    return tables


def _csv_header(path: Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return fh.readline().strip().split(",")


def bundled_data_dir() -> Path:
    """Directory with the packaged fixture CSVs and configs."""
    return Path(resources.files(__package__) / "data")


if __name__ == "__main__":
    import sys

    target = sys.argv[1] if len(sys.argv) > 1 else str(bundled_data_dir())
    manifest = write_fixture_set(target)
    print(f"wrote fixtures to {manifest.parent}")
