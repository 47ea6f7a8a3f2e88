"""Column-typed tabular data with optional (missing) cells.

A table is an n x d float64 matrix where NaN marks a missing cell. Columns
are either continuous or discrete; discrete columns take integer values from
a finite category set. Kinds are inferred at load time (all-integer values
with at most DISCRETE_MAX_CARDINALITY distinct values => discrete) unless a
schema override is given.

Tables are frozen after construction and all operations here are pure, so
instances can be shared freely across threads and worker processes.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MISSING_TOKENS = ("", "NA")
DISCRETE_MAX_CARDINALITY = 20

CONTINUOUS = "continuous"
DISCRETE = "discrete"


class SchemaError(ValueError):
    """Structural problem with a dataset (shape, header, column kinds)."""


class ParseError(ValueError):
    """A data cell could not be parsed as a number."""


@dataclass(frozen=True)
class StatBundle:
    """Summary statistics of a column's observed cells.

    Quantiles use linear interpolation between order statistics; std is the
    sample (n-1) convention; mode ties break to the smallest value.
    """

    mean: float
    median: float
    mode: float
    std: float
    min: float
    max: float
    q05: float
    q25: float
    q75: float
    q95: float
    missing_ratio: float


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    kind: str  # CONTINUOUS or DISCRETE
    category_set: tuple[int, ...]  # empty for continuous columns
    stats: StatBundle


@dataclass(frozen=True)
class DataTable:
    name: str
    columns: tuple[ColumnMeta, ...]
    cells: np.ndarray  # n_rows x n_cols float64, NaN = missing

    def __post_init__(self):
        if self.cells.ndim != 2:
            raise SchemaError("cells must be a 2-D matrix")
        n, d = self.cells.shape
        if n < 1:
            raise SchemaError("table needs at least one row")
        if d < 2:
            raise SchemaError(f"table needs at least 2 columns, got {d}")
        if d != len(self.columns):
            raise SchemaError("column metadata does not match cell matrix width")
        self.cells.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.cells.shape[0]

    @property
    def n_cols(self) -> int:
        return self.cells.shape[1]

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(c.kind for c in self.columns)

    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.cells)

    def observed(self, col: int) -> np.ndarray:
        v = self.cells[:, col]
        return v[~np.isnan(v)]

    @classmethod
    def from_cells(
        cls,
        name: str,
        cells: np.ndarray,
        column_names: list[str] | None = None,
        kinds: dict[str, str] | None = None,
    ) -> "DataTable":
        """Build a table from a raw matrix, inferring metadata.

        `kinds` maps column names to kind overrides; unlisted columns are
        inferred.
        """
        cells = np.array(cells, dtype=float)
        if column_names is None:
            column_names = [f"c{j}" for j in range(cells.shape[1])]
        metas = []
        for j, cname in enumerate(column_names):
            override = (kinds or {}).get(cname)
            metas.append(_make_meta(cname, cells[:, j], override))
        return cls(name=name, columns=tuple(metas), cells=cells)

    def with_cells(self, cells: np.ndarray, name: str | None = None) -> "DataTable":
        """New table over different cells, keeping column names and kinds."""
        kinds = {c.name: c.kind for c in self.columns}
        return DataTable.from_cells(
            name if name is not None else self.name,
            cells,
            list(self.column_names),
            kinds=kinds,
        )


def infer_kind(observed: np.ndarray) -> str:
    """Discrete iff every observed value is an integer and cardinality <= 20."""
    if observed.size == 0:
        return CONTINUOUS
    if not np.all(observed == np.floor(observed)):
        return CONTINUOUS
    if np.unique(observed).size > DISCRETE_MAX_CARDINALITY:
        return CONTINUOUS
    return DISCRETE


def _make_meta(name: str, values: np.ndarray, kind_override: str | None) -> ColumnMeta:
    obs = values[~np.isnan(values)]
    kind = kind_override if kind_override else infer_kind(obs)
    if kind not in (CONTINUOUS, DISCRETE):
        raise SchemaError(f"unknown column kind {kind!r} for column '{name}'")
    if kind == DISCRETE:
        cats = tuple(int(v) for v in np.unique(obs))
    else:
        cats = ()
    stats = compute_stats(values) if obs.size else None
    if stats is None:
        # fully-missing column: stats are computed lazily and column_stats
        # raises; keep a placeholder with missing_ratio 1.
        stats = StatBundle(*([float("nan")] * 10), missing_ratio=1.0)
    return ColumnMeta(name=name, kind=kind, category_set=cats, stats=stats)


def compute_stats(values: np.ndarray) -> StatBundle:
    """Statistics over the observed cells of one column."""
    values = np.asarray(values, dtype=float)
    obs = values[~np.isnan(values)]
    if obs.size == 0:
        raise ValueError("no observed values")
    uniq, counts = np.unique(obs, return_counts=True)
    mode = float(uniq[np.argmax(counts)])  # argmax takes the first (smallest)
    std = float(np.std(obs, ddof=1)) if obs.size > 1 else 0.0
    q05, q25, med, q75, q95 = (
        float(np.quantile(obs, p)) for p in (0.05, 0.25, 0.5, 0.75, 0.95)
    )
    return StatBundle(
        mean=float(np.mean(obs)),
        median=med,
        mode=mode,
        std=std,
        min=float(np.min(obs)),
        max=float(np.max(obs)),
        q05=q05,
        q25=q25,
        q75=q75,
        q95=q95,
        missing_ratio=float(np.isnan(values).sum() / values.size),
    )


def column_stats(table: DataTable, col: int) -> StatBundle:
    """Statistics of one column; raises on a fully-missing column."""
    return compute_stats(table.cells[:, col])


def load_csv(
    path: str | Path,
    schema: dict[str, str] | None = None,
    name: str | None = None,
) -> DataTable:
    """Load a UTF-8 CSV with a header row; empty fields and "NA" are missing.

    `schema` optionally overrides inferred column kinds by column name.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        if len(header) < 2:
            raise SchemaError(f"{path}: need at least 2 columns, got {len(header)}")
        rows = []
        for i, row in enumerate(reader):
            if len(row) != len(header):
                raise ParseError(
                    f"{path}: row {i + 1} has {len(row)} fields, expected {len(header)}"
                )
            vals = []
            for j, tok in enumerate(row):
                tok = tok.strip()
                if tok in MISSING_TOKENS:
                    vals.append(np.nan)
                    continue
                try:
                    vals.append(float(tok))
                except ValueError:
                    raise ParseError(
                        f"{path}: non-numeric value {tok!r} at row {i + 1}, "
                        f"column '{header[j]}'"
                    ) from None
            rows.append(vals)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    if schema:
        unknown = set(schema) - set(header)
        if unknown:
            raise SchemaError(f"{path}: schema overrides for unknown columns {sorted(unknown)}")
    cells = np.array(rows, dtype=float)
    return DataTable.from_cells(
        name if name is not None else path.stem, cells, list(header), kinds=schema
    )


def format_cell(v: float) -> str:
    """Shortest round-trip decimal text; integral values drop the fraction."""
    if np.isnan(v):
        return ""
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def save_csv(table: DataTable, path: str | Path) -> None:
    """Write a table back to CSV (missing cells become empty fields)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(table.column_names)
        for i in range(table.n_rows):
            writer.writerow([format_cell(v) for v in table.cells[i]])


def standardize(table: DataTable) -> tuple[DataTable, list[tuple[float, float]]]:
    """Per-column z-scoring of observed cells.

    Returns the transformed table and the applied (shift, scale) per column,
    so destandardize(standardize(t)) round-trips. Zero-std columns pass
    through unchanged and record (0, 1). Every column needs >= 2 observed
    values.
    """
    cells = np.array(table.cells, dtype=float)
    record: list[tuple[float, float]] = []
    for j in range(table.n_cols):
        col = cells[:, j]
        obs = col[~np.isnan(col)]
        if obs.size < 2:
            raise ValueError(
                f"standardize: column '{table.columns[j].name}' needs >= 2 observed values"
            )
        mu = float(np.mean(obs))
        sd = float(np.std(obs, ddof=1))
        if sd == 0.0:
            record.append((0.0, 1.0))
            continue
        cells[:, j] = (col - mu) / sd
        record.append((mu, sd))
    return table.with_cells(cells), record


def destandardize(table: DataTable, record: list[tuple[float, float]]) -> DataTable:
    """Invert `standardize` using its (shift, scale) record."""
    cells = np.array(table.cells, dtype=float)
    for j, (mu, sd) in enumerate(record):
        cells[:, j] = cells[:, j] * sd + mu
    return table.with_cells(cells)
