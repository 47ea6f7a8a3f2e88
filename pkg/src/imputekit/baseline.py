"""Statistical, distance-based, and chained-regression imputers.

Every imputer takes a holed table plus the boolean mask of cells to fill
(True = missing) and returns an ImputationResult whose completed matrix
preserves observed cells bit-exactly, contains no missing entries, and keeps
discrete columns inside their observed category sets.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .amputation import derive_seed
from .data_model import CONTINUOUS, DISCRETE, DataTable, compute_stats

STATISTIC_KINDS = ("mean", "median", "mode")


class ImputationError(RuntimeError):
    """An imputer could not produce values (numeric failure, empty column)."""


@dataclass
class ImputationResult:
    completed: np.ndarray
    method: str
    wall_time_s: float
    params: dict = field(default_factory=dict)


def nearest_category(values: np.ndarray, categories: np.ndarray) -> np.ndarray:
    """Snap each value to the closest category; ties go to the smaller one."""
    cats = np.asarray(categories, dtype=float)
    dist = np.abs(values[:, None] - cats[None, :])
    return cats[np.argmin(dist, axis=1)]  # argmin ties -> first -> smaller


def snap_to_categories(cells: np.ndarray, table: DataTable, mask: np.ndarray) -> np.ndarray:
    """Force imputed discrete cells onto their column's category set."""
    out = np.array(cells, dtype=float)
    for j, meta in enumerate(table.columns):
        if meta.kind != DISCRETE or not meta.category_set:
            continue
        sel = mask[:, j]
        if sel.any():
            out[sel, j] = nearest_category(out[sel, j], np.array(meta.category_set))
    return out


def column_statistic(table: DataTable, j: int, kind: str) -> float:
    obs = table.observed(j)
    if obs.size == 0:
        raise ImputationError(
            f"column '{table.columns[j].name}' has no observed values"
        )
    if kind == "mean":
        return float(np.mean(obs))
    if kind == "median":
        return float(np.median(obs))
    if kind == "mode":
        uniq, counts = np.unique(obs, return_counts=True)
        return float(uniq[np.argmax(counts)])
    raise ValueError(f"unknown statistic {kind!r}")


def initial_fill(table: DataTable, mask: np.ndarray) -> np.ndarray:
    """Mean (continuous) / mode (discrete) starting fill used by iterative
    imputers."""
    fill = np.array(table.cells, dtype=float)
    for j, meta in enumerate(table.columns):
        sel = mask[:, j]
        if not sel.any():
            continue
        kind = "mode" if meta.kind == DISCRETE else "mean"
        fill[sel, j] = column_statistic(table, j, kind)
    return fill


def _finalize(table, mask, filled, method, t0, params) -> ImputationResult:
    completed = np.array(filled, dtype=float)
    completed[~mask] = table.cells[~mask]
    if np.isnan(completed).any():
        raise ImputationError(f"{method}: output still contains missing cells")
    return ImputationResult(
        completed=completed,
        method=method,
        wall_time_s=time.perf_counter() - t0,
        params=params,
    )


def impute_statistical(table: DataTable, mask: np.ndarray, kind: str) -> ImputationResult:
    """Fill each masked cell with its column's mean, median, or mode.

    Mean/median on discrete columns are rounded to the nearest category.
    """
    if kind not in STATISTIC_KINDS:
        raise ValueError(f"kind must be one of {STATISTIC_KINDS}, got {kind!r}")
    t0 = time.perf_counter()
    fill = np.array(table.cells, dtype=float)
    values = {}
    for j, meta in enumerate(table.columns):
        sel = mask[:, j]
        if not sel.any():
            continue
        v = column_statistic(table, j, kind)
        if meta.kind == DISCRETE and kind in ("mean", "median"):
            v = float(nearest_category(np.array([v]), np.array(meta.category_set))[0])
        values[meta.name] = v
        fill[sel, j] = v
    return _finalize(table, mask, fill, kind, t0, {"fill_values": values})


def default_k(n: int) -> int:
    return max(1, int(round(math.sqrt(n))))


def _standardized_cells(table: DataTable) -> np.ndarray:
    """Observed-cell z-scores (zero-std columns untouched); NaN kept."""
    cells = np.array(table.cells, dtype=float)
    for j in range(table.n_cols):
        col = cells[:, j]
        obs = col[~np.isnan(col)]
        if obs.size < 2:
            continue
        sd = float(np.std(obs, ddof=1))
        if sd > 0:
            cells[:, j] = (col - float(np.mean(obs))) / sd
    return cells


def nan_distances(cells_std: np.ndarray) -> np.ndarray:
    """Pairwise Euclidean distances over co-observed features, scaled by
    sqrt(d / #co-observed); inf where two rows share no feature."""
    n, d = cells_std.shape
    obs = ~np.isnan(cells_std)
    z = np.where(obs, cells_std, 0.0)
    o = obs.astype(float)
    z2 = z * z
    # sum over co-observed of (x_i - x_j)^2, via three rank-1 style products
    d2 = (z2 @ o.T) + (o @ z2.T) - 2.0 * (z @ z.T)
    co = o @ o.T
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = d2 * (d / co)
    d2[co == 0] = np.inf
    np.fill_diagonal(d2, np.inf)  # a row is never its own neighbor
    return np.sqrt(np.maximum(d2, 0.0))


def impute_knn(table: DataTable, mask: np.ndarray, k: int | None = None) -> ImputationResult:
    """k-nearest-rows imputation; k defaults to round(sqrt(n)).

    Distances are Euclidean over co-observed standardized features.
    Continuous cells take the unweighted mean of the k nearest rows observed
    in the column; discrete cells take the majority vote (ties to the
    smallest). Rows with no usable neighbor fall back to the column
    statistic, recorded in params.
    """
    t0 = time.perf_counter()
    n = table.n_rows
    k = default_k(n) if k is None else int(k)
    if k < 1:
        raise ValueError("k must be >= 1")
    fill = np.array(table.cells, dtype=float)
    D = nan_distances(_standardized_cells(table))
    fallbacks = []
    for j, meta in enumerate(table.columns):
        sel = mask[:, j]
        if not sel.any():
            continue
        donors = np.flatnonzero(~np.isnan(table.cells[:, j]) & ~sel)
        stat_kind = "mode" if meta.kind == DISCRETE else "mean"
        col_stat = None
        for i in np.flatnonzero(sel):
            usable = donors[np.isfinite(D[i, donors])]
            if usable.size == 0:
                if col_stat is None:
                    col_stat = column_statistic(table, j, stat_kind)
                fill[i, j] = col_stat
                fallbacks.append((int(i), meta.name))
                continue
            order = usable[np.argsort(D[i, usable], kind="stable")]
            nearest = order[: min(k, order.size)]
            vals = table.cells[nearest, j]
            if meta.kind == DISCRETE:
                uniq, counts = np.unique(vals, return_counts=True)
                fill[i, j] = float(uniq[np.argmax(counts)])
            else:
                fill[i, j] = float(np.mean(vals))
    params = {"k": k}
    if fallbacks:
        params["fallbacks"] = fallbacks
    return _finalize(table, mask, fill, "knn", t0, params)


def _ridge_fit_predict(A_fit, b_fit, A_pred, ridge, col_name):
    """Least squares with an unpenalized intercept and ridge on the rest."""
    ones_fit = np.column_stack([np.ones(len(A_fit)), A_fit])
    ones_pred = np.column_stack([np.ones(len(A_pred)), A_pred])
    g = ones_fit.T @ ones_fit
    pen = np.eye(g.shape[0]) * ridge
    pen[0, 0] = 0.0
    try:
        beta = np.linalg.solve(g + pen, ones_fit.T @ b_fit)
    except np.linalg.LinAlgError as exc:
        raise ImputationError(f"mice: singular design for column '{col_name}'") from exc
    if not np.all(np.isfinite(beta)):
        raise ImputationError(f"mice: singular design for column '{col_name}'")
    return ones_pred @ beta


def impute_mice(
    table: DataTable,
    mask: np.ndarray,
    n_iter: int = 10,
    ridge: float = 1e-3,
    seed: int = 0,
    init_noise: float = 0.1,
) -> ImputationResult:
    """Chained ridge regressions, each incomplete column on all others.

    Masked cells start at the column mean/mode plus seeded Gaussian noise
    (init_noise in units of the column std, continuous columns only), which
    is what makes repeated runs distinct for the repeated-run aggregator.
    Sweeps stop early when the largest standardized cell change drops below
    1e-4.
    """
    t0 = time.perf_counter()
    if table.n_cols < 2:
        raise ValueError("mice needs at least 2 columns")
    rng = np.random.default_rng(seed)
    fill = initial_fill(table, mask)
    stds = np.ones(table.n_cols)
    for j, meta in enumerate(table.columns):
        obs = table.observed(j)
        sd = float(np.std(obs, ddof=1)) if obs.size > 1 else 0.0
        stds[j] = sd if sd > 0 else 1.0
        sel = mask[:, j]
        if init_noise > 0 and meta.kind == CONTINUOUS and sel.any():
            fill[sel, j] += init_noise * stds[j] * rng.standard_normal(sel.sum())
    incomplete = [j for j in range(table.n_cols) if mask[:, j].any()]
    changes = []
    sweeps = 0
    for _ in range(n_iter):
        sweeps += 1
        max_change = 0.0
        for j in incomplete:
            meta = table.columns[j]
            miss = mask[:, j]
            obs_rows = ~miss
            others = [c for c in range(table.n_cols) if c != j]
            pred = _ridge_fit_predict(
                fill[obs_rows][:, others],
                table.cells[obs_rows, j],
                fill[miss][:, others],
                ridge,
                meta.name,
            )
            if meta.kind == DISCRETE:
                pred = nearest_category(pred, np.array(meta.category_set))
            delta = np.abs(pred - fill[miss, j]).max() / stds[j] if miss.any() else 0.0
            max_change = max(max_change, float(delta))
            fill[miss, j] = pred
        changes.append(max_change)
        if max_change < 1e-4:
            break
    return _finalize(
        table, mask, fill, "mice", t0,
        {"sweeps": sweeps, "max_changes": changes, "ridge": ridge, "seed": seed},
    )


def impute_sice(
    table: DataTable,
    mask: np.ndarray,
    n_runs: int = 5,
    seed: int = 0,
    n_iter: int = 10,
    ridge: float = 1e-3,
    init_noise: float = 0.1,
) -> ImputationResult:
    """Aggregate of repeated chained-equation runs with derived seeds.

    Continuous cells average across runs; discrete cells take the
    across-run mode. Per-cell spread across runs is summarized in params.
    """
    t0 = time.perf_counter()
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    runs = []
    for r in range(n_runs):
        res = impute_mice(
            table, mask,
            n_iter=n_iter, ridge=ridge,
            seed=derive_seed(seed, "sice", r),
            init_noise=init_noise,
        )
        runs.append(res.completed)
    stack = np.stack(runs)
    fill = stack.mean(axis=0)
    for j, meta in enumerate(table.columns):
        if meta.kind != DISCRETE:
            continue
        sel = mask[:, j]
        for i in np.flatnonzero(sel):
            uniq, counts = np.unique(stack[:, i, j], return_counts=True)
            fill[i, j] = float(uniq[np.argmax(counts)])
    cell_var = stack.var(axis=0, ddof=0)[mask]
    params = {
        "n_runs": n_runs,
        "cell_variance": {
            "mean": float(cell_var.mean()) if cell_var.size else 0.0,
            "max": float(cell_var.max()) if cell_var.size else 0.0,
            "n_cells": int(cell_var.size),
        },
    }
    return _finalize(table, mask, fill, "sice", t0, params)


COMBINED_VARIANTS = ("mice_knn_average", "typed_split")


def impute_combined(
    table: DataTable,
    mask: np.ndarray,
    variant: str = "mice_knn_average",
    seed: int = 0,
    k: int | None = None,
) -> ImputationResult:
    """Fusions of the chained-regression and nearest-neighbor imputers.

    mice_knn_average: continuous cells are the arithmetic mean of both
    imputers, discrete cells come from KNN. typed_split: discrete columns
    from KNN, continuous columns from the chained regressions.
    """
    if variant not in COMBINED_VARIANTS:
        raise ValueError(f"variant must be one of {COMBINED_VARIANTS}, got {variant!r}")
    t0 = time.perf_counter()
    res_mice = impute_mice(table, mask, seed=derive_seed(seed, "combined"))
    res_knn = impute_knn(table, mask, k=k)
    fill = np.array(table.cells, dtype=float)
    for j, meta in enumerate(table.columns):
        sel = mask[:, j]
        if not sel.any():
            continue
        if meta.kind == DISCRETE:
            fill[sel, j] = res_knn.completed[sel, j]
        elif variant == "mice_knn_average":
            fill[sel, j] = 0.5 * (res_mice.completed[sel, j] + res_knn.completed[sel, j])
        else:
            fill[sel, j] = res_mice.completed[sel, j]
    method = "combined_avg" if variant == "mice_knn_average" else "combined_typed"
    params = {"variant": variant, "mice": res_mice.params, "knn": res_knn.params}
    return _finalize(table, mask, fill, method, t0, params)
