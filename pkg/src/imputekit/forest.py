"""Decision trees, random forests, and forest-based imputation.

Trees are grown greedily on bootstrap samples with a uniform feature subset
re-drawn at every split. Split candidates are midpoints between consecutive
distinct sorted values; the criterion is variance reduction for regression
and Gini impurity for classification. Nodes are stored as flat arrays so
prediction is a vectorized level walk.

The growth loop is written as a single iterative kernel that numba compiles
when available (the pure-Python body is the fallback, same semantics).
Every random draw (bootstrap rows, per-node feature keys) happens up front
with numpy generators, so fitted trees are bit-identical across backends
and depend only on (seed, tree index).

`impute_missforest` is the iterative chained-forest imputer: columns are
visited in ascending-missingness order, each regressed (or classified) on
all others, until the round-over-round difference criterion first increases,
at which point the previous round's fill is returned.
"""
from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from .amputation import derive_seed
from .data_model import CONTINUOUS, DISCRETE, DataTable
from .baseline import ImputationResult, initial_fill, snap_to_categories

REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 10
    min_samples_leaf: int = 5
    mtry: int | None = None  # None -> round(sqrt(d)) at fit time
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")

    def resolve_mtry(self, d: int) -> int:
        m = self.mtry if self.mtry is not None else int(round(math.sqrt(d)))
        return max(1, min(m, d))


@dataclass(frozen=True)
class DecisionTree:
    """Flat-array binary tree. feature == -1 marks a leaf."""

    task: str
    feature: np.ndarray  # int, -1 for leaves
    threshold: np.ndarray  # float
    left: np.ndarray  # int node index
    right: np.ndarray  # int node index
    value: np.ndarray  # leaf prediction (class code for classification)
    n_samples: np.ndarray  # training rows that reached the node
    depth: np.ndarray  # node depth

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            interior = self.feature[node] >= 0
            if not interior.any():
                break
            idx = np.flatnonzero(interior)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
        return self.value[node]


@dataclass(frozen=True)
class Forest:
    task: str
    trees: tuple[DecisionTree, ...]
    classes: tuple[int, ...] = ()  # category values, classification only
    config: ForestConfig | None = None


def _grow_tree_kernel(
    X, y, is_classification, n_classes, max_depth, min_leaf, mtry, feat_keys,
    feature, threshold, left, right, value, n_samples, depth,
):
    """Iterative CART growth over a row-index workspace.

    Rows live in `idx`; each node owns a contiguous [start, end) range that
    gets partitioned in place when the node splits. Feature subsets come
    from `feat_keys` (one random key row per node slot): the mtry smallest
    keys form the subset, so the draw is uniform and fully precomputed.
    Returns the number of nodes written into the output arrays.
    """
    n = X.shape[0]
    d = X.shape[1]
    idx = np.arange(n)
    buf = np.empty(n, dtype=np.int64)
    xs = np.empty(n)
    ys = np.empty(n)
    yc = np.empty(n, dtype=np.int64)
    cnt_l = np.zeros(n_classes, dtype=np.int64)
    cnt_r = np.zeros(n_classes, dtype=np.int64)
    counts = np.zeros(n_classes, dtype=np.int64)
    # stack rows: start, end, depth, parent slot, is_left
    cap = 4 * (n // min_leaf + 2)
    stack = np.empty((cap, 5), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = n
    stack[0, 2] = 0
    stack[0, 3] = -1
    stack[0, 4] = 0
    top = 1
    n_nodes = 0
    while top > 0:
        top -= 1
        start = stack[top, 0]
        end = stack[top, 1]
        dep = stack[top, 2]
        parent = stack[top, 3]
        is_left = stack[top, 4]
        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if is_left == 1:
                left[parent] = node
            else:
                right[parent] = node
        m = end - start
        n_samples[node] = m
        depth[node] = dep
        ymin = y[idx[start]]
        ymax = ymin
        for t in range(start + 1, end):
            v = y[idx[t]]
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        best_score = np.inf
        best_feat = -1
        best_thr = 0.0
        if dep < max_depth and m >= 2 * min_leaf and ymin < ymax:
            # mtry features with the smallest random keys (uniform subset)
            keys = feat_keys[node % feat_keys.shape[0]]
            forder = np.argsort(keys)
            for fi in range(mtry):
                f = forder[fi]
                for t in range(m):
                    xs[t] = X[idx[start + t], f]
                order = np.argsort(xs[:m], kind="mergesort")
                if is_classification:
                    for c in range(n_classes):
                        cnt_l[c] = 0
                        cnt_r[c] = 0
                    for t in range(m):
                        yc[t] = int(y[idx[start + order[t]]])
                        cnt_r[yc[t]] += 1
                    left_sq = 0.0
                    right_sq = 0.0
                    for c in range(n_classes):
                        right_sq += cnt_r[c] * cnt_r[c]
                    for t in range(m - 1):
                        c = yc[t]
                        # moving one item of class c across the split changes
                        # each side's sum of squared counts by +-(2*cnt)+-1
                        left_sq += 2.0 * cnt_l[c] + 1.0
                        cnt_l[c] += 1
                        right_sq += -2.0 * cnt_r[c] + 1.0
                        cnt_r[c] -= 1
                        if t + 1 < min_leaf or m - t - 1 < min_leaf:
                            continue
                        xa = xs[order[t]]
                        xb = xs[order[t + 1]]
                        if xa >= xb:
                            continue
                        k = t + 1.0
                        # weighted Gini up to constants: lower is better
                        score = -(left_sq / k + right_sq / (m - k))
                        if score < best_score:
                            best_score = score
                            best_feat = f
                            best_thr = 0.5 * (xa + xb)
                else:
                    for t in range(m):
                        ys[t] = y[idx[start + order[t]]]
                    c1 = 0.0
                    c2 = 0.0
                    t1 = 0.0
                    t2 = 0.0
                    for t in range(m):
                        t1 += ys[t]
                        t2 += ys[t] * ys[t]
                    for t in range(m - 1):
                        c1 += ys[t]
                        c2 += ys[t] * ys[t]
                        if t + 1 < min_leaf or m - t - 1 < min_leaf:
                            continue
                        xa = xs[order[t]]
                        xb = xs[order[t + 1]]
                        if xa >= xb:
                            continue
                        k = t + 1.0
                        score = (c2 - c1 * c1 / k) + (t2 - c2) - (t1 - c1) * (t1 - c1) / (m - k)
                        if score < best_score:
                            best_score = score
                            best_feat = f
                            best_thr = 0.5 * (xa + xb)
        if best_feat < 0:
            feature[node] = -1
            threshold[node] = 0.0
            left[node] = -1
            right[node] = -1
            if is_classification:
                for c in range(n_classes):
                    counts[c] = 0
                for t in range(start, end):
                    counts[int(y[idx[t]])] += 1
                bc = 0
                bv = counts[0]
                for c in range(1, n_classes):
                    if counts[c] > bv:
                        bv = counts[c]
                        bc = c
                value[node] = bc
            else:
                s = 0.0
                for t in range(start, end):
                    s += y[idx[t]]
                value[node] = s / m
            continue
        feature[node] = best_feat
        threshold[node] = best_thr
        value[node] = 0.0
        nl = 0
        for t in range(start, end):
            if X[idx[t], best_feat] <= best_thr:
                buf[nl] = idx[t]
                nl += 1
        nr = nl
        for t in range(start, end):
            if X[idx[t], best_feat] > best_thr:
                buf[nr] = idx[t]
                nr += 1
        for t in range(m):
            idx[start + t] = buf[t]
        # push right first so the left child is processed (and numbered) first
        stack[top, 0] = start + nl
        stack[top, 1] = end
        stack[top, 2] = dep + 1
        stack[top, 3] = node
        stack[top, 4] = 0
        top += 1
        stack[top, 0] = start
        stack[top, 1] = start + nl
        stack[top, 2] = dep + 1
        stack[top, 3] = node
        stack[top, 4] = 1
        top += 1
    return n_nodes


if os.environ.get("IMPUTEKIT_NO_NUMBA"):
    _grow_tree = _grow_tree_kernel
else:
    try:
        import numba

        _grow_tree = numba.njit(cache=True)(_grow_tree_kernel)
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _grow_tree = _grow_tree_kernel


def _fit_tree(X, y, task, max_depth, min_leaf, mtry, n_classes, rng) -> DecisionTree:
    n = X.shape[0]
    max_nodes = 4 * (n // min_leaf + 2)
    feat_keys = rng.random((max_nodes, X.shape[1]))
    feature = np.empty(max_nodes, dtype=np.int64)
    threshold = np.empty(max_nodes)
    left = np.empty(max_nodes, dtype=np.int64)
    right = np.empty(max_nodes, dtype=np.int64)
    value = np.empty(max_nodes)
    n_samples = np.empty(max_nodes, dtype=np.int64)
    depth = np.empty(max_nodes, dtype=np.int64)
    n_nodes = _grow_tree(
        np.ascontiguousarray(X), np.ascontiguousarray(y, dtype=float),
        task == CLASSIFICATION, n_classes, max_depth, min_leaf, mtry, feat_keys,
        feature, threshold, left, right, value, n_samples, depth,
    )
    return DecisionTree(
        task=task,
        feature=feature[:n_nodes].copy(),
        threshold=threshold[:n_nodes].copy(),
        left=left[:n_nodes].copy(),
        right=right[:n_nodes].copy(),
        value=value[:n_nodes].copy(),
        n_samples=n_samples[:n_nodes].copy(),
        depth=depth[:n_nodes].copy(),
    )


def fit_forest(X: np.ndarray, y: np.ndarray, task: str, config: ForestConfig) -> Forest:
    """Fit a bagged forest; per-tree draws depend only on (seed, tree index)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.isnan(X).any() or np.isnan(y).any():
        raise ValueError("fit_forest requires complete X and y")
    n = X.shape[0]
    if n < 2 * config.min_samples_leaf:
        raise ValueError(
            f"fit_forest needs n >= {2 * config.min_samples_leaf} rows, got {n}"
        )
    mtry = config.resolve_mtry(X.shape[1])
    if task == CLASSIFICATION:
        classes = tuple(int(c) for c in np.unique(y))
        codes = np.searchsorted(np.array(classes, dtype=float), y).astype(float)
        target = codes
        n_classes = len(classes)
    elif task == REGRESSION:
        classes = ()
        target = y
        n_classes = 1  # unused; keeps kernel buffers non-empty
    else:
        raise ValueError(f"unknown task {task!r}")
    children = np.random.SeedSequence(config.seed).spawn(config.n_trees)
    trees = []
    for child in children:
        rng = np.random.default_rng(child)
        boot = rng.integers(0, n, size=n)
        trees.append(
            _fit_tree(
                X[boot], target[boot], task, config.max_depth,
                config.min_samples_leaf, mtry, n_classes, rng,
            )
        )
    return Forest(task=task, trees=tuple(trees), classes=classes, config=config)


def predict_forest(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Mean of tree outputs (regression) or majority vote (classification)."""
    X = np.asarray(X, dtype=float)
    preds = np.stack([t.predict(X) for t in forest.trees])
    if forest.task == REGRESSION:
        return preds.mean(axis=0)
    n_classes = len(forest.classes)
    counts = np.zeros((X.shape[0], n_classes), dtype=np.int64)
    codes = preds.astype(np.int64)
    for t in range(codes.shape[0]):
        counts[np.arange(X.shape[0]), codes[t]] += 1
    winners = counts.argmax(axis=1)  # argmax ties -> first -> smallest class
    return np.array(forest.classes, dtype=float)[winners]


def _difference(new, old, kinds, mask):
    """Round-over-round change: normalized squared change on continuous
    columns, changed fraction on discrete masked cells."""
    cont = [j for j, k in enumerate(kinds) if k == CONTINUOUS]
    disc = [j for j, k in enumerate(kinds) if k == DISCRETE]
    d_cont = None
    if cont:
        num = float(((new[:, cont] - old[:, cont]) ** 2).sum())
        den = float((new[:, cont] ** 2).sum())
        d_cont = num / den if den > 0 else 0.0
    d_disc = None
    if disc:
        sel = mask[:, disc]
        n_miss = int(sel.sum())
        if n_miss:
            d_disc = float((new[:, disc][sel] != old[:, disc][sel]).sum() / n_miss)
        else:
            d_disc = 0.0
    return d_cont, d_disc


def refit_pass(
    cells_filled: np.ndarray,
    mask: np.ndarray,
    kinds: tuple[str, ...],
    config: ForestConfig,
    seed: int,
    column_order: np.ndarray | None = None,
) -> np.ndarray:
    """One chained sweep: per column, fit on originally-observed rows and
    re-predict its masked cells, updating the working matrix in place order.
    """
    fill = np.array(cells_filled, dtype=float)
    n, d = fill.shape
    if column_order is None:
        column_order = np.argsort(mask.mean(axis=0), kind="stable")
    for j in column_order:
        miss = mask[:, j]
        if not miss.any() or miss.all():
            continue
        others = [c for c in range(d) if c != j]
        task = CLASSIFICATION if kinds[j] == DISCRETE else REGRESSION
        cfg = replace(config, seed=derive_seed(seed, "col", int(j)))
        forest = fit_forest(fill[~miss][:, others], fill[~miss, j], task, cfg)
        fill[miss, j] = predict_forest(forest, fill[miss][:, others])
    return fill


def impute_missforest(
    table: DataTable,
    mask: np.ndarray,
    config: ForestConfig | None = None,
    max_iter: int = 10,
    seed: int | None = None,
) -> ImputationResult:
    """Iterative forest imputation with the first-increase stopping rule."""
    t0 = time.perf_counter()
    config = config or ForestConfig()
    if seed is not None:
        config = replace(config, seed=seed)
    kinds = table.kinds
    cells = table.cells
    fill = initial_fill(table, mask)
    if not mask.any():
        return ImputationResult(
            completed=fill, method="missforest", wall_time_s=time.perf_counter() - t0,
            params={"iterations": 0, "differences": []},
        )
    order = np.argsort(mask.mean(axis=0), kind="stable")
    prev = fill
    history = []
    best = fill
    iterations = 0
    prev_diff = (np.inf, np.inf)
    for it in range(max_iter):
        iterations = it + 1
        new = refit_pass(prev, mask, kinds, config, derive_seed(config.seed, "iter", it), order)
        d_cont, d_disc = _difference(new, prev, kinds, mask)
        history.append({"continuous": d_cont, "discrete": d_disc})
        inc_cont = d_cont is None or (d_cont >= prev_diff[0])
        inc_disc = d_disc is None or (d_disc >= prev_diff[1])
        if it > 0 and inc_cont and inc_disc:
            best = prev  # difference rose: keep the previous round's fill
            break
        best = new
        prev = new
        prev_diff = (
            d_cont if d_cont is not None else np.inf,
            d_disc if d_disc is not None else np.inf,
        )
    completed = np.array(best)
    completed[~mask] = cells[~mask]
    completed = snap_to_categories(completed, table, mask)
    return ImputationResult(
        completed=completed,
        method="missforest",
        wall_time_s=time.perf_counter() - t0,
        params={"iterations": iterations, "differences": history},
    )
