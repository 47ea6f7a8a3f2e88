"""Composite three-layer imputer (method id "pain").

Layer 1 fills every masked cell with a convex combination of column mean,
column median, and a k-nearest-rows value, weighted per column by its
missingness ratio m: raw weights 0.3(1-m), 0.3(1-m), 0.4m are normalized to
sum to one, so the nearest-neighbor term gains weight as missingness grows.

Layer 2 refines the layer-1 fill with two model branches: one chained
random-forest sweep over columns (ascending missingness), and an
autoencoder trained on the layer-1 fill with observed-cell loss. Continuous
cells average the two branches; discrete cells take the forest value. A
diverging autoencoder degrades the layer to forest-only with a warning.

Layer 3 post-processes imputed cells only: IQR-fence clamping, observed
q05/q95 winsorization for continuous columns, category snapping plus
over-frequency rebalancing for discrete columns, mean-matching
recalibration, and per-column distribution-shift flags (MMD).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .amputation import derive_seed
from .autoencoder import (
    AEArchitecture,
    TrainSchedule,
    build_architecture,
    train_autoencoder,
    TrainingDiverged,
)
from .baseline import (
    ImputationResult,
    column_statistic,
    impute_knn,
    nearest_category,
)
from .data_model import CONTINUOUS, DISCRETE, DataTable, compute_stats
from .forest import ForestConfig, refit_pass
from .metrics import mmd


@dataclass(frozen=True)
class LayerWeights:
    w_mean: float
    w_median: float
    w_knn: float
    normalized: bool = True


@dataclass(frozen=True)
class RefinementConfig:
    iqr_factor: float = 1.5
    winsor_lo: float = 5.0
    winsor_hi: float = 95.0
    # mean-matching recalibration assumes missing cells look like observed
    # ones; under value-dependent missingness it cancels the models' own
    # correction (measurably worse error), so it defaults off
    recalibrate: bool = False
    freq_excess_threshold: float = 0.20  # percentage points, as a fraction
    mmd_flag_threshold: float = 0.1

    def __post_init__(self):
        if not (0 <= self.winsor_lo < self.winsor_hi <= 100):
            raise ValueError("need 0 <= winsor_lo < winsor_hi <= 100")
        if self.iqr_factor <= 0:
            raise ValueError("iqr_factor must be > 0")


def layer1_weights(missingness_ratio: float) -> LayerWeights:
    """Normalized (mean, median, knn) weights for one column."""
    m = float(missingness_ratio)
    if not (0.0 <= m <= 1.0):
        raise ValueError(f"missingness_ratio must be in [0, 1], got {m}")
    raw = np.array([0.3 * (1 - m), 0.3 * (1 - m), 0.4 * m])
    w = raw / raw.sum()
    return LayerWeights(w_mean=float(w[0]), w_median=float(w[1]), w_knn=float(w[2]))


def layer1_impute(
    table: DataTable,
    mask: np.ndarray,
    k: int | None = None,
    per_table_ratio: bool = False,
) -> tuple[np.ndarray, dict]:
    """Weighted statistical fill; returns (completed matrix, info).

    Continuous cells: w1*mean + w2*median + w3*knn. Discrete cells: weighted
    vote between the column mode (w1+w2) and the knn majority (w3), ties to
    the mode. Weights come from each column's own missingness ratio unless
    `per_table_ratio` is set.
    """
    knn_fill = impute_knn(table, mask, k=k)
    fill = np.array(table.cells, dtype=float)
    m_table = float(mask.mean())
    weights_used = {}
    for j, meta in enumerate(table.columns):
        sel = mask[:, j]
        if not sel.any():
            continue
        m = m_table if per_table_ratio else float(sel.mean())
        w = layer1_weights(m)
        weights_used[meta.name] = (w.w_mean, w.w_median, w.w_knn)
        if meta.kind == DISCRETE:
            mode = column_statistic(table, j, "mode")
            if w.w_knn > w.w_mean + w.w_median:
                fill[sel, j] = knn_fill.completed[sel, j]
            else:
                fill[sel, j] = mode
        else:
            mean = column_statistic(table, j, "mean")
            median = column_statistic(table, j, "median")
            fill[sel, j] = (
                w.w_mean * mean + w.w_median * median
                + w.w_knn * knn_fill.completed[sel, j]
            )
    fill[~mask] = table.cells[~mask]
    return fill, {"weights": weights_used, "knn_params": knn_fill.params}


def layer2_impute(
    table: DataTable,
    mask: np.ndarray,
    layer1_fill: np.ndarray,
    forest_config: ForestConfig | None = None,
    arch: AEArchitecture | None = None,
    schedule: TrainSchedule | None = None,
    seed: int = 0,
) -> tuple[np.ndarray, dict]:
    """Forest + autoencoder refinement of a complete starting fill."""
    if np.isnan(layer1_fill).any():
        raise ValueError("layer2 requires a complete starting fill")
    info: dict = {"warnings": []}
    forest_config = forest_config or ForestConfig()
    forest_config = replace(forest_config, seed=derive_seed(seed, "l2-forest"))
    fill_forest = refit_pass(layer1_fill, mask, table.kinds, forest_config,
                             forest_config.seed)

    fill_ae = None
    if mask.any():
        mu = layer1_fill.mean(axis=0)
        sd = layer1_fill.std(axis=0, ddof=1)
        sd = np.where(sd > 0, sd, 1.0)
        Xz = (layer1_fill - mu) / sd
        arch = arch or build_architecture(table.n_cols)
        schedule = schedule or TrainSchedule()
        schedule = replace(schedule, seed=derive_seed(seed, "l2-ae"))
        try:
            model = train_autoencoder(Xz, ~mask, arch, schedule)
            fill_ae = model.reconstruct(Xz) * sd + mu
            info["ae_epochs"] = model.epochs_run
            info["ae_best_val_loss"] = model.val_loss[model.best_epoch]
        except TrainingDiverged as exc:
            info["warnings"].append(f"autoencoder branch disabled: {exc}")

    fill = np.array(fill_forest)
    disagreement = []
    for j, meta in enumerate(table.columns):
        sel = mask[:, j]
        if not sel.any() or meta.kind == DISCRETE:
            continue  # discrete cells keep the forest branch value
        if fill_ae is not None:
            disagreement.extend(np.abs(fill_forest[sel, j] - fill_ae[sel, j]))
            fill[sel, j] = 0.5 * (fill_forest[sel, j] + fill_ae[sel, j])
    info["branch_disagreement_mean"] = (
        float(np.mean(disagreement)) if disagreement else 0.0
    )
    fill[~mask] = table.cells[~mask]
    return fill, info


def layer3_refine(
    table: DataTable,
    mask: np.ndarray,
    layer2_fill: np.ndarray,
    refinement: RefinementConfig | None = None,
) -> ImputationResult:
    """Statistical post-processing of imputed cells against observed columns."""
    t0 = time.perf_counter()
    cfg = refinement or RefinementConfig()
    if np.isnan(layer2_fill).any():
        raise ValueError("layer3 requires a complete fill")
    out = np.array(layer2_fill, dtype=float)
    clamped, winsorized, reassigned = 0, 0, 0
    mmd_per_col: dict[str, float] = {}
    flagged: list[str] = []
    for j, meta in enumerate(table.columns):
        sel = mask[:, j]
        if not sel.any():
            continue
        obs = table.observed(j)
        if obs.size == 0:
            continue
        imp = out[sel, j]
        # 1. clamp outliers to the observed IQR fences
        q25, q75 = np.quantile(obs, 0.25), np.quantile(obs, 0.75)
        iqr = q75 - q25
        lo_f, hi_f = q25 - cfg.iqr_factor * iqr, q75 + cfg.iqr_factor * iqr
        before = imp.copy()
        imp = np.clip(imp, lo_f, hi_f)
        clamped += int((imp != before).sum())
        if meta.kind == CONTINUOUS:
            # 2. winsorize at the observed percentile band
            lo_w = np.quantile(obs, cfg.winsor_lo / 100.0)
            hi_w = np.quantile(obs, cfg.winsor_hi / 100.0)
            before = imp.copy()
            imp = np.clip(imp, lo_w, hi_w)
            winsorized += int((imp != before).sum())
            # 4. recalibrate: shift imputed cells so means match
            if cfg.recalibrate and imp.size:
                imp = imp + (float(np.mean(obs)) - float(np.mean(imp)))
                imp = np.clip(imp, float(np.min(obs)), float(np.max(obs)))
        else:
            # 3. snap to categories, then damp over-represented ones
            cats = np.array(meta.category_set, dtype=float)
            pre_snap = imp.copy()
            imp = nearest_category(imp, cats)
            imp, moved = _rebalance_categories(
                imp, pre_snap, obs, cats, cfg.freq_excess_threshold
            )
            reassigned += moved
        # 5. consistency check: flag distribution drift, never mutate
        score = mmd(obs, imp)
        mmd_per_col[meta.name] = score
        if score > cfg.mmd_flag_threshold:
            flagged.append(meta.name)
        out[sel, j] = imp
    out[~mask] = table.cells[~mask]
    return ImputationResult(
        completed=out,
        method="pain",
        wall_time_s=time.perf_counter() - t0,
        params={
            "clamped": clamped,
            "winsorized": winsorized,
            "reassigned": reassigned,
            "column_mmd": mmd_per_col,
            "mmd_flagged": flagged,
        },
    )


def _rebalance_categories(imp, pre_snap, obs, cats, threshold):
    """Reassign excess cells of over-frequent categories to their runner-up.

    A category is over-frequent when its share among imputed cells exceeds
    its observed share by more than `threshold`. The cells moved are those
    whose pre-snap value sat farthest from the category (least confident
    assignments), ties broken by position.
    """
    if len(cats) < 2 or imp.size == 0:
        return imp, 0
    moved = 0
    obs_freq = {c: float((obs == c).mean()) for c in cats}
    imp = np.array(imp)
    for c in cats:
        at_c = np.flatnonzero(imp == c)
        share = at_c.size / imp.size
        allowed = obs_freq[c] + threshold
        if share <= allowed:
            continue
        excess = at_c.size - int(np.floor(allowed * imp.size))
        if excess <= 0:
            continue
        order = at_c[np.argsort(-np.abs(pre_snap[at_c] - c), kind="stable")]
        others = cats[cats != c]
        for i in order[:excess]:
            d = np.abs(pre_snap[i] - others)
            imp[i] = others[np.argmin(d)]
            moved += 1
    return imp, moved


def impute_pain(
    table: DataTable,
    mask: np.ndarray,
    seed: int = 0,
    k: int | None = None,
    forest_config: ForestConfig | None = None,
    arch: AEArchitecture | None = None,
    schedule: TrainSchedule | None = None,
    refinement: RefinementConfig | None = None,
    per_table_ratio: bool = False,
) -> ImputationResult:
    """Run the three layers in sequence and record per-layer timings."""
    t0 = time.perf_counter()
    if not mask.any():
        return ImputationResult(
            completed=np.array(table.cells), method="pain",
            wall_time_s=time.perf_counter() - t0,
            params={"note": "no masked cells"},
        )
    t1 = time.perf_counter()
    fill1, info1 = layer1_impute(table, mask, k=k, per_table_ratio=per_table_ratio)
    t_l1 = time.perf_counter() - t1
    t1 = time.perf_counter()
    fill2, info2 = layer2_impute(
        table, mask, fill1,
        forest_config=forest_config, arch=arch, schedule=schedule, seed=seed,
    )
    t_l2 = time.perf_counter() - t1
    t1 = time.perf_counter()
    result = layer3_refine(table, mask, fill2, refinement)
    t_l3 = time.perf_counter() - t1
    result.params.update(
        layer1=info1,
        layer2=info2,
        timings={"layer1_s": t_l1, "layer2_s": t_l2, "layer3_s": t_l3},
    )
    result.wall_time_s = time.perf_counter() - t0
    return result
