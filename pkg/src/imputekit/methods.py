"""Registry binding stable method ids to imputer implementations.

Ids: mean, median, mode, knn, mice, sice, combined_avg, combined_typed,
missforest, autoencoder, pain. Options arrive as a flat mapping with
namespaced keys ("forest.n_trees", "ae.epochs", "knn.k", ...), the same
shape the bench config and CLI --config use.
"""
from __future__ import annotations

import numpy as np

from . import autoencoder as ae
from . import baseline, forest, pain
from .baseline import ImputationResult
from .data_model import DataTable


def _forest_config(opts: dict, seed: int) -> forest.ForestConfig:
    return forest.ForestConfig(
        n_trees=int(opts.get("forest.n_trees", 100)),
        max_depth=int(opts.get("forest.max_depth", 10)),
        min_samples_leaf=int(opts.get("forest.min_samples_leaf", 5)),
        mtry=opts.get("forest.mtry"),
        seed=seed,
    )


def _schedule(opts: dict, seed: int) -> ae.TrainSchedule:
    return ae.TrainSchedule(
        epochs=int(opts.get("ae.epochs", 100)),
        patience=int(opts.get("ae.patience", 10)),
        batch_size=opts.get("ae.batch_size"),
        learning_rate=float(opts.get("ae.learning_rate", 1e-3)),
        seed=seed,
    )


def _arch(opts: dict, d: int) -> ae.AEArchitecture:
    return ae.build_architecture(
        d,
        dropout_p=float(opts.get("ae.dropout", 0.2)),
        use_batchnorm=bool(opts.get("ae.batchnorm", True)),
    )


def _refinement(opts: dict) -> pain.RefinementConfig:
    return pain.RefinementConfig(
        iqr_factor=float(opts.get("pain.iqr_factor", 1.5)),
        winsor_lo=float(opts.get("pain.winsor_lo", 5.0)),
        winsor_hi=float(opts.get("pain.winsor_hi", 95.0)),
        recalibrate=bool(opts.get("pain.recalibrate", False)),
        freq_excess_threshold=float(opts.get("pain.freq_excess", 0.20)),
        mmd_flag_threshold=float(opts.get("pain.mmd_flag", 0.1)),
    )


def _run_statistical(kind):
    def run(table, mask, seed, opts):
        return baseline.impute_statistical(table, mask, kind)
    return run


def _run_knn(table, mask, seed, opts):
    return baseline.impute_knn(table, mask, k=opts.get("knn.k"))


def _run_mice(table, mask, seed, opts):
    return baseline.impute_mice(
        table, mask,
        n_iter=int(opts.get("mice.n_iter", 10)),
        ridge=float(opts.get("mice.ridge", 1e-3)),
        seed=seed,
        init_noise=float(opts.get("mice.init_noise", 0.1)),
    )


def _run_sice(table, mask, seed, opts):
    return baseline.impute_sice(
        table, mask,
        n_runs=int(opts.get("sice.n_runs", 5)),
        seed=seed,
        n_iter=int(opts.get("mice.n_iter", 10)),
        ridge=float(opts.get("mice.ridge", 1e-3)),
        init_noise=float(opts.get("mice.init_noise", 0.1)),
    )


def _run_combined(variant):
    def run(table, mask, seed, opts):
        return baseline.impute_combined(
            table, mask, variant=variant, seed=seed, k=opts.get("knn.k"),
        )
    return run


def _run_missforest(table, mask, seed, opts):
    return forest.impute_missforest(
        table, mask,
        config=_forest_config(opts, seed),
        max_iter=int(opts.get("missforest.max_iter", 10)),
    )


def _run_autoencoder(table, mask, seed, opts):
    return ae.impute_autoencoder(
        table, mask,
        arch=_arch(opts, table.n_cols),
        schedule=_schedule(opts, seed),
    )


def _run_pain(table, mask, seed, opts):
    return pain.impute_pain(
        table, mask,
        seed=seed,
        k=opts.get("knn.k"),
        forest_config=_forest_config(opts, seed),
        arch=_arch(opts, table.n_cols),
        schedule=_schedule(opts, seed),
        refinement=_refinement(opts),
        per_table_ratio=bool(opts.get("pain.per_table_ratio", False)),
    )


IMPUTERS = {
    "mean": _run_statistical("mean"),
    "median": _run_statistical("median"),
    "mode": _run_statistical("mode"),
    "knn": _run_knn,
    "mice": _run_mice,
    "sice": _run_sice,
    "combined_avg": _run_combined("mice_knn_average"),
    "combined_typed": _run_combined("typed_split"),
    "missforest": _run_missforest,
    "autoencoder": _run_autoencoder,
    "pain": _run_pain,
}


def method_ids() -> list[str]:
    return list(IMPUTERS)


def run_method(
    table: DataTable,
    mask: np.ndarray,
    method: str,
    seed: int = 0,
    opts: dict | None = None,
) -> ImputationResult:
    """Dispatch to a registered imputer by id."""
    if method not in IMPUTERS:
        raise KeyError(
            f"unknown method {method!r}; valid ids: {', '.join(sorted(IMPUTERS))}"
        )
    return IMPUTERS[method](table, np.asarray(mask, dtype=bool), seed, opts or {})
