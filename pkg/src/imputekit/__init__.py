"""Tabular missing-data imputation toolkit.

Data model and amputation protocols, a roster of imputers addressable by
stable string ids (statistical fills through a three-layer composite), an
evaluation metric suite, and a reproducible benchmark harness.
"""

__version__ = "0.1.0"

from .amputation import MissingMask, ampute, ampute_mar, ampute_mcar, derive_seed, replicate_grid
from .baseline import ImputationResult
from .data_model import ColumnMeta, DataTable, StatBundle, load_csv, save_csv, standardize
from .methods import method_ids, run_method
from .metrics import MetricReport, SinkhornConfig, evaluate, mmd, sinkhorn_divergence

__all__ = [
    "__version__",
    "MissingMask",
    "ampute",
    "ampute_mar",
    "ampute_mcar",
    "derive_seed",
    "replicate_grid",
    "ImputationResult",
    "ColumnMeta",
    "DataTable",
    "StatBundle",
    "load_csv",
    "save_csv",
    "standardize",
    "method_ids",
    "run_method",
    "MetricReport",
    "SinkhornConfig",
    "evaluate",
    "mmd",
    "sinkhorn_divergence",
]
