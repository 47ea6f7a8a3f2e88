"""Imputation quality metrics.

Accuracy metrics (NRMSE, MAE, PEV) compare imputed cells against ground
truth on the masked positions. Distribution metrics (MMD, Sinkhorn
divergence) compare the observed-value sample of a column against its
imputed-cell sample; inside `evaluate` both are computed on truth-
standardized values so columns with different units aggregate meaningfully.

MMD is the biased (V-statistic) RBF estimator with a median-heuristic
bandwidth, so it is non-negative and exactly zero on identical samples.
The Sinkhorn divergence is the debiased entropic transport cost
S(a,b) = OT(a,b) - (OT(a,a) + OT(b,b)) / 2, with each OT solved by
log-domain fixed-point iterations (safe at small epsilon).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data_model import DataTable

METRIC_NAMES = ("nrmse", "mae", "pev", "mmd", "sinkhorn")


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = 0.1
    max_iter: int = 500
    tolerance: float = 1e-6

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")


@dataclass(frozen=True)
class SinkhornResult:
    value: float
    iterations: int
    max_violation: float
    converged: bool


@dataclass
class MetricReport:
    per_column: dict[str, dict[str, float]]
    aggregate: dict[str, float]
    wall_time_s: float
    notes: tuple[str, ...] = ()

    def to_json(self) -> str:
        return json.dumps(
            {
                "per_column": self.per_column,
                "aggregate": self.aggregate,
                "wall_time_s": self.wall_time_s,
                "notes": list(self.notes),
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        d = json.loads(text)
        return cls(
            per_column=d["per_column"],
            aggregate=d["aggregate"],
            wall_time_s=d["wall_time_s"],
            notes=tuple(d["notes"]),
        )

    def csv_row(self, dataset: str, method: str, rate: float, replicate: int) -> list[str]:
        """One row of the bench CSV schema:
        dataset,method,rate,replicate,nrmse,sinkhorn,mae,pev,mmd,time_s
        """
        return [
            dataset,
            method,
            repr(float(rate)),
            str(replicate),
            *(repr(float(self.aggregate[k])) for k in ("nrmse", "sinkhorn", "mae", "pev", "mmd")),
            repr(float(self.wall_time_s)),
        ]


def _masked_pairs(truth, imputed, mask, col):
    sel = mask[:, col]
    return truth[sel, col], imputed[sel, col]


def nrmse(truth: DataTable, imputed: np.ndarray, mask: np.ndarray):
    """Per-column RMSE over masked cells divided by the true column range.

    Zero-range columns are excluded and noted. Aggregate is the mean over
    evaluated columns.
    """
    per, notes = {}, []
    t = truth.cells
    for j, meta in enumerate(truth.columns):
        if not mask[:, j].any():
            continue
        rng_ = float(np.nanmax(t[:, j]) - np.nanmin(t[:, j]))
        if rng_ == 0.0:
            notes.append(f"nrmse: column '{meta.name}' excluded (zero range)")
            continue
        tv, iv = _masked_pairs(t, imputed, mask, j)
        per[meta.name] = float(np.sqrt(np.mean((tv - iv) ** 2)) / rng_)
    agg = float(np.mean(list(per.values()))) if per else float("nan")
    return per, agg, notes


def mae(truth: DataTable, imputed: np.ndarray, mask: np.ndarray):
    """Mean absolute error over masked cells; aggregate pools all cells."""
    per = {}
    t = truth.cells
    for j, meta in enumerate(truth.columns):
        if not mask[:, j].any():
            continue
        tv, iv = _masked_pairs(t, imputed, mask, j)
        per[meta.name] = float(np.mean(np.abs(tv - iv)))
    agg = float(np.mean(np.abs(t[mask] - imputed[mask]))) if mask.any() else float("nan")
    return per, agg, []


def pev(truth: DataTable, imputed: np.ndarray, mask: np.ndarray):
    """Explained variance of imputations: 1 - Var(truth - imputed)/Var(truth).

    Both variances are over masked cells (sample convention). Columns with
    fewer than 2 masked cells or zero truth variance are excluded and noted.
    """
    per, notes = {}, []
    t = truth.cells
    for j, meta in enumerate(truth.columns):
        sel = mask[:, j]
        if sel.sum() < 2:
            if sel.any():
                notes.append(f"pev: column '{meta.name}' excluded (<2 masked cells)")
            continue
        tv, iv = _masked_pairs(t, imputed, mask, j)
        vt = float(np.var(tv, ddof=1))
        if vt == 0.0:
            notes.append(f"pev: column '{meta.name}' excluded (zero truth variance)")
            continue
        per[meta.name] = float(1.0 - np.var(tv - iv, ddof=1) / vt)
    agg = float(np.mean(list(per.values()))) if per else float("nan")
    return per, agg, notes


def _as_2d(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(len(x), -1)


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = (a * a).sum(axis=1)[:, None]
    bb = (b * b).sum(axis=1)[None, :]
    d2 = aa + bb - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def median_bandwidth(pooled: np.ndarray) -> float:
    """Median pairwise distance over a pooled sample; 1.0 if the median is 0."""
    z = _as_2d(pooled)
    d2 = _sq_dists(z, z)
    iu = np.triu_indices(len(z), k=1)
    if iu[0].size == 0:
        return 1.0
    med = float(np.median(np.sqrt(d2[iu])))
    return med if med > 0 else 1.0


def mmd(sample_a: np.ndarray, sample_b: np.ndarray, bandwidth: float | None = None) -> float:
    """Biased squared MMD with an RBF kernel, k(x,y)=exp(-|x-y|^2 / (2 h^2))."""
    a, b = _as_2d(sample_a), _as_2d(sample_b)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("mmd requires nonempty samples")
    if bandwidth is None:
        bandwidth = median_bandwidth(np.concatenate([a, b], axis=0))
    g = 1.0 / (2.0 * bandwidth * bandwidth)
    kxx = np.exp(-g * _sq_dists(a, a)).mean()
    kyy = np.exp(-g * _sq_dists(b, b)).mean()
    kxy = np.exp(-g * _sq_dists(a, b)).mean()
    return float(kxx + kyy - 2.0 * kxy)


def _lse(m: np.ndarray, axis: int) -> np.ndarray:
    mx = m.max(axis=axis, keepdims=True)
    out = np.log(np.exp(m - mx).sum(axis=axis)) + mx.squeeze(axis)
    return out


def _ot_cost(xa: np.ndarray, xb: np.ndarray, cfg: SinkhornConfig):
    """Entropic transport cost <P, C> between uniform empirical measures.

    Log-domain Sinkhorn; stops when the transport plan's marginal violation
    drops below cfg.tolerance (inf-norm) or at cfg.max_iter.
    """
    n, m = len(xa), len(xb)
    C = _sq_dists(_as_2d(xa), _as_2d(xb))
    M = -C / cfg.epsilon
    loga, logb = -np.log(n), -np.log(m)
    symmetric = n == m and xa is xb
    u = np.zeros(n)
    v = np.zeros(m)
    it, viol = 0, np.inf
    check_every = 5
    while it < cfg.max_iter:
        it += 1
        if symmetric:
            # symmetric fixed point: average the potential with its update
            u = 0.5 * (u + (loga - _lse(M + u[None, :], axis=1)))
            v = u
        else:
            u = loga - _lse(M + v[None, :], axis=1)
            v = logb - _lse(M + u[:, None], axis=0)
        if it % check_every == 0 or it == cfg.max_iter:
            P = np.exp(M + u[:, None] + v[None, :])
            viol = max(
                float(np.abs(P.sum(axis=1) - 1.0 / n).max()),
                float(np.abs(P.sum(axis=0) - 1.0 / m).max()),
            )
            if viol < cfg.tolerance:
                break
    P = np.exp(M + u[:, None] + v[None, :])
    viol = max(
        float(np.abs(P.sum(axis=1) - 1.0 / n).max()),
        float(np.abs(P.sum(axis=0) - 1.0 / m).max()),
    )
    return float((P * C).sum()), it, viol


def sinkhorn_divergence(
    sample_a: np.ndarray,
    sample_b: np.ndarray,
    config: SinkhornConfig | None = None,
) -> SinkhornResult:
    """Debiased divergence S(a,b) = OT(a,b) - OT(a,a)/2 - OT(b,b)/2."""
    cfg = config or SinkhornConfig()
    a, b = _as_2d(sample_a), _as_2d(sample_b)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("sinkhorn_divergence requires nonempty samples")
    # canonical argument order makes the result exactly symmetric
    if (len(a), a.tobytes()) > (len(b), b.tobytes()):
        a, b = b, a
    if a.shape == b.shape and np.array_equal(a, b):
        return SinkhornResult(0.0, 0, 0.0, True)
    c_ab, it_ab, viol_ab = _ot_cost(a, b, cfg)
    c_aa, it_aa, viol_aa = _ot_cost(a, a, cfg)
    c_bb, it_bb, viol_bb = _ot_cost(b, b, cfg)
    viol = max(viol_ab, viol_aa, viol_bb)
    return SinkhornResult(
        value=float(c_ab - 0.5 * (c_aa + c_bb)),
        iterations=max(it_ab, it_aa, it_bb),
        max_violation=viol,
        converged=viol < cfg.tolerance,
    )


def evaluate(
    truth: DataTable,
    imputed: np.ndarray,
    mask: np.ndarray,
    wall_time_s: float = 0.0,
    sinkhorn_config: SinkhornConfig | None = None,
    full_rows: bool = False,
) -> MetricReport:
    """Assemble all five metrics plus timing into a MetricReport.

    Distribution metrics compare, per column, observed values against
    imputed-cell values on truth-standardized scales. With `full_rows` an
    extra whole-row MMD/Sinkhorn pair is recorded under "__rows__".
    """
    imputed = np.asarray(imputed, dtype=float)
    if imputed.shape != truth.cells.shape or mask.shape != truth.cells.shape:
        raise ValueError("evaluate: shape mismatch between truth, imputed, and mask")
    notes: list[str] = []
    per_n, agg_n, nn = nrmse(truth, imputed, mask)
    per_m, agg_m, _ = mae(truth, imputed, mask)
    per_p, agg_p, pn = pev(truth, imputed, mask)
    notes.extend(nn)
    notes.extend(pn)

    t = truth.cells
    mu = np.nanmean(t, axis=0)
    sd = np.nanstd(t, axis=0, ddof=1)
    sd = np.where(sd > 0, sd, 1.0)
    tz = (t - mu) / sd
    iz = (imputed - mu) / sd

    per_mmd, per_sink = {}, {}
    cfg = sinkhorn_config or SinkhornConfig()
    for j, meta in enumerate(truth.columns):
        sel = mask[:, j]
        if not sel.any():
            continue
        obs = tz[~sel, j]
        imp = iz[sel, j]
        if obs.size == 0:
            notes.append(f"distribution: column '{meta.name}' has no observed cells")
            continue
        per_mmd[meta.name] = mmd(obs, imp)
        res = sinkhorn_divergence(obs, imp, cfg)
        per_sink[meta.name] = res.value
        if not res.converged:
            notes.append(
                f"sinkhorn: column '{meta.name}' not converged "
                f"(violation {res.max_violation:.2e})"
            )
    if full_rows:
        masked_rows = mask.any(axis=1)
        if masked_rows.any() and (~masked_rows).any():
            per_mmd["__rows__"] = mmd(tz[~masked_rows], iz[masked_rows])
            per_sink["__rows__"] = sinkhorn_divergence(
                tz[~masked_rows], iz[masked_rows], cfg
            ).value

    agg_mmd = float(np.mean([v for k, v in per_mmd.items() if k != "__rows__"])) if per_mmd else float("nan")
    agg_sink = float(np.mean([v for k, v in per_sink.items() if k != "__rows__"])) if per_sink else float("nan")

    per_column: dict[str, dict[str, float]] = {}
    for name in set(per_n) | set(per_m) | set(per_p) | set(per_mmd) | set(per_sink):
        per_column[name] = {}
        for label, d in (
            ("nrmse", per_n),
            ("mae", per_m),
            ("pev", per_p),
            ("mmd", per_mmd),
            ("sinkhorn", per_sink),
        ):
            if name in d:
                per_column[name][label] = d[name]
    return MetricReport(
        per_column=per_column,
        aggregate={
            "nrmse": agg_n,
            "mae": agg_m,
            "pev": agg_p,
            "mmd": agg_mmd,
            "sinkhorn": agg_sink,
        },
        wall_time_s=float(wall_time_s),
        notes=tuple(notes),
    )
