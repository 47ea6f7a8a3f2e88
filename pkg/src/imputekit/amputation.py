"""Reproducible missingness-mask generation.

Two mechanisms:

* MCAR: a uniform draw of exactly round(rate * n_cells) cells.
* MAR: the first max(1, d // 4) columns act as donors and receive MCAR
  missingness; every other column is a target whose removal probability is
  proportional to sigmoid(beta * z) of its donor's standardized value
  (donors are assigned to targets round-robin). Target draws use exact-count
  systematic sampling so each column's achieved rate hits the target rate,
  with inclusion probabilities normalized to sum to the removal count.

Exact-count draws (instead of independent per-cell Bernoulli draws) keep the
achieved rate within the contracted +-0.01 band even on small tables. After
the draw, a repair step un-masks uniformly chosen cells until no row or
column is fully missing; repair only ever decreases the achieved rate.

All randomness flows through `derive_seed`, a stable hash, so any mask can
be regenerated in isolation.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import DataTable, format_cell

MAX_RATE = 0.5


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from heterogeneous parts (ints, floats, strings)."""
    toks = []
    for p in parts:
        if isinstance(p, bool):
            toks.append(f"b:{int(p)}")
        elif isinstance(p, (int, np.integer)):
            toks.append(f"i:{int(p)}")
        elif isinstance(p, float):
            toks.append(f"f:{repr(p)}")
        else:
            toks.append(f"s:{p}")
    digest = hashlib.sha256("\x1f".join(toks).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class MissingMask:
    mechanism: str  # "mcar" or "mar"
    rate: float
    seed: int
    replicate: int
    mask: np.ndarray  # n_rows x n_cols bool, True = removed
    achieved_rate: float
    column_rates: tuple[float, ...]
    donors: tuple[tuple[int, int], ...] = ()  # (target column, donor column)

    def __post_init__(self):
        self.mask.setflags(write=False)


def _check_rate(rate: float) -> None:
    if not (0.0 < rate <= MAX_RATE):
        raise ValueError(f"rate must be in (0, {MAX_RATE}], got {rate}")


def _check_complete(table: DataTable) -> None:
    if np.isnan(table.cells).any():
        raise ValueError("amputation requires a fully observed table")


def _repair(mask: np.ndarray, rng: np.random.Generator) -> int:
    """Un-mask cells until no row or column is fully missing.

    Returns the number of repaired cells. Only removes mask entries, so the
    achieved rate never increases.
    """
    repaired = 0
    while True:
        bad_rows = np.flatnonzero(mask.all(axis=1))
        for i in bad_rows:
            j = rng.choice(np.flatnonzero(mask[i]))
            mask[i, j] = False
            repaired += 1
        bad_cols = np.flatnonzero(mask.all(axis=0))
        for j in bad_cols:
            i = rng.choice(np.flatnonzero(mask[:, j]))
            mask[i, j] = False
            repaired += 1
        if len(bad_rows) == 0 and len(bad_cols) == 0:
            return repaired


def _finish(mechanism, table, rate, seed, replicate, mask, rng, donors=()) -> MissingMask:
    _repair(mask, rng)
    return MissingMask(
        mechanism=mechanism,
        rate=rate,
        seed=seed,
        replicate=replicate,
        mask=mask,
        achieved_rate=float(mask.mean()),
        column_rates=tuple(float(r) for r in mask.mean(axis=0)),
        donors=tuple(donors),
    )


def ampute_mcar(table: DataTable, rate: float, seed: int, replicate: int = 0) -> MissingMask:
    """Remove a uniform exact-count draw of cells across the whole table."""
    _check_rate(rate)
    _check_complete(table)
    n, d = table.cells.shape
    rng = np.random.default_rng(seed)
    n_remove = int(round(rate * n * d))
    flat = rng.choice(n * d, size=n_remove, replace=False)
    mask = np.zeros(n * d, dtype=bool)
    mask[flat] = True
    mask = mask.reshape(n, d)
    return _finish("mcar", table, rate, seed, replicate, mask, rng)


def _pps_exact(weights: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """Systematic proportional-to-size draw of exactly m items.

    Inclusion probabilities are min(1, lam * weights) with lam chosen by
    bisection so they sum to m; for sigmoid weights at rates <= 0.5 the cap
    never binds and this reduces to m * w / sum(w).
    """
    n = len(weights)
    if m >= n:
        return np.ones(n, dtype=bool)
    w = np.asarray(weights, dtype=float)
    w = np.maximum(w, 1e-12)
    lam = m / w.sum()
    pi = lam * w
    if pi.max() > 1.0:
        lo, hi = lam, m / w.min()
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if np.minimum(1.0, mid * w).sum() < m:
                lo = mid
            else:
                hi = mid
        pi = np.minimum(1.0, hi * w)
    order = rng.permutation(n)
    c = np.cumsum(pi[order])
    step = c[-1] / m
    points = rng.random() * step + np.arange(m) * step
    picks = np.searchsorted(c, points, side="left")
    sel = np.zeros(n, dtype=bool)
    sel[order[np.minimum(picks, n - 1)]] = True
    # points are one step apart and pi <= 1 ~ step, so picks are distinct
    return sel


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def mar_roles(d: int) -> tuple[list[int], list[tuple[int, int]]]:
    """Split columns into donors and (target, donor) assignments.

    The first max(1, d // 4) columns donate; remaining columns are targets,
    fed by donors in round-robin order.
    """
    n_donors = max(1, d // 4)
    donors = list(range(n_donors))
    pairs = []
    for t, j in enumerate(range(n_donors, d)):
        pairs.append((j, donors[t % n_donors]))
    return donors, pairs


def ampute_mar(
    table: DataTable,
    rate: float,
    seed: int,
    beta: float = 1.0,
    replicate: int = 0,
) -> MissingMask:
    """Value-dependent removal: targets lose cells where donors run high.

    Per target column the inclusion probability of row i is proportional to
    sigmoid(beta * z_i) of the donor's standardized value, normalized so the
    expected (and realized) removal count is round(rate * n). Donor columns
    receive MCAR missingness at the same rate, so every column ends up with
    holes.
    """
    _check_rate(rate)
    _check_complete(table)
    n, d = table.cells.shape
    if d < 2:
        raise ValueError("MAR amputation needs at least 2 columns")
    rng = np.random.default_rng(seed)
    donors, pairs = mar_roles(d)
    m = int(round(rate * n))
    mask = np.zeros((n, d), dtype=bool)
    for j in donors:
        idx = rng.choice(n, size=min(m, n), replace=False)
        mask[idx, j] = True
    for j, donor in pairs:
        x = table.cells[:, donor]
        sd = np.std(x, ddof=1)
        z = (x - x.mean()) / sd if sd > 0 else np.zeros(n)
        mask[:, j] = _pps_exact(_sigmoid(beta * z), m, rng)
    return _finish("mar", table, rate, seed, replicate, mask, rng, donors=pairs)


def ampute(
    table: DataTable,
    rate: float,
    seed: int,
    mechanism: str = "mar",
    replicate: int = 0,
    beta: float = 1.0,
) -> MissingMask:
    if mechanism == "mcar":
        return ampute_mcar(table, rate, seed, replicate=replicate)
    if mechanism == "mar":
        return ampute_mar(table, rate, seed, beta=beta, replicate=replicate)
    raise ValueError(f"unknown mechanism {mechanism!r} (expected 'mcar' or 'mar')")


def replicate_grid(
    table: DataTable,
    rates: list[float],
    n_reps: int,
    base_seed: int,
    mechanism: str = "mar",
) -> list[MissingMask]:
    """One mask per (rate, replicate), each regenerable in isolation.

    Per-mask seed = derive_seed(base_seed, table name, rate, replicate).
    """
    if not rates:
        raise ValueError("rates must be nonempty")
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    masks = []
    for rate in rates:
        for rep in range(n_reps):
            seed = derive_seed(base_seed, table.name, float(rate), rep)
            masks.append(ampute(table, rate, seed, mechanism=mechanism, replicate=rep))
    return masks


def apply_mask(table: DataTable, mask: MissingMask) -> DataTable:
    """Holed copy of the table (masked cells become missing)."""
    cells = np.array(table.cells, dtype=float)
    cells[mask.mask] = np.nan
    return table.with_cells(cells)


def save_mask(mask: MissingMask, prefix: str | Path) -> tuple[Path, Path]:
    """Write <prefix>.mask.csv (0/1 matrix) and <prefix>.json sidecar."""
    prefix = Path(prefix)
    csv_path = prefix.with_name(prefix.name + ".mask.csv")
    json_path = prefix.with_name(prefix.name + ".json")
    np.savetxt(csv_path, mask.mask.astype(int), fmt="%d", delimiter=",")
    meta = {
        "mechanism": mask.mechanism,
        "rate": mask.rate,
        "seed": mask.seed,
        "replicate": mask.replicate,
        "achieved_rate": mask.achieved_rate,
        "column_rates": list(mask.column_rates),
        "donors": [list(p) for p in mask.donors],
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path


def load_mask_matrix(path: str | Path) -> np.ndarray:
    m = np.loadtxt(path, delimiter=",", dtype=int)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    return m.astype(bool)
