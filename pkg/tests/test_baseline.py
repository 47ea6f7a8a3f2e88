import numpy as np
import pytest

from imputekit.amputation import ampute_mcar, apply_mask, derive_seed
from imputekit.baseline import (
    ImputationError,
    default_k,
    impute_combined,
    impute_knn,
    impute_mice,
    impute_sice,
    impute_statistical,
    nearest_category,
)
from imputekit.data_model import DataTable

from conftest import make_random_table


def _holed(table, mask):
    return table.with_cells(np.where(mask, np.nan, table.cells))


def _col_table(values, other=None):
    v = np.asarray(values, dtype=float)
    o = np.asarray(other, dtype=float) if other is not None else np.arange(len(v), dtype=float)
    return DataTable.from_cells(
        "t", np.column_stack([v, o]), ["a", "b"], kinds={"a": "continuous"}
    )


def test_statistical_mean_simple():
    t = _col_table([1.0, 3.0, np.nan])
    mask = np.isnan(t.cells)
    res = impute_statistical(t, mask, "mean")
    assert res.completed[2, 0] == 2.0


def test_statistical_mode_discrete():
    t = DataTable.from_cells(
        "t", np.array([[1.0, 0.5], [1.0, 1.5], [2.0, 2.5], [np.nan, 3.5]])
    )
    mask = np.isnan(t.cells)
    res = impute_statistical(t, mask, "mode")
    assert res.completed[3, 0] == 1.0


def test_statistical_mean_rounds_to_category():
    # discrete column {0, 3, 3}: mean 2.0 must snap to category 3
    t = DataTable.from_cells(
        "t", np.array([[0.0, 1.0], [3.0, 1.0], [3.0, 1.0], [np.nan, 1.0]])
    )
    mask = np.isnan(t.cells)
    res = impute_statistical(t, mask, "mean")
    assert res.completed[3, 0] == 3.0


def test_mean_imputation_shrinks_variance(rng):
    x = rng.standard_normal(100) * 2 + 1
    mask = np.zeros((100, 2), dtype=bool)
    mask[rng.random(100) < 0.3, 0] = True
    t = _col_table(np.where(mask[:, 0], np.nan, x))
    res = impute_statistical(t, mask, "mean")
    obs = x[~mask[:, 0]]
    assert np.var(res.completed[:, 0]) <= np.var(obs) + 1e-12


def test_statistical_fully_masked_column_errors():
    t = _col_table([np.nan, np.nan, np.nan])
    with pytest.raises(ImputationError):
        impute_statistical(t, np.isnan(t.cells), "mean")


def test_nearest_category_tie_smaller():
    out = nearest_category(np.array([1.5]), np.array([1.0, 2.0]))
    assert out[0] == 1.0


def test_default_k_sqrt_rule():
    assert default_k(1013) == 32
    assert default_k(1030) == 32
    assert default_k(100) == 10


def test_knn_duplicate_row_k1(rng):
    base = rng.standard_normal((6, 3))
    cells = np.vstack([base, base[0]])
    t = DataTable.from_cells("t", np.round(cells, 6))
    mask = np.zeros(cells.shape, dtype=bool)
    mask[6, 2] = True
    res = impute_knn(_holed(t, mask), mask, k=1)
    assert res.completed[6, 2] == t.cells[0, 2]


def test_knn_within_observed_range(rng):
    for _ in range(5):
        t = make_random_table(rng)
        m = ampute_mcar(t, 0.25, seed=int(rng.integers(1 << 30)))
        holed = apply_mask(t, m)
        res = impute_knn(holed, m.mask)
        for j in range(t.n_cols):
            sel = m.mask[:, j]
            if not sel.any():
                continue
            obs = holed.observed(j)
            assert res.completed[sel, j].min() >= obs.min() - 1e-12
            assert res.completed[sel, j].max() <= obs.max() + 1e-12


def test_knn_k_equals_n_is_mean_imputation(rng):
    t = make_random_table(rng, n=50)
    mask = np.zeros(t.cells.shape, dtype=bool)
    mask[rng.random(50) < 0.3, 0] = True
    holed = _holed(t, mask)
    res = impute_knn(holed, mask, k=t.n_rows)
    ref = impute_statistical(holed, mask, "mean")
    j_kind = t.columns[0].kind
    if j_kind == "continuous":
        assert np.allclose(res.completed[mask], ref.completed[mask], atol=1e-12)


def test_knn_fallback_recorded():
    # row 0 shares no observed feature with either donor of column 2
    cells = np.array(
        [
            [1.0, np.nan, np.nan, 5.0],
            [np.nan, 1.0, 7.0, np.nan],
            [np.nan, 2.0, 9.0, np.nan],
            [1.5, np.nan, np.nan, 6.0],
        ]
    )
    t = DataTable.from_cells("t", cells, kinds={f"c{j}": "continuous" for j in range(4)})
    mask = np.isnan(cells)
    res = impute_knn(t, mask, k=2)
    assert any(name == "c2" for _, name in res.params["fallbacks"])
    assert res.completed[0, 2] == pytest.approx(8.0)  # column mean fallback


def _linear_table(rng, n=600, frac=0.2):
    x = rng.uniform(0, 100, size=n)
    z = rng.uniform(0, 100, size=n)
    cells = np.column_stack([x, 2.0 * x, z])
    t = DataTable.from_cells("lin", cells, ["x", "y", "z"])
    mask = np.zeros(cells.shape, dtype=bool)
    mask[rng.random(n) < frac, 1] = True
    return t, mask


def test_mice_recovers_noiseless_linear(rng):
    t, mask = _linear_table(rng)
    res = impute_mice(_holed(t, mask), mask, seed=0)
    assert np.abs(res.completed[mask] - t.cells[mask]).max() < 1e-6


def test_mice_pure_noise_matches_mean(rng):
    ratios = []
    for s in range(10):
        r = np.random.default_rng(1000 + s)
        cells = r.standard_normal((150, 4))
        t = DataTable.from_cells("noise", np.round(cells, 6))
        mask = np.zeros(cells.shape, dtype=bool)
        mask[r.random(150) < 0.25, 2] = True
        holed = _holed(t, mask)
        mice_res = impute_mice(holed, mask, seed=s)
        mean_res = impute_statistical(holed, mask, "mean")
        mice_mae = np.abs(mice_res.completed[mask] - t.cells[mask]).mean()
        mean_mae = np.abs(mean_res.completed[mask] - t.cells[mask]).mean()
        ratios.append(mice_mae / mean_mae)
    assert abs(np.mean(ratios) - 1.0) < 0.10


def test_mice_zero_iterations_is_initialization(rng):
    t = make_random_table(rng)
    m = ampute_mcar(t, 0.2, seed=5)
    holed = apply_mask(t, m)
    res = impute_mice(holed, m.mask, n_iter=0, init_noise=0.0)
    from imputekit.baseline import initial_fill

    assert np.array_equal(res.completed, initial_fill(holed, m.mask))


def test_mice_change_history_decreases(rng):
    t, mask = _linear_table(rng, n=300)
    res = impute_mice(_holed(t, mask), mask, seed=1)
    changes = res.params["max_changes"]
    assert changes[-1] < changes[0]


def test_mice_deterministic_under_seed(rng):
    t = make_random_table(rng)
    m = ampute_mcar(t, 0.25, seed=6)
    holed = apply_mask(t, m)
    a = impute_mice(holed, m.mask, seed=3)
    b = impute_mice(holed, m.mask, seed=3)
    c = impute_mice(holed, m.mask, seed=4)
    assert np.array_equal(a.completed, b.completed)
    assert not np.array_equal(a.completed, c.completed)


def test_sice_single_run_equals_mice(rng):
    t = make_random_table(rng)
    m = ampute_mcar(t, 0.2, seed=7)
    holed = apply_mask(t, m)
    s = impute_sice(holed, m.mask, n_runs=1, seed=11)
    ref = impute_mice(holed, m.mask, seed=derive_seed(11, "sice", 0))
    assert np.array_equal(s.completed, ref.completed)


def test_sice_matches_mice_on_noiseless_linear(rng):
    t, mask = _linear_table(rng, n=400)
    holed = _holed(t, mask)
    s = impute_sice(holed, mask, n_runs=3, seed=2)
    assert np.abs(s.completed[mask] - t.cells[mask]).max() < 1e-6


def test_sice_reports_cell_variance(rng):
    t = make_random_table(rng)
    m = ampute_mcar(t, 0.2, seed=8)
    holed = apply_mask(t, m)
    s = impute_sice(holed, m.mask, n_runs=4, seed=1)
    cv = s.params["cell_variance"]
    assert np.isfinite(cv["mean"]) and np.isfinite(cv["max"])
    assert cv["n_cells"] == int(m.mask.sum())


def test_combined_continuous_only_typed_split_is_mice(rng):
    cells = np.round(rng.standard_normal((80, 3)) * 3 + 1, 4)
    t = DataTable.from_cells("c", cells)
    mask = np.zeros(cells.shape, dtype=bool)
    mask[rng.random(80) < 0.25, 1] = True
    holed = _holed(t, mask)
    res = impute_combined(holed, mask, variant="typed_split", seed=5)
    ref = impute_mice(holed, mask, seed=derive_seed(5, "combined"))
    assert np.array_equal(res.completed, ref.completed)


def test_combined_discrete_only_is_knn(rng):
    cells = np.column_stack(
        [rng.integers(0, 3, 60), rng.integers(0, 4, 60), rng.integers(1, 5, 60)]
    ).astype(float)
    t = DataTable.from_cells("d", cells)
    mask = np.zeros(cells.shape, dtype=bool)
    mask[rng.random(60) < 0.3, 0] = True
    holed = _holed(t, mask)
    knn_ref = impute_knn(holed, mask)
    for variant in ("mice_knn_average", "typed_split"):
        res = impute_combined(holed, mask, variant=variant, seed=5)
        assert np.array_equal(res.completed, knn_ref.completed)


def test_combined_average_is_midpoint(rng):
    cells = np.round(rng.standard_normal((70, 3)) * 2, 4)
    t = DataTable.from_cells("c", cells)
    mask = np.zeros(cells.shape, dtype=bool)
    mask[rng.random(70) < 0.3, 2] = True
    holed = _holed(t, mask)
    res = impute_combined(holed, mask, variant="mice_knn_average", seed=9)
    mice_ref = impute_mice(holed, mask, seed=derive_seed(9, "combined"))
    knn_ref = impute_knn(holed, mask)
    expect = 0.5 * (mice_ref.completed[mask] + knn_ref.completed[mask])
    assert np.allclose(res.completed[mask], expect, atol=1e-12)


def test_combined_rejects_unknown_variant(rng):
    t = make_random_table(rng)
    with pytest.raises(ValueError):
        impute_combined(t, np.zeros(t.cells.shape, dtype=bool), variant="nope")
