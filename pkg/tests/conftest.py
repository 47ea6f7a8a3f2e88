import numpy as np
import pytest

from imputekit.data_model import DataTable


def make_random_table(rng: np.random.Generator, n=None, d=None, name="t") -> DataTable:
    """Small mixed-kind table for property tests (fully observed)."""
    n = n or int(rng.integers(40, 80))
    d = d or int(rng.integers(3, 6))
    n_disc = int(rng.integers(0, max(1, d - 1)))
    cols, names, kinds = [], [], {}
    z = rng.standard_normal(n)
    for j in range(d):
        name_j = f"v{j}"
        names.append(name_j)
        if j < d - n_disc:
            scale = float(rng.uniform(0.5, 8.0))
            shift = float(rng.uniform(-4.0, 4.0))
            load = float(rng.uniform(0.3, 0.8))
            x = shift + scale * (load * z + np.sqrt(1 - load**2) * rng.standard_normal(n))
            cols.append(np.round(x, 3))
        else:
            k = int(rng.integers(2, 6))
            cols.append(rng.integers(0, k, size=n).astype(float))
            kinds[name_j] = "discrete"
    return DataTable.from_cells(name, np.column_stack(cols), names, kinds=kinds)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
