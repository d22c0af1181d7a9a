import numpy as np
import pytest

from synrl.data import CATEGORICAL, CONTINUOUS, TARGET, ColumnSchema, Dataset, TableSchema
from synrl.toy import ToyTrialSpec, make_toy_trial


@pytest.fixture(scope="session")
def toy():
    return make_toy_trial(ToyTrialSpec(n_patients=120, seed=3))


@pytest.fixture
def mixed_schema():
    return TableSchema((
        ColumnSchema("x", CONTINUOUS),
        ColumnSchema("c", CATEGORICAL, ("A", "B")),
        ColumnSchema("y", CATEGORICAL, ("0", "1"), TARGET),
    ))


def random_mixed(schema, n, seed):
    rng = np.random.default_rng(seed)
    cols = []
    for col in schema.columns:
        if col.is_categorical:
            cols.append(rng.integers(0, col.n_categories, n))
        else:
            cols.append(rng.normal(size=n))
    return Dataset(schema, np.column_stack(cols))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0].split()[0])):
            terminalreporter.write_line(line)
