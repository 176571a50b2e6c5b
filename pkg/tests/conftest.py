import numpy as np
import pytest

from qoestack.dataset import DEFAULT_SCHEMA, Dataset, build_feature_table, schema_from_names
from qoestack.synth import SynthConfig, make_sessions


def table_from_arrays(X, y, names=None, provenance="test") -> Dataset:
    X = np.asarray(X, dtype=np.float64)
    if names is None:
        schema = schema_from_names([f"f{i}" for i in range(X.shape[1])])
    else:
        schema = schema_from_names(list(names))
    return Dataset(schema, X, np.asarray(y, dtype=np.float64), provenance)


@pytest.fixture(scope="session")
def synth_table() -> Dataset:
    """450 synthetic sessions, 353 in the low-complexity cluster."""
    sessions = make_sessions(SynthConfig(seed=20240601))
    return build_feature_table(sessions, provenance="synth")


@pytest.fixture(scope="session")
def small_table() -> Dataset:
    sessions = make_sessions(
        SynthConfig(n_sessions=160, low_complexity_sessions=110, seed=77)
    )
    return build_feature_table(sessions, provenance="synth-small")
