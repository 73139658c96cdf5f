import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fairtrim.dataset import ChrononTable

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_table(features, count, n_cells=None, base_weights=None):
    """ChrononTable from a ``{name: column}`` dict; rows are laid out
    shift-major over ``n_cells`` cells."""
    names = list(features)
    X = np.column_stack([np.asarray(features[n], dtype=float) for n in names])
    count = np.asarray(count, dtype=np.int64)
    n = len(count)
    n_cells = n_cells or n
    datetime, cellid = np.divmod(np.arange(n), n_cells)
    return ChrononTable(datetime, cellid, cellid // 10, cellid % 10, X, names, count,
                        (count > 0).astype(int), base_weights)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_table(rng):
    n = 600
    x = rng.normal(size=n)
    z = rng.normal(size=n)
    count = rng.poisson(np.exp(-2.0 + 1.5 * x))
    return make_table({"x": x, "z": z}, count, n_cells=100)


_acceptance_lines = []


def record_acceptance(line):
    _acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines):
            terminalreporter.write_line(line)
