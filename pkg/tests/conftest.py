import numpy as np
import pytest

from localbias.cohort import Cohort


def random_cohort(rng, n, d, acc=0.7, sev_high=4.0, scale=1.0):
    X = rng.normal(size=(n, d)) * scale
    is_a = np.zeros(n, dtype=bool)
    is_a[rng.permutation(n)[: rng.integers(max(1, n // 4), max(2, 3 * n // 4) + 1)]] = True
    correct = rng.random(n) < acc
    severity = rng.uniform(0.0, sev_high, n)
    return Cohort.from_arrays(X, is_a, correct, severity)


@pytest.fixture
def make_cohort():
    def _make(points, groups, correct=None, severity=None, attributes=None):
        n = len(points)
        return Cohort.from_arrays(
            np.asarray(points, dtype=float),
            [g == "A" for g in groups],
            correct if correct is not None else [1] * n,
            severity if severity is not None else [0.0] * n,
            attributes,
        )

    return _make


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not getattr(module, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(module.RESULTS, key=lambda s: s.split(None, 1)[1]):
        terminalreporter.write_line(line)
