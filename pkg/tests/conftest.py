import itertools

import numpy as np
import pytest


def permutation_emd(C):
    """Exhaustive minimum over permutation matchings (uniform square weights)."""
    n = C.shape[0]
    rows = np.arange(n)
    return min(C[rows, list(p)].sum() for p in itertools.permutations(range(n))) / n


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
