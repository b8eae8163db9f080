import os

import pytest

os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running BEM scenario tests")


@pytest.fixture(scope="session")
def rng():
    import numpy as np
    return np.random.default_rng(12345)


_CRITERIA = {}


@pytest.fixture(scope="session")
def criterion_log():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, title: str, checks: list, seconds: float) -> bool:
        ok = all(c[1] for c in checks)
        detail = "; ".join(f"{name}={'ok' if good else 'FAIL'} ({info})" for name, good, info in checks)
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title} [{seconds:.0f} s]: {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
