import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def gen():
    return np.random.default_rng(20240601)


def random_hpd(gen, n, batch=()):
    a = gen.standard_normal(batch + (n, n)) + 1j * gen.standard_normal(batch + (n, n))
    return a @ np.conj(np.swapaxes(a, -1, -2)) + np.eye(n)


# acceptance criteria report one PASS/FAIL line each at the end of the session
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    def report(number: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2d}: {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
