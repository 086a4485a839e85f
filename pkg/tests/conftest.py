import numpy as np
import pytest

from irsmc.sampling import rng_stream


@pytest.fixture
def rng(request):
    # one independent stream per test, keyed by the test's name
    key = sum(map(ord, request.node.name))
    return rng_stream(12345, key)


def binomial_sigma(p: float, n: int) -> float:
    return float(np.sqrt(p * (1 - p) / n))


# criterion number -> (passed, one-line detail), filled by test_acceptance
ACCEPTANCE: dict = {}


def record(number: int, title: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE[number] = (title, bool(passed), detail)
    print(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        )
