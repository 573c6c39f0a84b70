import numpy as np
import pytest
from hypothesis import settings

from actforecast.tensor import max_relative_error, numerical_gradient

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def _gradcheck(loss_fn, params, eps=1e-5):
    """Worst relative error between backprop and central differences over ``params``."""
    for p in params:
        p.grad = None
    loss_fn().backward()
    worst = 0.0
    for p in params:
        analytic = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
        numeric = numerical_gradient(lambda: loss_fn().item(), p, eps)
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst


@pytest.fixture
def gradcheck():
    return _gradcheck


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion(capsys):
    """Record and print one ``criterion N: PASS|FAIL ...`` line, then assert on it."""

    def report(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
