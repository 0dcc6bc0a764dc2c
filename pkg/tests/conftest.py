import numpy as np
import pytest

from relmod import substrate as sb


def fd_check(build_loss, tensors, step=1e-5):
    """Analytic vs central-difference grads; returns the worst relative error."""
    for t in tensors:
        t.zero_grad()
    sb.backward(build_loss())
    worst = 0.0
    for t in tensors:
        analytic = t.grad.copy()

        def f():
            with sb.no_grad():
                return float(build_loss().data)

        numeric = sb.numeric_grad(f, t, step)
        worst = max(worst, sb.relative_error(analytic, numeric))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
