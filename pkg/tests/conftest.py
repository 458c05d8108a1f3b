import numpy as np
import pytest

from geomcmc import FunnelSpec, MetricField, equivalent_metric, noncentering_reparam

_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(number, title, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] criterion {number}: {title}"
        if detail:
            line += f" ({detail})"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def funnel_spec():
    return FunnelSpec()


@pytest.fixture
def psi(funnel_spec):
    return noncentering_reparam(funnel_spec)


@pytest.fixture
def gbar(psi):
    return equivalent_metric(MetricField.identity(3), psi)


def envelope_points(n, dim=3, seed=0):
    """Points from a standard Gaussian envelope."""
    return np.random.default_rng(seed).standard_normal((n, dim))


def diag_q1_squared():
    """The 2D metric diag(1, q1^2), with analytic derivatives."""

    def components(q):
        return np.diag([1.0, q[0] ** 2])

    def derivatives(q):
        dg = np.zeros((2, 2, 2))
        dg[0, 1, 1] = 2.0 * q[0]
        return dg

    return MetricField(components, 2, derivatives=derivatives)
