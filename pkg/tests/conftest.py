import numpy as np
import pytest

from halotrap.field_solver import LaplaceProblem
from halotrap.geometry import Domain, ElectrodeBoundary, TABLE1_PARAMS
from halotrap.optimizer import EvalConfig, evaluate

CRITERIA = {
    1: "r_star table reproduction",
    2: "Table 1 field metrics (R, ell_rf, ell_static, U0)",
    3: "coaxial solver benchmark and grid convergence",
    4: "phase-transition oracle equivalence",
    5: "boundary continuity and exact branch relations",
    6: "pseudopotential scaling laws",
    7: "optimizer contract",
    8: "planted-quadrupole fit self-consistency",
}

_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if report.when == "call" or report.failed:
        prev = _outcomes.get(n, True)
        _outcomes[n] = prev and report.passed if report.when == "call" else False


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        if n in _outcomes:
            status = "PASS" if _outcomes[n] else "FAIL"
        else:
            status = "NOT RUN"
        terminalreporter.write_line(f"criterion {n}: {status}  {CRITERIA[n]}")


def coax_problem(h, a=1e-3, b=3e-3, half_height=1e-3):
    """Inner rod r <= a and outer shell r >= b, insulating ends."""
    r_max = b + 4 * h
    polygons = {
        "inner": np.array([[0.0, -half_height], [a, -half_height], [a, half_height], [0.0, half_height]]),
        "outer": np.array([[b, -half_height], [r_max, -half_height], [r_max, half_height], [b, half_height]]),
    }
    boundary = ElectrodeBoundary(
        (), polygons, Domain(r_max, half_height), groups={"inner": ("inner",), "outer": ("outer",)}
    )
    return LaplaceProblem(boundary, h=h)


@pytest.fixture(scope="session")
def table1_eval():
    return evaluate(TABLE1_PARAMS, EvalConfig())


@pytest.fixture(scope="session")
def coarse_eval():
    return evaluate(TABLE1_PARAMS, EvalConfig(h=15e-6))
