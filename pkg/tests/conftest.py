import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ghostfem", max_examples=30, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ghostfem")


CRITERIA = {
    1: "order-2 convergence (disk, ellipse, flower)",
    2: "order-3 convergence (disk, ellipse, flower)",
    3: "moving-domain convergence (ellipse, flower)",
    4: "final-time vs total L2 error",
    5: "flow past a cylinder",
    6: "penalty calibration",
    7: "extrapolation exactness",
    8: "closest-point projection accuracy",
    9: "IMEX tableau verification",
    10: "constraint residual",
    11: "qualitative flow structure",
}


def pytest_configure(config):
    config._acceptance = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, passed, detail)`` records one acceptance outcome."""
    def record(n, passed, detail=""):
        request.config._acceptance[n] = (bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        if n in results:
            ok, detail = results[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} "
                                        f"[{CRITERIA[n]}] {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: NOT RUN [{CRITERIA[n]}]")


@pytest.fixture
def rng():
    return np.random.default_rng(20260414)
