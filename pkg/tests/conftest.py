import numpy as np
import pytest

from aca_dp import kernels


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    """Run the test once per available gradient backend."""
    previous = kernels.active_backend()
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        _ACCEPTANCE[report.nodeid] = (report.outcome, detail, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, (outcome, detail, duration) in sorted(_ACCEPTANCE.items()):
        name = nodeid.split("::")[-1].removeprefix("test_")
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}  ({duration:.1f}s)  {detail}")
