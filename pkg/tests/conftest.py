import numpy as np
import pytest

from sslst.numerics import set_default_dtype


@pytest.fixture(autouse=True)
def float64_mode():
    set_default_dtype(np.float64)
    yield
    set_default_dtype(np.float32)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale training runs (minutes)")


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results, key=lambda k: int(k.split("-")[1])):
            terminalreporter.write_line(results[key])
