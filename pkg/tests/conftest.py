import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spsgf.problem import RESOURCE_WEIGHTS, build_resource_allocation

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def resource():
    return build_resource_allocation()


@pytest.fixture(scope="session")
def resource_optimum():
    w = np.array(RESOURCE_WEIGHTS)
    return np.stack([5.0 * w / float(w @ w), np.full(w.size, np.log(13.0 / 3.0))], axis=1)


_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
