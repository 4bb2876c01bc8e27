import numpy as np
import pytest

from htgrpo.policy import PolicyConfig, init_policy
from htgrpo.trainer import TrainConfig, train


@pytest.fixture
def cfg():
    return PolicyConfig()


@pytest.fixture
def params(cfg):
    return init_policy(cfg, 7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def trained_seed7():
    """Policy after 200 default cycles on the pattern task, seed 7."""
    state, rows = train(TrainConfig(seed=7, cycles=200))
    return state, rows


_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    n, name = mark.args
    _CRITERIA[n] = (name, "pass" if report.passed else "fail")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        name, status = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n} {name}: {status}")
