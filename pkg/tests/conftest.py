import numpy as np
import pytest

from dpdbp.models import MichaelisMenten, NormalNLR, PoissonLogLink, ExponentialLogLink, generate_design

SLR_THETA0 = np.array([35.0, 1.0, 1.2])
SLR_CONT = np.array([50.0, 2.0, 0.5])
MM_THETA0 = np.array([5.0, 2.0, 0.5])
MM_CONT = np.array([20.0, 3.0, 0.1])
POIS_THETA0 = np.array([1.0, 1.0])
EXP_THETA0 = np.array([0.5, 0.5])
EXP_CONT = np.array([2.0, 1.5])


def slr_model(n=20, seed=2024):
    return NormalNLR(generate_design([{"dist": "normal", "loc": 50, "scale": 20}], n, seed))


def mm_model(n=80):
    return NormalNLR(
        generate_design([{"dist": "linspace", "start": 0.1, "stop": 80}], n, 0), MichaelisMenten()
    )


def poisson_model(n=50, seed=2024):
    return PoissonLogLink(generate_design([{"dist": "uniform", "low": 0, "high": 4}], n, seed, intercept=True))


def exponential_model(n=200, seed=2024):
    cols = [{"dist": "normal", "loc": 3, "scale": 1}, {"dist": "uniform", "low": 0, "high": 5}]
    return ExponentialLogLink(generate_design(cols, n, seed))


@pytest.fixture(scope="session")
def slr():
    return slr_model()


@pytest.fixture(scope="session")
def mm():
    return mm_model()


@pytest.fixture(scope="session")
def pois():
    return poisson_model()


@pytest.fixture(scope="session")
def expo():
    return exponential_model()


# Acceptance bookkeeping: tests marked ``criterion(k)`` report one line each.

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number k")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    k = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        ok = rep.outcome == "passed"
        prev = _RESULTS.get(k, (True, []))
        names = prev[1] + ([] if ok else [item.name])
        _RESULTS[k] = (prev[0] and ok, names)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        ok, failed = _RESULTS[k]
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}"
        if failed:
            line += f" (failed: {', '.join(failed)})"
        terminalreporter.write_line(line)
