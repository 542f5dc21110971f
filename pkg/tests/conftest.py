import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sphere_cloud(n, seed=0, radius=0.35, center=(0.5, 0.5, 0.5)):
    from surfrecon.pointcloud_io import OrientedPointCloud

    d = random_unit(np.random.default_rng(seed), n)
    return OrientedPointCloud(np.asarray(center) + radius * d, d)


# acceptance criteria report one summary line each at the end of the run
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    number, title = marker.args
    if number in _CRITERIA and rep.when != "call":
        return
    detail = getattr(item, "criterion_detail", "")
    if rep.failed and rep.when != "call":
        detail = f"{rep.when} error"
    _CRITERIA[number] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        terminalreporter.write_line(
            f"criterion {number} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else ""))
