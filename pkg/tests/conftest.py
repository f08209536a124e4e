import numpy as np
import pytest

from wsfed.arch import SpaceConfig


@pytest.fixture
def tiny_space():
    # 2 stages, one base block plus one optional block, two widths: 36 archs
    return SpaceConfig(
        stages=2, base_depth=1, max_extra_depth=1, ratio_choices=(0.5, 1.0),
        hidden_width=8, max_mid_width=6, input_dim=5, num_classes=3,
    )


@pytest.fixture
def default_space():
    return SpaceConfig(input_dim=32, num_classes=10)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for one acceptance criterion."""
    key = request.node.get_closest_marker("criterion").args
    yield
    num, title = key
    rep = getattr(request.node, "rep_call", None)
    _ACCEPTANCE[num] = (title, "PASS" if rep is not None and rep.passed else "FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        title, verdict = _ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d} {verdict}: {title}")
