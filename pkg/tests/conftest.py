import os

import numpy as np
import pytest


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run long training experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow") or os.environ.get("FXNET_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="long-running; use --runslow or FXNET_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def guitar_like(rng):
    """Two seconds of plucked tones at varying level, float32."""
    from fxnet.corpus import SignalPlan, render_source

    return render_source(SignalPlan(2.0, amplitude_segment_s=0.5), rng).astype(np.float32)


_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    key = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "setup" and rep.skipped:
        _CRITERIA[key] = ("NOT RUN", rep.longrepr[2] if isinstance(rep.longrepr, tuple) else "")
    elif rep.when == "call":
        _CRITERIA[key] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (num, title), (status, detail) in sorted(_CRITERIA.items()):
        line = f"[{status}] {num}. {title}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
