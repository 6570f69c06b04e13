import json
from pathlib import Path

import numpy as np
import pytest

from rootlift.sceneio import load_scene
from rootlift.synthlab import gen_scene

GOLDEN = Path(__file__).parent / "golden" / "v1"


@pytest.fixture
def golden_dir():
    return GOLDEN


@pytest.fixture
def scene42():
    return load_scene(GOLDEN / "scene_seed42.json")


@pytest.fixture
def untrained_metrics():
    return json.loads((GOLDEN / "untrained_seed42_metrics.json").read_text())


@pytest.fixture
def fresh_scene():
    return gen_scene(7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion checked by the test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    n, text = crit
    prev = _CRITERIA.get(n, (text, True))
    _CRITERIA[n] = (text, prev[1] and report.passed)


@pytest.fixture(autouse=True)
def _record_criterion(request, record_property):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        record_property("criterion", tuple(marker.args))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        text, ok = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}")
