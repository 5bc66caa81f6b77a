import logging

import numpy as np
import pytest

from tofsi.mesh import build_channel_mesh, tag_regions


@pytest.fixture(autouse=True)
def _quiet_mesh_warnings():
    logging.getLogger("tofsi.mesh").setLevel(logging.ERROR)
    yield


@pytest.fixture
def small_mesh():
    m = build_channel_mesh(10, 6, 2.0, 1.0)
    return tag_regions(m, (0.4, 0.0, 1.6, 0.5), [(0.8, 0.0, 1.2, 0.5)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def record_criterion(request):
    """Store one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash.setdefault(CRITERIA, {})[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
