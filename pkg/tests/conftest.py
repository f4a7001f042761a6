import functools

import pytest

from nonlocal_homog.config import fixture
from nonlocal_homog.effective import build_workspace
from nonlocal_homog.kernel import select_truncation
from nonlocal_homog.threshold import build_threshold_context


@functools.lru_cache(maxsize=None)
def workspace(name, n=None):
    cfg = fixture(name)
    if n is not None:
        cfg = fixture(name, grid={"d": cfg.grid.d, "n": n})
    return build_workspace(cfg.grid, cfg.kernel, cfg.mu, select_truncation(cfg.kernel, cfg.tau))


@functools.lru_cache(maxsize=None)
def context(name):
    return build_threshold_context(workspace(name))


@pytest.fixture
def ws_default():
    return workspace("default-1d")


@pytest.fixture
def ws_shifted():
    return workspace("mu1-shifted")


@pytest.fixture
def ws_exptrig():
    return workspace("exp-trig-1d")


# acceptance criterion number -> (passed, detail); printed in the terminal summary
ACCEPTANCE = {}


def record_acceptance(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    return bool(passed)


def record_acceptance_get(number):
    """Previously recorded (passed, detail) for a criterion checked in several parts."""
    return ACCEPTANCE.get(number, (True, "not run"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
