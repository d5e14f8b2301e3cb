from functools import lru_cache

import pytest

from sscmg.multigrid import HierarchyConfig, ScheduleSpec, build_hierarchy


@lru_cache(maxsize=None)
def cached_hierarchy(application="uniform", J=2, n=2, grid=(2, 2), kind="constant", m=1, q=1,
                     regions=None):
    cfg = HierarchyConfig(application=application, J=J, n=n, grid=grid, regions=regions,
                          schedule=ScheduleSpec(kind, m, q))
    return build_hierarchy(cfg)


@pytest.fixture
def hierarchy():
    return cached_hierarchy


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
