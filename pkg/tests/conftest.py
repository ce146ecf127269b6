from __future__ import annotations

import numpy as np
import pytest

from ecgc.data import SyntheticSpec, generate_synthetic, normalized


@pytest.fixture(scope="session")
def small_dataset():
    """40 normalized synthetic records, 10 per class, with generator attributes."""
    return normalized(generate_synthetic(SyntheticSpec(n_records=40, seed=7)))


@pytest.fixture(scope="session")
def dataset50():
    return normalized(generate_synthetic(SyntheticSpec(n_records=50, seed=3)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting -------------------------------------------------------
_CRITERIA: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    setup_broke = rep.when == "setup" and not rep.passed
    if marker is None or (rep.when != "call" and not setup_broke):
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    _CRITERIA[number] = ("PASS" if rep.passed else "FAIL" if rep.failed else "SKIP", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"criterion {number}: {status}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
