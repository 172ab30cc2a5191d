import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from crowdnav.dataset import CrowdConfig, GridSpec, SceneSpec, synth_crowd  # noqa: E402


@pytest.fixture(scope="session")
def scene():
    return SceneSpec()


@pytest.fixture(scope="session")
def grid(scene):
    return GridSpec(scene)


@pytest.fixture(scope="session")
def small_crowd():
    return synth_crowd(CrowdConfig(pedestrians=60, frames=200, seed=3))


# -- acceptance summary --------------------------------------------------------------

_AC_OUTCOMES: dict[int, list[tuple[str, str]]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_ac"):
        return
    if report.when != "call" and not (report.failed or report.skipped):
        return
    number = int(name[len("test_ac"):len("test_ac") + 2])
    if hasattr(report, "wasxfail"):
        outcome = "xfail" if report.skipped else "xpass"
    else:
        outcome = report.outcome
    _AC_OUTCOMES.setdefault(number, []).append((name, outcome))


def pytest_terminal_summary(terminalreporter):
    if not _AC_OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_AC_OUTCOMES):
        parts = _AC_OUTCOMES[number]
        ok = all(o == "passed" for _, o in parts)
        detail = ", ".join(f"{n.split('_', 2)[-1]}: {o}" for n, o in parts)
        terminalreporter.write_line(f"AC{number:<2} {'PASS' if ok else 'FAIL'}  ({detail})")
