from pathlib import Path

import pytest

from clo.config import load_config

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


@pytest.fixture(scope="session")
def scenario_dir():
    return SCENARIOS


@pytest.fixture(scope="session")
def multi_hop():
    return load_config(SCENARIOS / "multi_hop.yaml")


@pytest.fixture(scope="session")
def single_hop():
    return load_config(SCENARIOS / "single_hop.yaml")


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
