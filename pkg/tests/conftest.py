from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from gasccp.network import load_network
from gasccp.synthetic import seven_node_like, twenty_node_like

settings.register_profile("repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"

# criterion label -> (passed, detail); filled by the acceptance module
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def t1():
    return load_network((DATA / "t1.json").read_text())


@pytest.fixture(scope="session")
def t2():
    return load_network((DATA / "t2.json").read_text())


@pytest.fixture(scope="session")
def seven():
    return seven_node_like()


@pytest.fixture(scope="session")
def twenty():
    return twenty_node_like()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[label]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
