import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from srlaser.model import PhysicalParams  # noqa: E402

# Acceptance tests append (criterion, passed, detail) here; printed at the end.
ACCEPTANCE_LOG: list[tuple[str, bool, str]] = []


@pytest.fixture
def fig2_params():
    return PhysicalParams.from_hz(gamma=1e5, kappa=1e8, g=1.4e3, chi=1e7, eta=1e6, n_atoms=1e10)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LOG:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_LOG:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
