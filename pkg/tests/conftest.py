import numpy as np
import pytest

from l2game.system import BlockSystem, BlockVector


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


@pytest.fixture
def unit_system():
    """``A = diag(-1, -1)``, ``x0 = (1, 0)``: the closed-form scenario."""
    return BlockSystem([-np.eye(2)]), BlockVector([[1.0, 0.0]])


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion, with its measured figures."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "call") != "call" and outcome != "error":
                continue
            name = rep.nodeid.rsplit("::", 1)[-1]
            if "test_acceptance" not in rep.nodeid or not name.startswith("test_criterion_"):
                continue
            num = int(name.split("_")[2])
            detail = dict(rep.user_properties).get("detail", "")
            lines.append((num, f"criterion {num}: {'PASS' if outcome == 'passed' else 'FAIL'}  {detail}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
