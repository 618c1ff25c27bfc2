"""Shared fixtures for the test suite."""

from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
GOLDEN = Path(__file__).resolve().parent / "golden"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def configs_dir():
    return CONFIGS


ACCEPTANCE_LINES: list = []


@pytest.fixture
def acceptance_line():
    """Record (and print) the one-line verdict of an acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
