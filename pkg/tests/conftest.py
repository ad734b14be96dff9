"""Shared fixtures and the acceptance summary printed at the end of a run."""
from __future__ import annotations

import pytest

from minislot_aoi.model import SensorConfig, SystemParams

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture(scope="session")
def default_params() -> SystemParams:
    return SystemParams.default()


@pytest.fixture(scope="session")
def tiny_params() -> SystemParams:
    return SystemParams(channel_probs=(0.5, 0.5), snr_linear=(1.0, 10.0))


@pytest.fixture
def cfg_half() -> SensorConfig:
    """q_max = 3, lambda = 0.5, budget 1."""
    return SensorConfig(rate_units=5, q_max=3, energy_budget=1.0)
