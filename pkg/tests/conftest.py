from __future__ import annotations

import numpy as np
import pytest

from leoalloc.config import TimingConfig
from leoalloc.linkbudget import RateTable


def rate_table(sat, cell, rho, rho_next=None, slot=0) -> RateTable:
    sat = np.asarray(sat, dtype=np.int64)
    cell = np.asarray(cell, dtype=np.int64)
    rho = np.asarray(rho, dtype=float)
    rho_next = rho if rho_next is None else np.asarray(rho_next, dtype=float)
    return RateTable(slot, sat, cell, np.full(len(sat), 600e3), rho, rho_next,
                     np.unique(sat))


def toy_timing(n_t: int, n_b: int) -> TimingConfig:
    # N_T = T / T_F frames per slot
    return TimingConfig(slot_duration=n_t * 0.01, frame_duration=0.01, beams_per_satellite=n_b)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
