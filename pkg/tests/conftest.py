import warnings

import numpy as np
import pytest

from panelgap.panel import PanelMatrix, PeriodIndex, TreatmentAssignment, period_range


def make_panel(values, mask=None, units=None, start="2020-01") -> PanelMatrix:
    values = np.asarray(values, dtype=float)
    n, t = values.shape
    if mask is None:
        mask = np.ones((n, t), dtype=bool)
    if units is None:
        units = [f"u{i}" for i in range(n)]
    first = PeriodIndex.parse(start)
    return PanelMatrix(tuple(units), period_range(first, first + (t - 1)), values, mask)


def treat_at(panel: PanelMatrix, k: int, unit: str | None = None) -> TreatmentAssignment:
    return TreatmentAssignment(unit or panel.units[0], panel.periods[k])


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


@pytest.fixture(autouse=True)
def _quiet_short_panels():
    # Toy panels routinely have fewer pre-periods than recommended.
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="only .* pre-treatment periods")
        yield


# One line per acceptance criterion, echoed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
