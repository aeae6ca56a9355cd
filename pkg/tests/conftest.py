import numpy as np
import pytest

from eadkit.model import QUANTITIES, EnergyDataPoint, EventKind, EventMarker, LabelSet, TimeSeries

ACCEPTANCE_LINES = []


def make_point(n=10, labels=None, events=(), source_id="dp", seed=0, offset=0.0):
    rng = np.random.default_rng(seed)
    channels = {q: TimeSeries(rng.uniform(0.1, 0.9, n) + offset) for q in QUANTITIES}
    labels = labels or LabelSet("fan", "Midea-kyt2-25", "on~off")
    return EnergyDataPoint(channels, labels, events, source_id)


@pytest.fixture
def point():
    events = (EventMarker(2, "on", EventKind.START), EventMarker(5, "off", EventKind.END))
    return make_point(10, events=events)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
