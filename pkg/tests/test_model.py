import numpy as np
import pytest

from eadkit.errors import StructuralError
from eadkit.model import (QUANTITIES, EnergyDataPoint, EventKind, EventMarker, LabelSet, Quantity,
                          TimeSeries, extract_channel, slice_between_events, validate_datapoint)

from conftest import make_point


def test_six_quantities():
    assert len(QUANTITIES) == 6
    assert [q.value for q in QUANTITIES] == ["u", "i", "s", "p", "cos_phi", "f"]
    assert Quantity.parse("current") is Quantity.CURRENT
    assert Quantity.parse("I") is Quantity.CURRENT
    assert Quantity.POWER_FACTOR.unit == ""
    with pytest.raises(StructuralError):
        Quantity.parse("torque")


def test_labels():
    simple = LabelSet("fan", "Midea", "on~off")
    complex_ = LabelSet("laptop", "Dell-G3-3590", "open~close", "Chrome")
    assert not simple.is_complex and complex_.is_complex
    assert str(complex_) == "laptop-Dell-G3-3590-Chrome-open~close"
    with pytest.raises(StructuralError):
        LabelSet("fan", " ", "on")
    with pytest.raises(StructuralError):
        LabelSet("fan", "x", "on", "")


def test_time_series_is_read_only():
    ts = TimeSeries([1, 2, 3])
    with pytest.raises(ValueError):
        ts.samples[0] = 5
    assert ts[1:] == TimeSeries([2, 3])


def test_valid_point(point):
    assert validate_datapoint(point) == []


def test_length_mismatch(point):
    channels = dict(point.channels)
    channels[Quantity.CURRENT] = channels[Quantity.CURRENT][:-1]
    report = validate_datapoint(EnergyDataPoint(channels, point.labels))
    assert any("length mismatch" in p for p in report)


def test_event_out_of_range(point):
    bad = EnergyDataPoint(point.channels, point.labels, [EventMarker(10, "late")])
    assert any("out of range" in p for p in validate_datapoint(bad))


def test_other_violations(point):
    channels = dict(point.channels)
    channels[Quantity.POWER_FACTOR] = TimeSeries([-0.1] * 10)
    channels[Quantity.VOLTAGE] = TimeSeries([np.nan] * 10)
    del channels[Quantity.FREQUENCY]
    report = validate_datapoint(EnergyDataPoint(channels, point.labels))
    assert len(report) == 3


def test_validate_does_not_mutate(point):
    before = {q: ts.samples.copy() for q, ts in point.channels.items()}
    validate_datapoint(point)
    assert all(np.array_equal(before[q], point.channels[q].samples) for q in before)


def test_extract_channel():
    dp = EnergyDataPoint.from_arrays({q.value: [0.1, 0.2] for q in QUANTITIES}, LabelSet("a", "b", "c"))
    assert extract_channel(dp, Quantity.CURRENT).samples.tolist() == [0.1, 0.2]
    assert len(extract_channel(dp, Quantity.FREQUENCY)) == 2
    partial = EnergyDataPoint({q: ts for q, ts in dp.channels.items() if q is not Quantity.VOLTAGE}, dp.labels)
    with pytest.raises(StructuralError):
        extract_channel(partial, Quantity.VOLTAGE)


def test_slice_between_events(point):
    cut = slice_between_events(point, "on", "off")
    assert len(cut) == 4
    assert validate_datapoint(cut) == []
    assert [(e.sample_index, e.label) for e in cut.events] == [(0, "on"), (3, "off")]
    np.testing.assert_array_equal(cut.channels[Quantity.CURRENT].samples,
                                  point.channels[Quantity.CURRENT].samples[2:6])
    assert cut.labels == point.labels


def test_slice_degenerate_and_errors():
    dp = make_point(10, events=(EventMarker(4, "a"), EventMarker(4, "b"), EventMarker(1, "c")))
    assert len(slice_between_events(dp, "a", "b")) == 1
    with pytest.raises(StructuralError):
        slice_between_events(dp, "a", "missing")
    with pytest.raises(StructuralError):
        slice_between_events(dp, "a", "c")


def test_event_marker_validation():
    with pytest.raises(StructuralError):
        EventMarker(-1, "x")
    assert EventMarker(3, "x", "end").kind is EventKind.END
