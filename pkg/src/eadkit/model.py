"""Domain types for energy activities.

An energy activity (a :class:`EnergyDataPoint`) holds six synchronized
channels sampled at 5 Hz, the labels describing who did what to which
appliance, and the event markers placed on the sample axis.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import StructuralError

SAMPLE_RATE_HZ = 5.0


class Quantity(enum.Enum):
    """The six physical quantities recorded for every data point.

    The enum value doubles as the CSV column name.
    """

    VOLTAGE = "u"
    CURRENT = "i"
    APPARENT_POWER = "s"
    ACTIVE_POWER = "p"
    POWER_FACTOR = "cos_phi"
    FREQUENCY = "f"

    @property
    def unit(self) -> str:
        return _UNITS[self]

    @classmethod
    def parse(cls, text: str) -> "Quantity":
        """Accept a column name (``i``), an enum name (``CURRENT``) or an alias."""
        key = text.strip().lower().replace("-", "_").replace(" ", "_")
        for q in cls:
            if key in (q.value, q.name.lower()):
                return q
        if key in _ALIASES:
            return _ALIASES[key]
        raise StructuralError(f"unknown quantity {text!r}")


_UNITS = {
    Quantity.VOLTAGE: "V",
    Quantity.CURRENT: "A",
    Quantity.APPARENT_POWER: "VA",
    Quantity.ACTIVE_POWER: "W",
    Quantity.POWER_FACTOR: "",
    Quantity.FREQUENCY: "Hz",
}

_ALIASES = {
    "voltage": Quantity.VOLTAGE,
    "current": Quantity.CURRENT,
    "apparent_power": Quantity.APPARENT_POWER,
    "active_power": Quantity.ACTIVE_POWER,
    "power_factor": Quantity.POWER_FACTOR,
    "pf": Quantity.POWER_FACTOR,
    "cosphi": Quantity.POWER_FACTOR,
    "frequency": Quantity.FREQUENCY,
}

QUANTITIES = tuple(Quantity)


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """One quantity sampled at a fixed rate.

    ``samples`` is stored as a read-only float64 array. Finiteness is not
    enforced here so that :func:`validate_datapoint` can report it.
    """

    samples: np.ndarray
    sample_rate_hz: float = SAMPLE_RATE_HZ

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64).reshape(-1)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (self.sample_rate_hz == other.sample_rate_hz
                and np.array_equal(self.samples, other.samples))

    def __hash__(self):
        return hash((self.sample_rate_hz, self.samples.tobytes()))

    def __getitem__(self, item):
        if isinstance(item, slice):
            return TimeSeries(self.samples[item], self.sample_rate_hz)
        return float(self.samples[item])


@dataclass(frozen=True)
class LabelSet:
    """``appliance-brand-[application-]event`` labels.

    ``application`` is only present for complex appliances.
    """

    appliance: str
    brand: str
    event: str
    application: Optional[str] = None

    def __post_init__(self):
        for name in ("appliance", "brand", "event"):
            if not getattr(self, name).strip():
                raise StructuralError(f"label field {name!r} is empty")
        if self.application is not None and not self.application.strip():
            raise StructuralError("label field 'application' is empty")

    @property
    def is_complex(self) -> bool:
        return self.application is not None

    def get(self, name: str) -> Optional[str]:
        return getattr(self, name)

    def __str__(self) -> str:
        parts = [self.appliance, self.brand]
        if self.application is not None:
            parts.append(self.application)
        parts.append(self.event)
        return "-".join(parts)


class EventKind(enum.Enum):
    START = "start"
    END = "end"
    INCREMENT = "increment"
    DECREMENT = "decrement"


@dataclass(frozen=True)
class EventMarker:
    sample_index: int
    label: str
    kind: EventKind = EventKind.START

    def __post_init__(self):
        if int(self.sample_index) != self.sample_index or self.sample_index < 0:
            raise StructuralError(f"event index must be a non-negative integer, got {self.sample_index!r}")
        object.__setattr__(self, "sample_index", int(self.sample_index))
        if not isinstance(self.kind, EventKind):
            object.__setattr__(self, "kind", EventKind(self.kind))


@dataclass(frozen=True)
class EnergyDataPoint:
    """One energy activity: six channels, labels and event markers."""

    channels: Mapping[Quantity, TimeSeries]
    labels: LabelSet
    events: Sequence[EventMarker] = ()
    source_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "channels", MappingProxyType(dict(self.channels)))
        object.__setattr__(self, "events", tuple(self.events))

    def __len__(self) -> int:
        lengths = {len(ts) for ts in self.channels.values()}
        if len(lengths) != 1:
            raise StructuralError(f"channels have unequal lengths {sorted(lengths)}")
        return lengths.pop()

    @classmethod
    def from_arrays(cls, arrays: Mapping, labels: LabelSet, events=(), source_id="",
                    sample_rate_hz: float = SAMPLE_RATE_HZ) -> "EnergyDataPoint":
        """Build a data point from a mapping of quantity (or column name) to samples."""
        channels = {}
        for key, values in arrays.items():
            q = key if isinstance(key, Quantity) else Quantity.parse(key)
            channels[q] = TimeSeries(values, sample_rate_hz)
        return cls(channels, labels, events, source_id)


def validate_datapoint(dp: EnergyDataPoint) -> list[str]:
    """Return a list of human-readable invariant violations (empty means valid)."""
    problems = []
    missing = [q.value for q in QUANTITIES if q not in dp.channels]
    if missing:
        problems.append(f"missing channels: {', '.join(missing)}")
    present = [q for q in QUANTITIES if q in dp.channels]
    lengths = {q.value: len(dp.channels[q]) for q in present}
    if len(set(lengths.values())) > 1:
        detail = ", ".join(f"{k}={v}" for k, v in lengths.items())
        problems.append(f"length mismatch between channels ({detail})")
    if any(v == 0 for v in lengths.values()):
        problems.append("empty channel")
    for q in present:
        ts = dp.channels[q]
        if ts.sample_rate_hz != SAMPLE_RATE_HZ:
            problems.append(f"channel {q.value} sampled at {ts.sample_rate_hz} Hz, expected {SAMPLE_RATE_HZ}")
        if not np.all(np.isfinite(ts.samples)):
            problems.append(f"channel {q.value} has non-finite samples")
    pf = dp.channels.get(Quantity.POWER_FACTOR)
    if pf is not None and np.any(pf.samples < 0):
        problems.append("negative power factor")
    if lengths:
        n = min(lengths.values())
        for ev in dp.events:
            if ev.sample_index >= n:
                problems.append(f"event {ev.label!r} index {ev.sample_index} out of range for length {n}")
    return problems


def extract_channel(dp: EnergyDataPoint, q: Quantity) -> TimeSeries:
    try:
        return dp.channels[q]
    except KeyError:
        raise StructuralError(f"data point {dp.source_id!r} has no {q.value} channel") from None


def _find_event(dp: EnergyDataPoint, label: str) -> EventMarker:
    for ev in dp.events:
        if ev.label == label:
            return ev
    raise StructuralError(f"no event marker labelled {label!r} in {dp.source_id!r}")


def slice_between_events(dp: EnergyDataPoint, start_label: str, end_label: str) -> EnergyDataPoint:
    """Cut all channels to the inclusive span between two event markers.

    Markers inside the span are kept and re-indexed relative to the new start.
    """
    start = _find_event(dp, start_label).sample_index
    end = _find_event(dp, end_label).sample_index
    if start > end:
        raise StructuralError(f"start event {start_label!r} ({start}) is after end event {end_label!r} ({end})")
    if end >= len(dp):
        raise StructuralError(f"event index {end} out of range for length {len(dp)}")
    channels = {q: ts[start:end + 1] for q, ts in dp.channels.items()}
    events = [EventMarker(ev.sample_index - start, ev.label, ev.kind)
              for ev in dp.events if start <= ev.sample_index <= end]
    return EnergyDataPoint(channels, dp.labels, events, dp.source_id)
