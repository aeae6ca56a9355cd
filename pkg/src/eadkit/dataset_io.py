"""On-disk format for energy data points, EAD ingestion and label grouping.

A data point is stored as ``name.csv`` (header ``t,u,i,s,p,cos_phi,f`` with
``t`` in 0.2 s steps) next to a ``name.json`` sidecar holding labels, events
and the source id.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataFormatError, StructuralError
from .lcs import DatasetGroup, PartitionedDataset
from .model import (QUANTITIES, SAMPLE_RATE_HZ, EnergyDataPoint, EventKind, EventMarker,
                    LabelSet, Quantity, TimeSeries, validate_datapoint)

log = logging.getLogger(__name__)

HEADER = ["t"] + [q.value for q in QUANTITIES]
STEP = 1.0 / SAMPLE_RATE_HZ
LABEL_FIELDS = ("appliance", "brand", "application", "event")


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_datapoint(dp: EnergyDataPoint, path) -> None:
    problems = validate_datapoint(dp)
    if problems:
        raise StructuralError(f"refusing to write invalid data point: {'; '.join(problems)}")
    path = Path(path)
    n = len(dp)
    cols = [dp.channels[q].samples for q in QUANTITIES]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for k in range(n):
            w.writerow([repr(round(k * STEP, 10))] + [repr(float(c[k])) for c in cols])
    labels = {f: getattr(dp.labels, f) for f in LABEL_FIELDS if getattr(dp.labels, f) is not None}
    meta = {
        "source_id": dp.source_id,
        "labels": labels,
        "events": [{"sample_index": e.sample_index, "label": e.label, "kind": e.kind.value}
                   for e in dp.events],
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2, ensure_ascii=False), encoding="utf-8")


def _parse_labels(raw: dict, where) -> LabelSet:
    try:
        return LabelSet(raw["appliance"], raw["brand"], raw["event"], raw.get("application"))
    except KeyError as exc:
        raise DataFormatError(f"{where}: label {exc} missing") from None
    except StructuralError as exc:
        raise DataFormatError(f"{where}: {exc}") from None


def _read_sidecar(path: Path):
    side = sidecar_path(path)
    if not side.exists():
        raise DataFormatError(f"{path}: sidecar {side.name} is missing")
    try:
        meta = json.loads(side.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{side}: {exc}") from None
    labels = _parse_labels(meta.get("labels", {}), side)
    try:
        events = [EventMarker(e["sample_index"], e["label"], EventKind(e.get("kind", "start")))
                  for e in meta.get("events", [])]
    except (KeyError, ValueError, StructuralError) as exc:
        raise DataFormatError(f"{side}: bad event entry ({exc})") from None
    return labels, events, str(meta.get("source_id", path.stem))


def read_datapoint(path) -> EnergyDataPoint:
    path = Path(path)
    labels, events, source_id = _read_sidecar(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        missing = [h for h in HEADER if h not in header]
        if missing:
            raise DataFormatError(f"{path}: missing columns for {', '.join(missing)}")
        idx = [header.index(h) for h in HEADER]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(row[k]) for k in idx])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DataFormatError(f"{path}: no samples")
    data = np.array(rows)
    t = data[:, 0]
    if len(t) > 1 and not np.allclose(np.diff(t), STEP, atol=1e-6):
        raise DataFormatError(f"{path}: t must increase in {STEP} s steps")
    if not np.all(np.isfinite(data)):
        raise DataFormatError(f"{path}: non-finite samples")
    if np.any(data[:, HEADER.index("cos_phi")] < 0):
        raise DataFormatError(f"{path}: negative power factor")
    channels = {q: TimeSeries(data[:, k + 1]) for k, q in enumerate(QUANTITIES)}
    dp = EnergyDataPoint(channels, labels, events, source_id)
    problems = validate_datapoint(dp)
    if problems:
        raise DataFormatError(f"{path}: {'; '.join(problems)}")
    return dp


def read_directory(directory) -> list[EnergyDataPoint]:
    """Read every canonical data point (``*.csv`` with sidecar) in ``directory``, sorted by path."""
    d = Path(directory)
    if not d.is_dir():
        raise DataFormatError(f"{d} is not a directory")
    return [read_datapoint(p) for p in sorted(d.glob("*.csv")) if sidecar_path(p).exists()]


# -- label subsets and grouping -----------------------------------------------

@dataclass(frozen=True)
class LabelSubset:
    fields: tuple

    def __post_init__(self):
        fs = tuple(f for f in LABEL_FIELDS if f in set(self.fields))
        unknown = set(self.fields) - set(LABEL_FIELDS)
        if unknown:
            raise StructuralError(f"unknown label fields {sorted(unknown)}")
        if not fs:
            raise StructuralError("label subset must not be empty")
        object.__setattr__(self, "fields", fs)

    @classmethod
    def parse(cls, text: str) -> "LabelSubset":
        return cls(tuple(p.strip().lower() for p in text.split(",") if p.strip()))


def all_label_subsets(complex_appliances: bool = True) -> list[LabelSubset]:
    """Every non-empty subset: 15 with the application label, 7 without."""
    fields = LABEL_FIELDS if complex_appliances else tuple(f for f in LABEL_FIELDS if f != "application")
    out = []
    for mask in range(1, 2 ** len(fields)):
        out.append(LabelSubset(tuple(f for k, f in enumerate(fields) if mask >> k & 1)))
    return out


def _norm(text: str) -> str:
    return text.strip().casefold()


def group_by_labels(points: Sequence[EnergyDataPoint], subset: LabelSubset, q: Quantity) -> PartitionedDataset:
    """Partition points by their (case-insensitive) values on ``subset``."""
    if not points:
        raise StructuralError("cannot group an empty list of data points")
    buckets: dict = {}
    for dp in points:
        key = []
        for f in subset.fields:
            v = dp.labels.get(f)
            if v is None:
                raise StructuralError(f"{dp.source_id!r} has no {f} label (simple appliance)")
            key.append(_norm(v))
        buckets.setdefault(tuple(key), []).append(dp)
    groups = []
    for key in sorted(buckets):
        members = buckets[key]
        # deterministic member order regardless of input order
        members = sorted(members, key=lambda dp: (dp.source_id, dp.channels[q].samples.tobytes()))
        groups.append(DatasetGroup(
            tuple(dp.channels[q] for dp in members),
            "-".join(key), q,
            tuple(dp.source_id for dp in members),
            key,
        ))
    return PartitionedDataset(tuple(groups))


# -- EAD import ------------------------------------------------------------------

COLUMN_ALIASES = {
    "u": Quantity.VOLTAGE, "voltage": Quantity.VOLTAGE, "voltage(v)": Quantity.VOLTAGE, "v": Quantity.VOLTAGE,
    "i": Quantity.CURRENT, "current": Quantity.CURRENT, "current(a)": Quantity.CURRENT, "a": Quantity.CURRENT,
    "s": Quantity.APPARENT_POWER, "apparent power": Quantity.APPARENT_POWER,
    "apparent_power": Quantity.APPARENT_POWER, "apparent power(va)": Quantity.APPARENT_POWER,
    "va": Quantity.APPARENT_POWER,
    "p": Quantity.ACTIVE_POWER, "active power": Quantity.ACTIVE_POWER, "active_power": Quantity.ACTIVE_POWER,
    "active power(w)": Quantity.ACTIVE_POWER, "power": Quantity.ACTIVE_POWER, "w": Quantity.ACTIVE_POWER,
    "cos_phi": Quantity.POWER_FACTOR, "pf": Quantity.POWER_FACTOR, "power factor": Quantity.POWER_FACTOR,
    "power_factor": Quantity.POWER_FACTOR, "cosphi": Quantity.POWER_FACTOR,
    "f": Quantity.FREQUENCY, "frequency": Quantity.FREQUENCY, "frequency(hz)": Quantity.FREQUENCY,
    "hz": Quantity.FREQUENCY,
}


@dataclass
class ImportReport:
    imported: list = field(default_factory=list)
    skipped: list = field(default_factory=list)  # {"path": ..., "reason": ...}

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, ensure_ascii=False)


def _labels_from_path(path: Path, root: Path) -> LabelSet:
    """``appliance/brand/[application/]event/file.csv`` relative to the import root."""
    parts = path.relative_to(root).parts[:-1]
    if len(parts) == 3:
        return LabelSet(parts[0], parts[1], parts[2])
    if len(parts) == 4:
        return LabelSet(parts[0], parts[1], parts[3], parts[2])
    raise DataFormatError(
        f"cannot infer labels from {path.relative_to(root)}: expected appliance/brand/[application/]event/ folders")


def _read_raw_csv(path: Path, root: Path) -> EnergyDataPoint:
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise DataFormatError("empty file") from None
        cols = {}
        for k, h in enumerate(header):
            q = COLUMN_ALIASES.get(h)
            if q is not None and q not in cols:
                cols[q] = k
        missing = [q.value for q in QUANTITIES if q not in cols]
        if missing:
            raise DataFormatError(f"no column for {', '.join(missing)}")
        data = {q: [] for q in QUANTITIES}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            for q, k in cols.items():
                try:
                    v = float(row[k])
                except (ValueError, IndexError):
                    raise DataFormatError(f"line {lineno}: non-numeric {q.value} value") from None
                if not math.isfinite(v):
                    raise DataFormatError(f"line {lineno}: non-finite {q.value} value")
                data[q].append(v)
    if not data[Quantity.VOLTAGE]:
        raise DataFormatError("no samples")
    labels = _labels_from_path(path, root)
    source_id = str(path.relative_to(root).with_suffix(""))
    dp = EnergyDataPoint({q: TimeSeries(v) for q, v in data.items()}, labels, (), source_id)
    problems = validate_datapoint(dp)
    if problems:
        raise DataFormatError("; ".join(problems))
    return dp


def ead_import(directory) -> tuple[list[EnergyDataPoint], ImportReport]:
    """Best-effort import of a downloaded EAD tree.

    Canonical files (CSV with JSON sidecar) are read as-is. Other CSV files
    are matched on known column names and labelled from their folder path.
    Unparseable files are skipped and listed in the report, never coerced.
    """
    root = Path(directory)
    if not root.is_dir():
        raise DataFormatError(f"{root} is not a readable directory")
    points, report = [], ImportReport()
    for path in sorted(root.rglob("*.csv")):
        rel = str(path.relative_to(root))
        try:
            dp = read_datapoint(path) if sidecar_path(path).exists() else _read_raw_csv(path, root)
        except (DataFormatError, StructuralError, UnicodeDecodeError) as exc:
            report.skipped.append({"path": rel, "reason": str(exc)})
            log.info("skipped %s: %s", rel, exc)
            continue
        points.append(dp)
        report.imported.append(rel)
    return points, report


def write_directory(points: Iterable[EnergyDataPoint], directory) -> list[Path]:
    """Write data points as ``0000.csv``/``0000.json`` pairs."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    for k, dp in enumerate(points):
        p = d / f"{k:04d}.csv"
        write_datapoint(dp, p)
        out.append(p)
    return out
