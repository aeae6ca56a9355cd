"""Repair misread power-meter readings using ``s = u*i`` and ``cos_phi = p/s``.

A reading that violates one or both constraints is replaced by the candidate
vector, derived by trusting a subset of its fields, that lies closest to the
original reading.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import CorrectionError, DataFormatError, StructuralError

log = logging.getLogger(__name__)

FIELDS = ("u", "i", "s", "p", "cos_phi")


@dataclass(frozen=True)
class EnergyVector:
    """Instantaneous ``(u, i, s, p, cos_phi)`` reading.

    Raw readings only need to be finite and non-negative; a misread power
    factor above 1 is a legitimate input to :func:`correct`. Use
    :meth:`is_feasible` for the full physical check.
    """

    u: float
    i: float
    s: float
    p: float
    cos_phi: float

    def __post_init__(self):
        for name in FIELDS:
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise StructuralError(f"energy vector field {name} must be finite and >= 0, got {v!r}")
            object.__setattr__(self, name, v)

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "EnergyVector":
        if len(values) != 5:
            raise StructuralError(f"energy vector needs 5 values, got {len(values)}")
        return cls(*values)

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.i, self.s, self.p, self.cos_phi])

    def is_feasible(self) -> bool:
        return self.cos_phi <= 1.0


@dataclass(frozen=True)
class Tolerances:
    eps1: float
    eps2: float = 0.02

    def __post_init__(self):
        if not (self.eps1 > 0 and self.eps2 > 0):
            raise StructuralError(f"tolerances must be positive, got {self.eps1!r}, {self.eps2!r}")

    @classmethod
    def default(cls, s: float) -> "Tolerances":
        """``eps1 = max(0.5 VA, 1% of s)`` and ``eps2 = 0.02``."""
        return cls(max(0.5, 0.01 * s), 0.02)


class ConstraintCase(enum.Enum):
    BOTH_SATISFIED = "both"
    ONLY_FIRST = "only_first"
    ONLY_SECOND = "only_second"
    NEITHER_SATISFIED = "neither"


def _second_holds(s, p, cos_phi, eps2) -> bool:
    if s == 0.0:
        # p/s undefined: a dead load reads p = 0 and a near-zero power factor
        return p == 0.0 and cos_phi < eps2
    return abs(cos_phi - p / s) < eps2


def check_constraints(e: EnergyVector, t: Tolerances) -> ConstraintCase:
    first = abs(e.s - e.u * e.i) < t.eps1
    second = _second_holds(e.s, e.p, e.cos_phi, t.eps2)
    if first and second:
        return ConstraintCase.BOTH_SATISFIED
    if first:
        return ConstraintCase.ONLY_FIRST
    if second:
        return ConstraintCase.ONLY_SECOND
    return ConstraintCase.NEITHER_SATISFIED


@dataclass(frozen=True)
class Candidate:
    """A repaired vector and its 1-based index in the candidate enumeration (1..10)."""

    index: int
    vector: EnergyVector


def _div(a, b):
    return a / b if b != 0.0 else math.nan


def _raw_candidates(e: EnergyVector, case: ConstraintCase):
    u, i, s, p, c = e.u, e.i, e.s, e.p, e.cos_phi
    if case is ConstraintCase.ONLY_FIRST:
        return [
            (1, (u, i, s, p, _div(p, s))),
            (2, (u, i, s, s * c, c)),
        ]
    if case is ConstraintCase.ONLY_SECOND:
        return [
            (3, (u, _div(s, u), s, p, c)),
            (4, (_div(s, i), i, s, p, c)),
        ]
    if case is ConstraintCase.NEITHER_SATISFIED:
        ui = u * i
        su, si = _div(s, u), _div(s, i)
        return [
            (5, (u, i, ui, p, _div(p, ui))),
            (6, (u, i, ui, ui * c, c)),
            (7, (u, su, s, p, _div(p, s))),
            (8, (u, su, s, s * c, c)),
            (9, (si, i, s, p, _div(p, s))),
            (10, (si, i, s, s * c, c)),
        ]
    raise StructuralError("a reading that satisfies both constraints has no candidates")


def _derive(e: EnergyVector, case: ConstraintCase):
    kept, notes = [], []
    for idx, values in _raw_candidates(e, case):
        if not all(math.isfinite(v) and v >= 0 for v in values):
            notes.append(f"e{idx} discarded: non-finite or negative field (division by zero)")
            continue
        if values[4] > 1.0:
            notes.append(f"e{idx} discarded: power factor {values[4]:.6g} > 1")
            continue
        kept.append(Candidate(idx, EnergyVector(*values)))
    for note in notes:
        log.debug(note)
    return kept, notes


def generate_candidates(e: EnergyVector, case: ConstraintCase) -> list[Candidate]:
    """Feasible repair candidates for ``case``, in enumeration order."""
    kept, notes = _derive(e, case)
    if not kept:
        raise CorrectionError(f"no feasible candidate for {e} ({'; '.join(notes)})")
    return kept


@dataclass(frozen=True)
class CorrectionReport:
    original: EnergyVector
    corrected: EnergyVector
    case: ConstraintCase
    candidates: tuple = ()
    chosen_index: int = 0
    distance: float = 0.0
    notes: tuple = field(default=(), compare=False)


def correct(e: EnergyVector, t: Optional[Tolerances] = None,
            scale: Optional[Sequence[float]] = None) -> CorrectionReport:
    """Return the closest feasible candidate to ``e`` (or ``e`` itself if consistent).

    Distances are Euclidean over the raw components. ``scale`` divides each
    component difference first, for a unit-aware distance. Ties go to the
    lowest candidate index.
    """
    if t is None:
        t = Tolerances.default(e.s)
    case = check_constraints(e, t)
    if case is ConstraintCase.BOTH_SATISFIED:
        return CorrectionReport(e, e, case)
    kept, notes = _derive(e, case)
    if not kept:
        raise CorrectionError(f"no feasible candidate for {e} ({'; '.join(notes)})")
    w = np.ones(5) if scale is None else 1.0 / np.asarray(scale, dtype=np.float64)
    base = e.as_array()
    best, best_d = None, math.inf
    for cand in kept:
        d = float(np.linalg.norm((cand.vector.as_array() - base) * w))
        if d < best_d:
            best, best_d = cand, d
    return CorrectionReport(e, best.vector, case, tuple(kept), best.index, best_d, tuple(notes))


# -- batch CSV ---------------------------------------------------------------

def read_vectors_csv(path) -> list[EnergyVector]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        missing = [f for f in FIELDS if f not in (reader.fieldnames or [])]
        if missing:
            raise DataFormatError(f"{path}: missing columns {missing}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(EnergyVector(*(float(row[f]) for f in FIELDS)))
            except (TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    return out


def write_reports_csv(reports: Iterable[CorrectionReport], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(FIELDS) + ["case", "chosen_index", "distance"])
        for r in reports:
            c = r.corrected
            w.writerow([repr(v) for v in (c.u, c.i, c.s, c.p, c.cos_phi)]
                       + [r.case.value, r.chosen_index, repr(r.distance)])


def correct_csv(in_path, out_path, t: Optional[Tolerances] = None,
                scale: Optional[Sequence[float]] = None) -> list[CorrectionReport]:
    reports = [correct(e, t, scale) for e in read_vectors_csv(in_path)]
    write_reports_csv(reports, out_path)
    return reports
