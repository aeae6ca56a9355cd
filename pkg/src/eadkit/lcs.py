"""Fuzzy longest-common-subsequence similarity for energy time series.

Two scalars match when ``|x_i - y_j| < eps`` where ``eps`` is the smaller of
the two population standard deviations. ``usm`` (LCS length over the shorter
length) is the dataset-level score; groups of series are compared through
self- and cross-similarity matrices of ``usm`` values.
"""

from __future__ import annotations

import csv
import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numba import njit

from . import __version__
from .errors import SeriesTooShortError, StructuralError
from .model import Quantity, TimeSeries

THREADS_ENV = "EAD_TOOLKIT_THREADS"


def _as_array(x) -> np.ndarray:
    if isinstance(x, TimeSeries):
        return x.samples
    return np.asarray(x, dtype=np.float64).reshape(-1)


def znormalize(x) -> np.ndarray:
    """Zero-mean, unit-variance copy of ``x``; constant series map to zeros."""
    a = _as_array(x)
    sd = a.std()
    if sd == 0.0:
        return np.zeros_like(a)
    return (a - a.mean()) / sd


def adaptive_epsilon(x, y) -> float:
    """Match threshold: ``min(std(x), std(y))`` with population std."""
    a, b = _as_array(x), _as_array(y)
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise SeriesTooShortError(
            f"adaptive epsilon needs at least 2 samples per series, got {a.shape[0]} and {b.shape[0]}")
    return float(min(a.std(), b.std()))


@njit(nogil=True, cache=True)
def _lcs_kernel(x, y, eps):
    # y is the shorter series; two rolling rows of the DP table
    m = y.shape[0]
    prev = np.zeros(m + 1, dtype=np.int64)
    cur = np.zeros(m + 1, dtype=np.int64)
    exact = eps == 0.0
    for a in range(x.shape[0]):
        xa = x[a]
        cur[0] = 0
        for b in range(m):
            d = abs(xa - y[b])
            if (d == 0.0) if exact else (d < eps):
                cur[b + 1] = prev[b] + 1
            elif cur[b] >= prev[b + 1]:
                cur[b + 1] = cur[b]
            else:
                cur[b + 1] = prev[b + 1]
        prev, cur = cur, prev
    return prev[m]


def lcs_length(x, y, eps: float) -> int:
    """Length of the longest common subsequence under the fuzzy match rule.

    With ``eps == 0`` the strict rule could never match, so exact equality is
    used instead.
    """
    a, b = _as_array(x), _as_array(y)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise SeriesTooShortError("lcs_length needs non-empty series")
    if not eps >= 0 or not np.isfinite(eps):
        raise StructuralError(f"epsilon must be finite and non-negative, got {eps!r}")
    if b.shape[0] > a.shape[0]:
        a, b = b, a
    return int(_lcs_kernel(np.ascontiguousarray(a), np.ascontiguousarray(b), float(eps)))


def _lcs_adaptive(x, y, normalize=False):
    a, b = _as_array(x), _as_array(y)
    if normalize:
        a, b = znormalize(a), znormalize(b)
    eps = adaptive_epsilon(a, b)
    return lcs_length(a, b, eps), a.shape[0], b.shape[0]


def sim(x, y, normalize: bool = False) -> float:
    """``2 * lcs / (len(x) + len(y))``."""
    n, lx, ly = _lcs_adaptive(x, y, normalize)
    return 2.0 * n / (lx + ly)


def sim_bounds(x, y, normalize: bool = False) -> tuple[float, float]:
    """Lower and upper bounds of :func:`sim`: ``lcs/max(len)`` and ``lcs/min(len)``."""
    n, lx, ly = _lcs_adaptive(x, y, normalize)
    return n / max(lx, ly), n / min(lx, ly)


def usm(x, y, normalize: bool = False) -> float:
    """Upper bound of :func:`sim`; equals 1 whenever one series embeds in the other."""
    n, lx, ly = _lcs_adaptive(x, y, normalize)
    return n / min(lx, ly)


@dataclass(frozen=True)
class DatasetGroup:
    """Series of one quantity drawn from points sharing the same labels.

    ``label`` is the display name of the group and ``key`` the normalized label
    values it was grouped on.
    """

    members: tuple
    label: str
    quantity: Quantity
    member_ids: tuple = ()
    key: tuple = ()

    def __post_init__(self):
        members = tuple(m if isinstance(m, TimeSeries) else TimeSeries(m) for m in self.members)
        if not members:
            raise StructuralError(f"group {self.label!r} has no members")
        for k, m in enumerate(members):
            if len(m) < 2:
                raise SeriesTooShortError(f"member {k} of group {self.label!r} has {len(m)} sample(s); need >= 2")
        object.__setattr__(self, "members", members)
        ids = tuple(self.member_ids) or tuple(f"{self.label}#{k}" for k in range(len(members)))
        if len(ids) != len(members):
            raise StructuralError("member_ids must match members one to one")
        object.__setattr__(self, "member_ids", ids)
        object.__setattr__(self, "key", tuple(self.key) or (self.label,))

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True)
class PartitionedDataset:
    groups: tuple

    def __post_init__(self):
        groups = tuple(self.groups)
        keys = [g.key for g in groups]
        if len(set(keys)) != len(keys):
            raise StructuralError("group labels must be pairwise distinct")
        object.__setattr__(self, "groups", groups)

    def __len__(self):
        return len(self.groups)


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    entries: np.ndarray
    row_ids: tuple = ()
    col_ids: tuple = ()
    symmetric: bool = False

    @property
    def shape(self):
        return self.entries.shape

    def mean(self) -> float:
        # entrywise 1-norm over the cell count; entries are non-negative
        return float(np.abs(self.entries).sum() / self.entries.size)


def default_workers() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _prepared(group: DatasetGroup, normalize: bool):
    arrays = [m.samples for m in group.members]
    if normalize:
        arrays = [znormalize(a) for a in arrays]
    return [np.ascontiguousarray(a) for a in arrays]


def _fill(cells, xs, ys, out, workers):
    def one(cell):
        r, c = cell
        out[r, c] = usm(xs[r], ys[c])

    if workers <= 1 or len(cells) < 2:
        for cell in cells:
            one(cell)
    else:
        # cells are independent, so worker count cannot change any value
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one, cells))


def self_similarity_matrix(g: DatasetGroup, normalize: bool = False, workers: int = 1) -> SimilarityMatrix:
    xs = _prepared(g, normalize)
    n = len(xs)
    out = np.zeros((n, n))
    cells = [(r, c) for r in range(n) for c in range(r + 1, n)]
    _fill(cells, xs, xs, out, workers)
    out = out + out.T
    # a series always matches itself along the diagonal, so usm(x, x) == 1
    np.fill_diagonal(out, 1.0)
    return SimilarityMatrix(out, g.member_ids, g.member_ids, symmetric=True)


def cross_similarity_matrix(a: DatasetGroup, b: DatasetGroup, normalize: bool = False,
                            workers: int = 1) -> SimilarityMatrix:
    xs, ys = _prepared(a, normalize), _prepared(b, normalize)
    out = np.zeros((len(xs), len(ys)))
    cells = [(r, c) for r in range(len(xs)) for c in range(len(ys))]
    _fill(cells, xs, ys, out, workers)
    return SimilarityMatrix(out, a.member_ids, b.member_ids)


def dataset_self_similarity(g: DatasetGroup, normalize: bool = False, workers: int = 1) -> float:
    return self_similarity_matrix(g, normalize, workers).mean()


def dataset_cross_similarity(a: DatasetGroup, b: DatasetGroup, normalize: bool = False,
                             workers: int = 1) -> float:
    return cross_similarity_matrix(a, b, normalize, workers).mean()


def group_pairs(d: PartitionedDataset):
    """Group index pairs in lexicographic order (0, 1), (0, 2), ..., (n-2, n-1)."""
    return list(itertools.combinations(range(len(d.groups)), 2))


def dataset_similarity_vector(d: PartitionedDataset, normalize: bool = False, workers: int = 1) -> list[float]:
    if len(d.groups) < 2:
        raise StructuralError(f"similarity vector needs at least 2 groups, got {len(d.groups)}")
    return [dataset_cross_similarity(d.groups[i], d.groups[j], normalize, workers)
            for i, j in group_pairs(d)]


# -- CSV serialization -------------------------------------------------------

def _meta_lines(meta: Optional[dict]) -> list[str]:
    meta = {"toolkit": f"eadkit {__version__}", **(meta or {})}
    return [f"# {k}: {v}" for k, v in meta.items()]


def write_matrix_csv(m: SimilarityMatrix, path, meta: Optional[dict] = None) -> None:
    """Write a matrix with a header row/column of member ids.

    ``meta`` entries are written first as ``# key: value`` lines.
    """
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for line in _meta_lines(meta):
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow([""] + list(m.col_ids))
        for rid, row in zip(m.row_ids, m.entries):
            w.writerow([rid] + [repr(float(v)) for v in row])


def read_matrix_csv(path) -> SimilarityMatrix:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    header, body = rows[0], rows[1:]
    entries = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float64).reshape(len(body), -1)
    row_ids = tuple(r[0] for r in body)
    col_ids = tuple(header[1:])
    return SimilarityMatrix(entries, row_ids, col_ids, symmetric=row_ids == col_ids)


def write_vector_csv(d: PartitionedDataset, values: Sequence[float], path, meta: Optional[dict] = None) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for line in _meta_lines(meta):
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow(["group_a", "group_b", "usm"])
        for (i, j), v in zip(group_pairs(d), values):
            w.writerow([d.groups[i].label, d.groups[j].label, repr(float(v))])


def read_vector_csv(path) -> list[tuple[str, str, float]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        return [(r["group_a"], r["group_b"], float(r["usm"])) for r in reader]
