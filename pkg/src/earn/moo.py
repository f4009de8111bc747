"""Multi-objective primitives: dominance, sorting, crowding, hypervolume.

All objectives are minimized. Functions operate on plain sequences of floats
so they are reusable outside the search loop; results are deterministic and
invariant under permutation of the input points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

Vector = tuple[float, ...]


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """True iff ``a`` is no worse than ``b`` everywhere and better somewhere."""
    if len(a) != len(b):
        raise ValueError("objective vectors must have equal arity")
    no_worse = all(x <= y for x, y in zip(a, b))
    better = any(x < y for x, y in zip(a, b))
    return no_worse and better


def fast_nondominated_sort(points: Sequence[Sequence[float]]) -> list[list[int]]:
    """Partition point indices into Pareto fronts, best first.

    Vectorized pairwise dominance followed by front peeling; identical points
    always land in the same front. Indices within a front are ascending.
    """
    n = len(points)
    if n == 0:
        return []
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must be a sequence of equal-arity vectors")
    le = (pts[:, None, :] <= pts[None, :, :]).all(axis=2)
    lt = (pts[:, None, :] < pts[None, :, :]).any(axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    counts = dom.sum(axis=0).astype(np.int64)
    assigned = np.zeros(n, dtype=bool)
    fronts: list[list[int]] = []
    while not assigned.all():
        current = (counts == 0) & ~assigned
        if not current.any():  # pragma: no cover - dominance is acyclic
            raise RuntimeError("dominance cycle")
        fronts.append([int(i) for i in np.flatnonzero(current)])
        assigned |= current
        counts -= dom[current].sum(axis=0)
    return fronts


def non_dominated_indices(points: Sequence[Sequence[float]]) -> list[int]:
    """Indices of the rank-0 front, ascending, without the full n^2 matrix.

    Scans points in lexicographic order (any dominator of a point sorts no
    later than it), testing each against the front kept so far. Suited to
    large enumerations where ``fast_nondominated_sort`` would not fit in
    memory.
    """
    n = len(points)
    if n == 0:
        return []
    pts = np.asarray(points, dtype=np.float64)
    order = np.lexsort(tuple(pts[:, m] for m in reversed(range(pts.shape[1]))))
    front_rows: list[np.ndarray] = []
    keep: list[int] = []
    front_arr = np.empty((0, pts.shape[1]))
    for idx in order:
        row = pts[idx]
        if front_rows:
            if len(front_rows) != front_arr.shape[0]:
                front_arr = np.vstack(front_rows)
            dominated = np.any(
                (front_arr <= row).all(axis=1) & (front_arr < row).any(axis=1)
            )
            if dominated:
                continue
        front_rows.append(row)
        keep.append(int(idx))
    keep.sort()
    return keep


def crowding_distance(points: Sequence[Sequence[float]]) -> list[float]:
    """NSGA-II crowding distance for one front, permutation-invariant.

    Boundary points per objective get infinity; interiors accumulate the
    normalized gap between neighbors in a canonical order (objective value,
    then the full vector as tiebreak). Points with identical vectors share
    the mean of their totals, so duplicates are interchangeable. Fronts of
    one or two points are all infinite; an objective with zero range
    contributes nothing to interior points.
    """
    n = len(points)
    if n == 0:
        return []
    pts = [tuple(float(v) for v in p) for p in points]
    arity = len(pts[0])
    totals = [0.0] * n
    if n <= 2:
        totals = [math.inf] * n
    else:
        for m in range(arity):
            order = sorted(range(n), key=lambda i: (pts[i][m], pts[i]))
            lo, hi = pts[order[0]][m], pts[order[-1]][m]
            totals[order[0]] = math.inf
            totals[order[-1]] = math.inf
            if hi > lo:
                for k in range(1, n - 1):
                    i = order[k]
                    if totals[i] != math.inf:
                        totals[i] += (pts[order[k + 1]][m] - pts[order[k - 1]][m]) / (hi - lo)
    # identical vectors are interchangeable: share the mean
    groups: dict[Vector, list[int]] = {}
    for i, p in enumerate(pts):
        groups.setdefault(p, []).append(i)
    for members in groups.values():
        if len(members) > 1:
            mean = sum(totals[i] for i in members) / len(members)
            for i in members:
                totals[i] = mean
    return totals


# ---------------------------------------------------------------------------
# hypervolume (exact, up to 3 objectives)


def _hv2(points: list[tuple[float, float]], ref: tuple[float, float]) -> float:
    """Exact dominated area in 2-D; accepts dominated/duplicate points."""
    if not points:
        return 0.0
    by_x: dict[float, float] = {}
    for x, y in points:
        if x not in by_x or y < by_x[x]:
            by_x[x] = y
    xs = sorted(by_x)
    area = 0.0
    best_y = math.inf
    for j, x in enumerate(xs):
        best_y = min(best_y, by_x[x])
        next_x = xs[j + 1] if j + 1 < len(xs) else ref[0]
        area += (next_x - x) * (ref[1] - best_y)
    return area


def hypervolume(points: Sequence[Sequence[float]], reference: Sequence[float]) -> float:
    """Exact hypervolume dominated by ``points`` w.r.t. ``reference``.

    Supports 1, 2, or 3 objectives (sweep / slicing). Every point must weakly
    dominate the reference (componentwise <=); otherwise ValueError.
    """
    ref = tuple(float(r) for r in reference)
    arity = len(ref)
    if arity not in (1, 2, 3):
        raise ValueError("hypervolume supports 1 to 3 objectives")
    pts = [tuple(float(v) for v in p) for p in points]
    for p in pts:
        if len(p) != arity:
            raise ValueError("point arity does not match reference")
        if any(v > r for v, r in zip(p, ref)):
            raise ValueError(f"point {p} does not dominate reference {ref}")
    if not pts:
        return 0.0
    if arity == 1:
        return ref[0] - min(p[0] for p in pts)
    if arity == 2:
        return _hv2([(p[0], p[1]) for p in pts], (ref[0], ref[1]))
    # 3-D: slice along the first objective; each slab's area is the 2-D
    # hypervolume of the points at or before it.
    xs = sorted({p[0] for p in pts})
    total = 0.0
    for j, x in enumerate(xs):
        next_x = xs[j + 1] if j + 1 < len(xs) else ref[0]
        active = [(p[1], p[2]) for p in pts if p[0] <= x]
        total += (next_x - x) * _hv2(active, (ref[1], ref[2]))
    return total


def hypervolume_clipped(points: Sequence[Sequence[float]], reference: Sequence[float]) -> float:
    """Hypervolume of the subset of points that weakly dominate the reference."""
    ref = tuple(float(r) for r in reference)
    kept = [p for p in points if all(float(v) <= r for v, r in zip(p, ref))]
    return hypervolume(kept, ref)


def reference_from_points(
    points: Sequence[Sequence[float]], margin: float = 1.1, floor: float = 1e-12
) -> Vector:
    """Componentwise worst of ``points`` scaled by ``margin``.

    Zero components are floored so the dominated box never collapses. The
    search loop freezes this at generation zero.
    """
    if not points:
        raise ValueError("cannot derive a reference from zero points")
    arr = np.asarray(points, dtype=np.float64)
    worst = arr.max(axis=0) * margin
    worst = np.maximum(worst, floor)
    return tuple(float(v) for v in worst)


# ---------------------------------------------------------------------------
# Pareto archive


@dataclass
class ArchiveEntry:
    key: int  # structural hash
    vector: Vector  # projected objectives (minimized)
    payload: Any = None  # e.g. graph + full ObjectiveVector


@dataclass
class ParetoArchive:
    """Insertion-ordered set of mutually non-dominated entries.

    ``insert`` rejects duplicates (by key) and dominated candidates, and
    evicts entries the candidate dominates. Equal vectors with distinct keys
    coexist.
    """

    entries: list[ArchiveEntry] = field(default_factory=list)
    _keys: set[int] = field(default_factory=set, repr=False)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: int) -> bool:
        return key in self._keys

    def vectors(self) -> list[Vector]:
        return [e.vector for e in self.entries]

    def insert(self, key: int, vector: Sequence[float], payload: Any = None) -> bool:
        vec = tuple(float(v) for v in vector)
        if key in self._keys:
            return False
        for e in self.entries:
            if dominates(e.vector, vec):
                return False
        survivors = []
        for e in self.entries:
            if dominates(vec, e.vector):
                self._keys.discard(e.key)
            else:
                survivors.append(e)
        self.entries = survivors
        self.entries.append(ArchiveEntry(key=key, vector=vec, payload=payload))
        self._keys.add(key)
        return True

    def hypervolume(self, reference: Sequence[float]) -> float:
        return hypervolume_clipped(self.vectors(), reference)
