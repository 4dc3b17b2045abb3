"""Relational event stores: node registry, continuous and discrete events.

Continuous streams hold ``(sender, receiver, time)`` records sorted by time.
Discrete stores hold the nonzero interval counts ``y[k, i, j]`` together with
the interval boundaries. Both are immutable after construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class EventFormatError(ValueError):
    """Raised when an event file cannot be parsed."""


@dataclass(frozen=True)
class NodeRegistry:
    """Bijection between external node ids and dense indices ``0..p-1``."""

    ids: tuple
    static: np.ndarray = field(default=None)

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("node ids must be unique")
        static = self.static
        if static is None:
            static = np.zeros(len(self.ids), dtype=bool)
        static = np.asarray(static, dtype=bool)
        if static.shape != (len(self.ids),):
            raise ValueError("static flags must have one entry per node")
        static.setflags(write=False)
        object.__setattr__(self, "static", static)
        object.__setattr__(self, "_index", {k: i for i, k in enumerate(self.ids)})

    @classmethod
    def from_count(cls, p, static=None):
        return cls(tuple(range(p)), static)

    @property
    def p(self):
        return len(self.ids)

    def index(self, node_id):
        try:
            return self._index[node_id]
        except KeyError:
            raise KeyError(f"unknown node id {node_id!r}") from None

    def id(self, i):
        return self.ids[i]

    def subset(self, indices):
        """Registry restricted to ``indices`` (in the given order)."""
        indices = np.asarray(indices, dtype=int)
        return NodeRegistry(tuple(self.ids[i] for i in indices), self.static[indices])


def _readonly(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ContinuousEvents:
    """Time-stamped directed events on ``[0, T]``, sorted by time.

    Ties in time are allowed; each record enters the likelihood on its own.
    """

    src: np.ndarray
    dst: np.ndarray
    time: np.ndarray
    horizon: float
    p: int

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64)
        dst = np.asarray(self.dst, dtype=np.int64)
        time = np.asarray(self.time, dtype=float)
        if not (src.shape == dst.shape == time.shape) or src.ndim != 1:
            raise ValueError("src, dst and time must be 1-d arrays of equal length")
        if np.any(src == dst):
            raise ValueError("self-loops are not allowed")
        if src.size and (src.min() < 0 or dst.min() < 0 or max(src.max(), dst.max()) >= self.p):
            raise ValueError("node index out of range")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if time.size and (time.min() < 0 or time.max() > self.horizon):
            raise ValueError("timestamps must lie in [0, horizon]")
        order = np.argsort(time, kind="stable")
        object.__setattr__(self, "src", _readonly(src[order], np.int64))
        object.__setattr__(self, "dst", _readonly(dst[order], np.int64))
        object.__setattr__(self, "time", _readonly(time[order], float))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def n(self):
        return int(self.time.size)

    def __len__(self):
        return self.n

    def restrict(self, nodes):
        """Events among ``nodes`` only, re-indexed to ``0..len(nodes)-1``."""
        nodes = np.asarray(nodes, dtype=np.int64)
        remap = np.full(self.p, -1, dtype=np.int64)
        remap[nodes] = np.arange(nodes.size)
        keep = (remap[self.src] >= 0) & (remap[self.dst] >= 0)
        return ContinuousEvents(remap[self.src[keep]], remap[self.dst[keep]],
                                self.time[keep], self.horizon, int(nodes.size))


@dataclass(frozen=True)
class DiscreteEvents:
    """Nonzero interval counts with explicit interval boundaries.

    ``boundaries`` has ``n_intervals + 1`` strictly increasing entries;
    interval ``k`` is ``(boundaries[k], boundaries[k+1]]``.
    """

    interval: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    count: np.ndarray
    boundaries: np.ndarray
    p: int

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if b.ndim != 1 or b.size < 2 or np.any(np.diff(b) <= 0):
            raise ValueError("interval boundaries must be strictly increasing")
        k = np.asarray(self.interval, dtype=np.int64)
        src = np.asarray(self.src, dtype=np.int64)
        dst = np.asarray(self.dst, dtype=np.int64)
        y = np.asarray(self.count, dtype=np.int64)
        if not (k.shape == src.shape == dst.shape == y.shape):
            raise ValueError("count columns must have equal length")
        if np.any(y <= 0):
            raise ValueError("stored counts must be strictly positive")
        if np.any(src == dst):
            raise ValueError("self-loops are not allowed")
        if k.size and (k.min() < 0 or k.max() >= b.size - 1):
            raise ValueError("interval index out of range")
        code = (k * self.p + src) * self.p + dst
        order = np.argsort(code, kind="stable")
        if np.any(np.diff(code[order]) == 0):
            raise ValueError("duplicate (interval, src, dst) cells")
        object.__setattr__(self, "interval", _readonly(k[order], np.int64))
        object.__setattr__(self, "src", _readonly(src[order], np.int64))
        object.__setattr__(self, "dst", _readonly(dst[order], np.int64))
        object.__setattr__(self, "count", _readonly(y[order], np.int64))
        object.__setattr__(self, "boundaries", _readonly(b, float))
        object.__setattr__(self, "_codes", _readonly(code[order], np.int64))

    @property
    def n_intervals(self):
        return self.boundaries.size - 1

    @property
    def widths(self):
        return np.diff(self.boundaries)

    @property
    def starts(self):
        return self.boundaries[:-1]

    @property
    def horizon(self):
        return float(self.boundaries[-1])

    @property
    def n_cells(self):
        """Number of candidate cells ``n_intervals * p * (p - 1)``."""
        return self.n_intervals * self.p * (self.p - 1)

    @property
    def n_positive(self):
        return int(self.count.size)

    @property
    def n_zero(self):
        return self.n_cells - self.n_positive

    @property
    def total(self):
        return int(self.count.sum())

    def lookup(self, interval, src, dst):
        """Counts for arbitrary cells; zero where nothing is stored."""
        code = (np.asarray(interval) * self.p + np.asarray(src)) * self.p + np.asarray(dst)
        pos = np.searchsorted(self._codes, code)
        pos = np.minimum(pos, max(self._codes.size - 1, 0))
        if self._codes.size == 0:
            return np.zeros(np.shape(code), dtype=np.int64)
        hit = self._codes[pos] == code
        return np.where(hit, self.count[pos], 0)

    def restrict(self, nodes):
        nodes = np.asarray(nodes, dtype=np.int64)
        remap = np.full(self.p, -1, dtype=np.int64)
        remap[nodes] = np.arange(nodes.size)
        keep = (remap[self.src] >= 0) & (remap[self.dst] >= 0)
        return DiscreteEvents(self.interval[keep], remap[self.src[keep]], remap[self.dst[keep]],
                              self.count[keep], self.boundaries, int(nodes.size))


def discretize(events, n_intervals=None, boundaries=None):
    """Aggregate a continuous stream into interval counts.

    Either ``n_intervals`` equal-width intervals spanning ``[0, T]`` or an
    explicit boundary list covering every timestamp. Events at a boundary
    ``t_k`` fall in the interval ending there, ``(t_{k-1}, t_k]``; time 0
    belongs to the first interval.
    """
    if boundaries is None:
        if n_intervals is None or int(n_intervals) < 1:
            raise ValueError("n_intervals must be a positive integer")
        boundaries = np.linspace(0.0, events.horizon, int(n_intervals) + 1)
    boundaries = np.asarray(boundaries, dtype=float)
    if events.n and (events.time.min() < boundaries[0] or events.time.max() > boundaries[-1]):
        raise ValueError("boundaries do not cover all timestamps")
    k = np.searchsorted(boundaries, events.time, side="left") - 1
    k = np.clip(k, 0, boundaries.size - 2)
    p = events.p
    code = (k * p + events.src) * p + events.dst
    uniq, counts = np.unique(code, return_counts=True)
    dst = uniq % p
    src = (uniq // p) % p
    interval = uniq // (p * p)
    return DiscreteEvents(interval, src, dst, counts, boundaries, p)


def _sniff_delimiter(line):
    for d in ("\t", ",", ";"):
        if d in line:
            return d
    return None  # whitespace


def _split(line, delimiter):
    return line.split(delimiter) if delimiter is not None else line.split()


def _looks_numeric(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_events(path, format="continuous", delimiter=None, horizon=None, columns=None,
                n_intervals=None, boundaries=None, registry=None):
    """Read an event file.

    Continuous rows are ``src dst time``; discrete rows are
    ``interval src dst count``. A header line is detected and skipped when its
    time (or count) column is not numeric. Self-loop rows are dropped and
    counted.

    Parameters
    ----------
    path : str or Path
    format : {"continuous", "discrete"}
    delimiter : str, optional
        Column separator. Sniffed from the first line when omitted
        (tab, comma, semicolon, else whitespace).
    horizon : float, optional
        Observation horizon. Defaults to the largest timestamp (continuous)
        or the number of intervals (discrete, unit widths).
    columns : sequence of int, optional
        Column positions of the fields, in the order listed above.
    n_intervals, boundaries
        Discrete format only: interval layout. Defaults to unit-width
        intervals ``0..K`` where ``K = max interval index + 1``.
    registry : NodeRegistry, optional
        Existing registry to index against; unknown ids raise.

    Returns
    -------
    registry : NodeRegistry
    events : ContinuousEvents or DiscreteEvents
    n_self_loops : int
    """
    if format not in ("continuous", "discrete"):
        raise ValueError(f"unknown format {format!r}")
    ncol = 3 if format == "continuous" else 4
    cols = list(columns) if columns is not None else list(range(ncol))
    if len(cols) != ncol:
        raise ValueError(f"{format} format needs {ncol} columns")

    rows = []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if delimiter is None and lines:
        first = next((ln for ln in lines if ln.strip()), "")
        delimiter = _sniff_delimiter(first)
    numeric_col = cols[2] if format == "continuous" else cols[3]
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = [s.strip() for s in _split(line, delimiter)]
        if len(parts) <= max(cols):
            raise EventFormatError(f"line {lineno}: expected at least {max(cols) + 1} columns, got {len(parts)}")
        if not rows and not _looks_numeric(parts[numeric_col]):
            continue  # header
        rows.append((lineno, [parts[c] for c in cols]))
    if not rows:
        raise EventFormatError("no events")

    if registry is None:
        seen = {}
        for _, r in rows:
            a, b = (r[0], r[1]) if format == "continuous" else (r[1], r[2])
            for x in (a, b):
                if x not in seen:
                    seen[x] = len(seen)
        registry = NodeRegistry(tuple(seen))

    n_loops = 0
    if format == "continuous":
        src, dst, time = [], [], []
        for lineno, (a, b, t) in rows:
            try:
                tv = float(t)
            except ValueError:
                raise EventFormatError(f"line {lineno}: bad timestamp {t!r}") from None
            if not np.isfinite(tv) or tv < 0:
                raise EventFormatError(f"line {lineno}: timestamp {t!r} outside [0, T]")
            if horizon is not None and tv > horizon:
                raise EventFormatError(f"line {lineno}: timestamp {tv} exceeds horizon {horizon}")
            if a == b:
                n_loops += 1
                continue
            src.append(registry.index(a))
            dst.append(registry.index(b))
            time.append(tv)
        if not time:
            raise EventFormatError("no events")
        T = float(horizon) if horizon is not None else max(time)
        if T <= 0:
            raise EventFormatError("horizon must be positive")
        return registry, ContinuousEvents(src, dst, time, T, registry.p), n_loops

    k, src, dst, y = [], [], [], []
    for lineno, (kk, a, b, c) in rows:
        try:
            kv, cv = int(kk), int(c)
        except ValueError:
            raise EventFormatError(f"line {lineno}: interval and count must be integers") from None
        if kv < 0 or cv < 0:
            raise EventFormatError(f"line {lineno}: negative interval or count")
        if a == b:
            n_loops += 1
            continue
        if cv == 0:
            continue
        k.append(kv)
        src.append(registry.index(a))
        dst.append(registry.index(b))
        y.append(cv)
    if not y:
        raise EventFormatError("no events")
    if boundaries is None:
        K = int(n_intervals) if n_intervals is not None else max(k) + 1
        T = float(horizon) if horizon is not None else float(K)
        boundaries = np.linspace(0.0, T, K + 1)
    if max(k) >= len(boundaries) - 1:
        raise EventFormatError("interval index beyond declared intervals")
    return registry, DiscreteEvents(k, src, dst, y, boundaries, registry.p), n_loops


def save_events(path, registry, events, delimiter="\t"):
    """Write events with a header row; inverse of :func:`load_events`."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        if isinstance(events, ContinuousEvents):
            w.writerow(["src", "dst", "time"])
            for a, b, t in zip(events.src, events.dst, events.time):
                w.writerow([registry.id(a), registry.id(b), repr(float(t))])
        else:
            w.writerow(["interval", "src", "dst", "count"])
            for k, a, b, y in zip(events.interval, events.src, events.dst, events.count):
                w.writerow([int(k), registry.id(a), registry.id(b), int(y)])


def event_multiset(registry, events):
    """Sorted list of records keyed by external ids (for round-trip checks)."""
    if isinstance(events, ContinuousEvents):
        recs = [(registry.id(a), registry.id(b), float(t))
                for a, b, t in zip(events.src, events.dst, events.time)]
    else:
        recs = [(int(k), registry.id(a), registry.id(b), int(y))
                for k, a, b, y in zip(events.interval, events.src, events.dst, events.count)]
    return sorted(recs, key=repr)


def as_registry(p_or_registry):
    if isinstance(p_or_registry, NodeRegistry):
        return p_or_registry
    return NodeRegistry.from_count(int(p_or_registry))


__all__ = [
    "EventFormatError", "NodeRegistry", "ContinuousEvents", "DiscreteEvents",
    "discretize", "load_events", "save_events", "event_multiset",
]
