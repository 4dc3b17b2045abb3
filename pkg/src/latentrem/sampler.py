"""Mini-batch construction for the stochastic likelihoods.

Three modes are supported:

``dense_discrete``
    Uniform cells ``(k, i, j)`` of the full interval x pair grid, counts
    looked up on the fly (zeros included).
``cc_discrete``
    Positive cells as cases plus uniformly drawn zero cells as controls,
    the latter reweighted by ``N0 / n0``.
``cc_partial``
    Continuous-time events as cases, each paired with freshly drawn control
    pairs at the event time.

All draws are uniform with replacement.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .events import ContinuousEvents, DiscreteEvents

MODES = ("dense_discrete", "cc_discrete", "cc_partial")
_ALIASES = {"dense": "dense_discrete", "cc-discrete": "cc_discrete", "cc-partial": "cc_partial"}


def canonical_mode(mode):
    mode = _ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown sampling mode {mode!r}")
    return mode


def default_batch_size(p):
    """Twice the number of nodes."""
    return 2 * int(p)


@dataclass
class MiniBatch:
    """One sampled mini-batch.

    ``scale`` is the ``|E| / |B|`` factor applied to the case part of the
    likelihood; ``control_weight`` is ``N0 / n0`` in ``cc_discrete`` mode.
    For discrete modes ``time``/``dt`` hold the start and width of each
    record's interval.
    """

    mode: str
    n_b: int
    scale: float
    src: np.ndarray
    dst: np.ndarray
    time: np.ndarray
    dt: np.ndarray | None = None
    count: np.ndarray | None = None
    interval: np.ndarray | None = None
    ctrl_src: np.ndarray | None = None
    ctrl_dst: np.ndarray | None = None
    ctrl_time: np.ndarray | None = None
    ctrl_dt: np.ndarray | None = None
    ctrl_interval: np.ndarray | None = None
    control_weight: float = 1.0
    N0: int = 0
    n0: int = 0

    def nodes(self):
        parts = [self.src, self.dst]
        if self.ctrl_src is not None:
            parts += [np.ravel(self.ctrl_src), np.ravel(self.ctrl_dst)]
        return np.unique(np.concatenate(parts))


def _uniform_pairs(rng, p, size):
    i = rng.integers(0, p, size=size)
    j = rng.integers(0, p - 1, size=size)
    j = j + (j >= i)
    return i, j


class Sampler:
    """Seeded mini-batch generator bound to one event store.

    Parameters
    ----------
    events : ContinuousEvents or DiscreteEvents
    mode : str
        One of :data:`MODES` (CLI spellings ``dense``, ``cc-discrete``,
        ``cc-partial`` accepted).
    batch_size : int, optional
        Number of cases per batch, ``2p`` by default.
    rng : numpy.random.Generator or int, optional
    controls_per_case : int
        Controls per case in ``cc_partial``; controls per batch are
        ``controls_per_case * batch_size`` in ``cc_discrete``.
    max_retries : int
        Redraws of a ``cc_partial`` control that coincides with its case pair
        before the collision is accepted.
    """

    def __init__(self, events, mode, batch_size=None, rng=None, controls_per_case=1, max_retries=10):
        self.mode = canonical_mode(mode)
        if self.mode == "cc_partial" and not isinstance(events, ContinuousEvents):
            raise TypeError("cc_partial mode needs continuous events")
        if self.mode != "cc_partial" and not isinstance(events, DiscreteEvents):
            raise TypeError(f"{self.mode} mode needs discrete events")
        n = events.n if isinstance(events, ContinuousEvents) else events.n_positive
        if n == 0:
            raise ValueError("empty event store")
        if events.p < 2:
            raise ValueError("need at least two nodes")
        self.events = events
        self.batch_size = default_batch_size(events.p) if batch_size is None else int(batch_size)
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        self.controls_per_case = int(controls_per_case)
        if self.controls_per_case < 1:
            raise ValueError("controls_per_case must be >= 1")
        self.max_retries = int(max_retries)
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    @property
    def n_data(self):
        """``|E|`` for the current mode."""
        ev = self.events
        if self.mode == "cc_partial":
            return ev.n
        if self.mode == "cc_discrete":
            return ev.n_positive
        return ev.n_cells

    def sample(self):
        return getattr(self, "_" + self.mode)()

    __call__ = sample

    def _dense_discrete(self):
        ev, nb, rng = self.events, self.batch_size, self.rng
        k = rng.integers(0, ev.n_intervals, size=nb)
        i, j = _uniform_pairs(rng, ev.p, nb)
        y = ev.lookup(k, i, j)
        return MiniBatch("dense_discrete", nb, ev.n_cells / nb, i, j, ev.starts[k],
                         dt=ev.widths[k], count=y, interval=k)

    def full(self):
        """Every data point once with unit scale.

        Dense mode returns every cell. The case-control modes return every
        event (or positive cell) once, still with freshly drawn controls.
        """
        ev = self.events
        if self.mode == "dense_discrete":
            k, i, j = np.meshgrid(np.arange(ev.n_intervals), np.arange(ev.p), np.arange(ev.p), indexing="ij")
            keep = i != j
            k, i, j = k[keep], i[keep], j[keep]
            return MiniBatch("dense_discrete", k.size, 1.0, i, j, ev.starts[k], dt=ev.widths[k],
                             count=ev.lookup(k, i, j), interval=k)
        size = self.n_data
        b = getattr(self, "_" + self.mode)(np.arange(size))
        b.scale = 1.0
        return b

    def _zero_cells(self, size):
        ev, rng = self.events, self.rng
        if ev.n_zero <= 0:
            raise ValueError("no zero cells to draw controls from")
        k = np.empty(size, dtype=np.int64)
        i = np.empty(size, dtype=np.int64)
        j = np.empty(size, dtype=np.int64)
        todo = np.arange(size)
        for _ in range(1000):
            if todo.size == 0:
                break
            kk = rng.integers(0, ev.n_intervals, size=todo.size)
            ii, jj = _uniform_pairs(rng, ev.p, todo.size)
            ok = ev.lookup(kk, ii, jj) == 0
            k[todo[ok]], i[todo[ok]], j[todo[ok]] = kk[ok], ii[ok], jj[ok]
            todo = todo[~ok]
        if todo.size:
            raise RuntimeError("could not draw zero cells; data is nearly complete")
        return k, i, j

    def _cc_discrete(self, pick=None):
        ev, rng = self.events, self.rng
        if pick is None:
            pick = rng.integers(0, ev.n_positive, size=self.batch_size)
        nb = pick.size
        k = ev.interval[pick]
        n0 = self.controls_per_case * nb
        ck, ci, cj = self._zero_cells(n0)
        return MiniBatch("cc_discrete", nb, ev.n_positive / nb, ev.src[pick], ev.dst[pick],
                         ev.starts[k], dt=ev.widths[k], count=ev.count[pick], interval=k,
                         ctrl_src=ci, ctrl_dst=cj, ctrl_time=ev.starts[ck], ctrl_dt=ev.widths[ck],
                         ctrl_interval=ck, control_weight=ev.n_zero / n0, N0=ev.n_zero, n0=n0)

    def _cc_partial(self, pick=None):
        ev, rng = self.events, self.rng
        if pick is None:
            pick = rng.integers(0, ev.n, size=self.batch_size)
        nb = pick.size
        i, j, t = ev.src[pick], ev.dst[pick], ev.time[pick]
        C = self.controls_per_case
        ci, cj = _uniform_pairs(rng, ev.p, (nb, C))
        for _ in range(self.max_retries):
            clash = (ci == i[:, None]) & (cj == j[:, None])
            if not clash.any():
                break
            ri, rj = _uniform_pairs(rng, ev.p, int(clash.sum()))
            ci[clash], cj[clash] = ri, rj
        return MiniBatch("cc_partial", nb, ev.n / nb, i, j, t, ctrl_src=ci, ctrl_dst=cj)


def sample_minibatch(events, mode, n_b=None, rng=None, **kwargs):
    """Draw a single mini-batch (convenience wrapper around :class:`Sampler`)."""
    return Sampler(events, mode, n_b, rng, **kwargs).sample()


@dataclass
class KernelPairHistory:
    """Capacity-bounded FIFO set of node pairs that entered the clustering kernel."""

    capacity: int = 100_000
    _pairs: OrderedDict = field(default_factory=OrderedDict, repr=False)

    def __len__(self):
        return len(self._pairs)

    def __contains__(self, pair):
        i, j = pair
        return (min(i, j), max(i, j)) in self._pairs

    @property
    def pairs(self):
        if not self._pairs:
            return np.empty((0, 2), dtype=np.int64)
        return np.array(list(self._pairs), dtype=np.int64)

    def add(self, i, j):
        if i == j:
            return
        key = (int(min(i, j)), int(max(i, j)))
        if key in self._pairs:
            return
        self._pairs[key] = None
        while len(self._pairs) > self.capacity:
            self._pairs.popitem(last=False)


def record_kernel_pairs(history, pairs, alpha_plus, radius):
    """Add the pairs whose pilot distance is within ``radius``.

    Returns the number of accepted pairs; pairs outside the kernel are
    rejected.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size == 0:
        return 0
    a = np.asarray(alpha_plus).reshape(np.shape(alpha_plus)[0], -1)
    dist = np.linalg.norm(a[pairs[:, 0]] - a[pairs[:, 1]], axis=1)
    ok = (dist <= radius) & (pairs[:, 0] != pairs[:, 1])
    for i, j in pairs[ok]:
        history.add(i, j)
    return int(ok.sum())


def sample_penalty_batch(history, size, rng):
    """Uniform draw with replacement of ``size`` pairs from the history."""
    pairs = history.pairs
    if len(pairs) == 0:
        return np.empty((0, 2), dtype=np.int64)
    return pairs[rng.integers(0, len(pairs), size=int(size))]
