"""Adam-style gradient ascent and the patience stopping rule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """Moment estimates and settings for one parameter vector.

    ``variant="ratio"`` divides the first moment by the second moment
    (``m / v``); ``variant="sqrt"`` is the usual ``m / sqrt(v)``.
    ``bias_correction=False`` reproduces the uncorrected moments.
    """

    size: int
    lr: float = 1e-2
    xi1: float = 0.9
    xi2: float = 0.999
    eps: float = 1e-8
    variant: str = "sqrt"
    bias_correction: bool = True
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)
    k: int = 0

    def __post_init__(self):
        if not (0 <= self.xi1 < 1 and 0 <= self.xi2 < 1):
            raise ValueError("EWMA decays must lie in [0, 1)")
        if self.lr <= 0:
            raise ValueError("step size must be positive")
        if self.variant not in ("ratio", "sqrt"):
            raise ValueError(f"unknown Adam variant {self.variant!r}")
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)


def adam_step(state, grad, params):
    """One ascent step; returns ``(state, new_params)``.

    ``state`` is updated in place and also returned.
    """
    g = np.asarray(grad, dtype=float)
    if g.shape != state.m.shape:
        raise ValueError(f"gradient has shape {g.shape}, expected {state.m.shape}")
    bad = ~np.isfinite(g)
    if bad.any():
        raise FloatingPointError(f"non-finite gradient at parameter index {int(np.flatnonzero(bad)[0])}")
    s = state
    s.k += 1
    s.m *= s.xi1
    s.m += (1.0 - s.xi1) * g
    s.v *= s.xi2
    s.v += (1.0 - s.xi2) * g * g
    if s.bias_correction:
        m_hat = s.m / (1.0 - s.xi1 ** s.k)
        v_hat = s.v / (1.0 - s.xi2 ** s.k)
    else:
        m_hat, v_hat = s.m, s.v
    denom = v_hat if s.variant == "ratio" else np.sqrt(v_hat)
    step = s.lr * m_hat / (denom + s.eps)
    return s, np.asarray(params, dtype=float) + step


class Adam:
    """Stateful wrapper: ``opt.step(params, grad)`` returns updated params."""

    def __init__(self, size, **kwargs):
        self.state = AdamState(size, **kwargs)

    def step(self, params, grad):
        _, out = adam_step(self.state, grad, params)
        return out


class StoppingRule:
    """Stop when an EWMA-smoothed trace has not reached a new maximum for
    ``patience`` consecutive updates."""

    def __init__(self, patience=2000, smoothing=0.0):
        self.patience = int(patience)
        self.smoothing = float(smoothing)
        self.best = -np.inf
        self.best_iter = -1
        self.n = 0
        self._s = None

    def update(self, value):
        """Record a value; return True when the run should stop."""
        v = float(value)
        if self._s is None or not np.isfinite(self._s):
            self._s = v
        else:
            self._s = self.smoothing * self._s + (1.0 - self.smoothing) * v
        if self._s > self.best:
            self.best = self._s
            self.best_iter = self.n
        self.n += 1
        return self.n - 1 - self.best_iter >= self.patience

    @property
    def smoothed(self):
        return self._s


def stopping_check(trace, patience, smoothing=0.0):
    """``"stop"`` iff the trace's last new maximum is ``patience`` or more
    entries before its end, else ``"continue"``."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    rule = StoppingRule(patience, smoothing)
    stop = False
    for v in trace:
        stop = rule.update(v)
    return "stop" if stop else "continue"
