"""Cubic B-spline (P-spline) bases and node trajectory coefficients."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class SplineBasis:
    """Clamped B-spline basis with equally spaced interior knots on ``[0, T]``.

    Parameters
    ----------
    n_basis : int
        Number of basis functions ``m``.
    horizon : float
        Right end ``T`` of the domain.
    degree : int, optional
        Spline degree, 3 (cubic) by default. Lowered to ``n_basis - 1``
        when fewer than four basis functions are requested.
    """

    n_basis: int = 10
    horizon: float = 1.0
    degree: int = 3

    def __post_init__(self):
        if self.n_basis < 1:
            raise ValueError("n_basis must be >= 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        object.__setattr__(self, "degree", int(min(self.degree, self.n_basis - 1)))
        k, m = self.degree, self.n_basis
        inner = np.linspace(0.0, self.horizon, m - k + 1)
        knots = np.concatenate([np.zeros(k), inner, np.full(k, float(self.horizon))])
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def support(self):
        """Maximum number of nonzero basis functions at any time."""
        return self.degree + 1

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(~np.isfinite(t)) or np.any(t < 0) or np.any(t > self.horizon):
            raise ValueError(f"time outside [0, {self.horizon}]")
        return t

    def evaluate(self, t):
        """Nonzero basis values at each time.

        Returns
        -------
        index : ndarray of int, shape (n, degree + 1)
            Basis indices, consecutive and ascending.
        weight : ndarray, shape (n, degree + 1)
            Corresponding basis values; nonnegative, rows sum to 1.
        """
        t = np.atleast_1d(self._check(t))
        k, m, kn = self.degree, self.n_basis, self.knots
        mu = np.searchsorted(kn, t, side="right") - 1
        mu = np.clip(mu, k, m - 1)
        n = t.size
        N = np.zeros((n, k + 1))
        N[:, 0] = 1.0
        left = np.zeros((n, k + 1))
        right = np.zeros((n, k + 1))
        for j in range(1, k + 1):
            left[:, j] = t - kn[mu + 1 - j]
            right[:, j] = kn[mu + j] - t
            saved = np.zeros(n)
            for r in range(j):
                temp = N[:, r] / (right[:, r + 1] + left[:, j - r])
                N[:, r] = saved + right[:, r + 1] * temp
                saved = left[:, j - r] * temp
            N[:, j] = saved
        index = (mu - k)[:, None] + np.arange(k + 1)
        return index, N

    def eval_basis(self, t):
        """Sparse basis vector at a single time as ``[(index, weight), ...]``."""
        idx, w = self.evaluate(float(t))
        return [(int(i), float(v)) for i, v in zip(idx[0], w[0]) if v != 0.0]

    def dense(self, t):
        """Dense ``(n, m)`` design matrix."""
        idx, w = self.evaluate(t)
        out = np.zeros((idx.shape[0], self.n_basis))
        np.put_along_axis(out, idx, w, axis=1)
        return out

    def node_basis(self, t, nodes, static):
        """Basis rows for ``(node, time)`` pairs; static nodes use row 0 only."""
        idx, w = self.evaluate(t)
        if static is not None and np.any(static):
            s = np.asarray(static)[nodes]
            if np.any(s):
                idx = idx.copy()
                w = w.copy()
                idx[s] = np.arange(self.support)
                w[s] = 0.0
                w[s, 0] = 1.0
        return idx, w

    def to_dict(self):
        return {"n_basis": self.n_basis, "horizon": self.horizon, "degree": self.degree,
                "knots": self.knots.tolist()}


@dataclass
class Coefficients:
    """Spline coefficients of a latent space model.

    Attributes
    ----------
    z : ndarray, shape (p, m, d)
        Node trajectory coefficients.
    beta : ndarray, shape (m, q)
        Shared covariate-effect coefficients (``q`` may be 0).
    propensity : ndarray, shape (p,) or None
        Per-node scalar propensities, when the model uses them.
    """

    z: np.ndarray
    beta: np.ndarray
    propensity: np.ndarray | None = None

    @classmethod
    def zeros(cls, p, m, d, q=0, propensity=False):
        return cls(np.zeros((p, m, d)), np.zeros((m, q)), np.zeros(p) if propensity else None)

    @property
    def shape(self):
        p, m, d = self.z.shape
        return p, m, d, self.beta.shape[1]

    @property
    def size(self):
        return self.z.size + self.beta.size + (0 if self.propensity is None else self.propensity.size)

    def ravel(self):
        parts = [self.z.ravel(), self.beta.ravel()]
        if self.propensity is not None:
            parts.append(self.propensity)
        return np.concatenate(parts)

    def unravel(self, vec):
        """New instance with this layout filled from a flat vector."""
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.size:
            raise ValueError("vector length does not match coefficient layout")
        nz, nb = self.z.size, self.beta.size
        z = vec[:nz].reshape(self.z.shape).copy()
        beta = vec[nz:nz + nb].reshape(self.beta.shape).copy()
        prop = None if self.propensity is None else vec[nz + nb:].copy()
        return Coefficients(z, beta, prop)

    def zeros_like(self):
        return self.unravel(np.zeros(self.size))

    def copy(self):
        return self.unravel(self.ravel())

    def check_finite(self):
        if not np.all(np.isfinite(self.ravel())):
            raise FloatingPointError("non-finite coefficients")


def positions(basis, z, nodes, t, static=None):
    """Latent positions ``z_i(t)`` for paired arrays of nodes and times."""
    nodes = np.asarray(nodes, dtype=np.int64)
    idx, w = basis.node_basis(np.asarray(t, dtype=float), nodes, static)
    return np.einsum("nk,nkd->nd", w, z[nodes[:, None], idx])


def position(basis, coeffs, i, t, static=None):
    """Position of a single node at time ``t``."""
    z = coeffs.z if isinstance(coeffs, Coefficients) else np.asarray(coeffs)
    if not 0 <= int(i) < z.shape[0]:
        raise IndexError(f"unknown node {i}")
    return positions(basis, z, [int(i)], [float(t)], static)[0]


def trajectories(basis, z, grid, static=None):
    """All node positions on a time grid, shape ``(p, len(grid), d)``."""
    B = basis.dense(grid)
    out = np.einsum("tk,pkd->ptd", B, z)
    if static is not None and np.any(static):
        out[np.asarray(static)] = z[np.asarray(static), 0][:, None, :]
    return out


def smoothness_penalty(z):
    """Sum of squared first differences of adjacent coefficient rows.

    Returns the unscaled sum ``S = sum_i sum_k ||a[i,k] - a[i,k-1]||^2``
    and its gradient with respect to ``z``. The penalty on the objective is
    ``-gamma_smooth * S``.
    """
    z = np.asarray(z, dtype=float)
    diff = np.diff(z, axis=1)
    S = float(np.sum(diff * diff))
    grad = np.zeros_like(z)
    grad[:, 1:] += 2.0 * diff
    grad[:, :-1] -= 2.0 * diff
    return S, grad


def save_coefficients(path, coeffs, basis, extra=None):
    """Write coefficients as a flat CSV matrix plus a JSON sidecar.

    The CSV has one row per node holding the ``m*d`` trajectory coefficients
    (row-major over ``(m, d)``), then the propensity if present. Covariate
    coefficients go to the sidecar.
    """
    path = Path(path)
    p, m, d, q = coeffs.shape
    mat = coeffs.z.reshape(p, m * d)
    if coeffs.propensity is not None:
        mat = np.column_stack([mat, coeffs.propensity])
    np.savetxt(path.with_suffix(".csv"), mat, delimiter=",", fmt="%.17g")
    meta = {"p": p, "m": m, "d": d, "q": q, "T": basis.horizon, "degree": basis.degree,
            "knots": basis.knots.tolist(), "propensity": coeffs.propensity is not None,
            "beta": coeffs.beta.tolist()}
    if extra:
        meta.update(extra)
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2))


def load_coefficients(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    p, m, d, q = meta["p"], meta["m"], meta["d"], meta["q"]
    mat = np.loadtxt(path.with_suffix(".csv"), delimiter=",", ndmin=2).reshape(p, -1)
    z = mat[:, :m * d].reshape(p, m, d)
    prop = mat[:, m * d] if meta["propensity"] else None
    beta = np.asarray(meta["beta"], dtype=float).reshape(m, q)
    basis = SplineBasis(m, meta["T"], meta["degree"])
    return Coefficients(z, beta, prop), basis
