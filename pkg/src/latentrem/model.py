"""Rate function, likelihoods and the penalized mini-batch loss.

The log-rate of the directed pair ``(i, j)`` at time ``t`` is::

    eta = m(z_i(t), z_j(t)) + beta(t) . x_ij(t) [+ a_i + a_j]

with ``m`` either a scaled inner product or the negative squared Euclidean
distance, ``beta(t)`` a spline shared by all pairs and ``a`` optional node
propensities. Every likelihood returns its value and the gradient with
respect to all coefficients as a :class:`~latentrem.splines.Coefficients`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .splines import Coefficients, SplineBasis, smoothness_penalty

ETA_CLAMP = 40.0


@dataclass(frozen=True)
class SimilarityConfig:
    """Similarity between latent positions.

    ``kind`` is ``"neg_sq_euclid"`` or ``"inner_product"``; ``scale`` is the
    scalar multiplier of the inner product. ``unit_norm`` (inner product only)
    projects coefficient rows onto the unit sphere after each update.
    """

    kind: str = "neg_sq_euclid"
    scale: float = 1.0
    unit_norm: bool = False

    def __post_init__(self):
        if self.kind not in ("neg_sq_euclid", "inner_product"):
            raise ValueError(f"unknown similarity {self.kind!r}")
        if not np.isfinite(self.scale):
            raise ValueError("scale must be finite")
        if self.unit_norm and self.kind != "inner_product":
            raise ValueError("unit_norm is only valid with the inner product")


@dataclass
class CovariateSpec:
    """Pair covariates entering the log-rate through ``beta(t)``.

    Parameters
    ----------
    intercept : bool
        Prepend a constant covariate 1 (a time-varying baseline).
    exogenous : callable, optional
        ``f(src, dst, t) -> array (n, q_x)`` of exogenous covariates.
    endogenous : callable, optional
        Same signature for precomputed endogenous statistics.
    propensity : bool
        Add free per-node propensities ``a_i + a_j``.
    n_exogenous, n_endogenous : int
        Number of columns returned by the callables.
    """

    intercept: bool = False
    exogenous: Callable | None = None
    endogenous: Callable | None = None
    propensity: bool = False
    n_exogenous: int = 0
    n_endogenous: int = 0

    @property
    def q(self):
        return int(self.intercept) + self.n_exogenous + self.n_endogenous

    def values(self, src, dst, t):
        cols = []
        n = len(src)
        if self.intercept:
            cols.append(np.ones((n, 1)))
        for f, k in ((self.exogenous, self.n_exogenous), (self.endogenous, self.n_endogenous)):
            if k:
                v = np.asarray(f(src, dst, t), dtype=float).reshape(n, k)
                cols.append(v)
        if not cols:
            return np.zeros((n, 0))
        return np.hstack(cols)


def piecewise_table(table, boundaries):
    """Covariate callable from a dense ``(K, p, p, q)`` table constant on intervals."""
    table = np.asarray(table, dtype=float)
    b = np.asarray(boundaries, dtype=float)

    def f(src, dst, t):
        k = np.clip(np.searchsorted(b, t, side="right") - 1, 0, table.shape[0] - 1)
        return table[k, src, dst]
    return f


@dataclass
class _Cache:
    src: np.ndarray
    dst: np.ndarray
    idx_t: np.ndarray
    w_t: np.ndarray
    idx_i: np.ndarray
    w_i: np.ndarray
    idx_j: np.ndarray
    w_j: np.ndarray
    zi: np.ndarray
    zj: np.ndarray
    x: np.ndarray
    live: np.ndarray


@dataclass
class RateModel:
    """Log-linear rate model over spline trajectories."""

    basis: SplineBasis
    d: int = 2
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    covariates: CovariateSpec = field(default_factory=CovariateSpec)
    static: np.ndarray | None = None

    def init_coefficients(self, p, rng=None, scale=0.0):
        c = Coefficients.zeros(p, self.basis.n_basis, self.d, self.covariates.q,
                               self.covariates.propensity)
        if scale:
            rng = np.random.default_rng(rng)
            c.z += scale * rng.standard_normal(c.z.shape)
        return c

    def forward(self, coeffs, src, dst, t):
        """Log-rates for paired arrays; returns ``(eta, cache)``."""
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        t = np.asarray(t, dtype=float).ravel()
        idx_t, w_t = self.basis.evaluate(t)
        idx_i, w_i = self._node_rows(idx_t, w_t, src)
        idx_j, w_j = self._node_rows(idx_t, w_t, dst)
        z = coeffs.z
        zi = np.einsum("nk,nkd->nd", w_i, z[src[:, None], idx_i])
        zj = np.einsum("nk,nkd->nd", w_j, z[dst[:, None], idx_j])
        sim = self.similarity
        if sim.kind == "neg_sq_euclid":
            diff = zi - zj
            eta = -np.einsum("nd,nd->n", diff, diff)
        else:
            eta = sim.scale * np.einsum("nd,nd->n", zi, zj)
        x = self.covariates.values(src, dst, t)
        if x.shape[1]:
            beta_t = np.einsum("nk,nkq->nq", w_t, coeffs.beta[idx_t])
            eta = eta + np.einsum("nq,nq->n", beta_t, x)
        if coeffs.propensity is not None:
            eta = eta + coeffs.propensity[src] + coeffs.propensity[dst]
        live = np.abs(eta) < ETA_CLAMP
        eta = np.clip(eta, -ETA_CLAMP, ETA_CLAMP)
        return eta, _Cache(src, dst, idx_t, w_t, idx_i, w_i, idx_j, w_j, zi, zj, x, live)

    def _node_rows(self, idx, w, nodes):
        if self.static is None or not np.any(self.static[nodes]):
            return idx, w
        s = self.static[nodes]
        idx, w = idx.copy(), w.copy()
        idx[s] = np.arange(idx.shape[1])
        w[s] = 0.0
        w[s, 0] = 1.0
        return idx, w

    def backward(self, coeffs, cache, d_eta):
        """Chain rule from ``d(objective)/d(eta)`` to all coefficients."""
        g = coeffs.zeros_like()
        d_eta = np.where(cache.live, np.asarray(d_eta, dtype=float).ravel(), 0.0)
        sim = self.similarity
        if sim.kind == "neg_sq_euclid":
            dzi = -2.0 * (cache.zi - cache.zj) * d_eta[:, None]
            dzj = -dzi
        else:
            dzi = sim.scale * cache.zj * d_eta[:, None]
            dzj = sim.scale * cache.zi * d_eta[:, None]
        p, m, d = coeffs.z.shape
        flat = np.concatenate([(cache.src[:, None] * m + cache.idx_i).ravel(),
                               (cache.dst[:, None] * m + cache.idx_j).ravel()])
        vals = np.concatenate([(cache.w_i[:, :, None] * dzi[:, None, :]).reshape(-1, d),
                               (cache.w_j[:, :, None] * dzj[:, None, :]).reshape(-1, d)])
        gz = g.z.reshape(p * m, d)
        for c in range(d):
            gz[:, c] = np.bincount(flat, weights=vals[:, c], minlength=p * m)
        if cache.x.shape[1]:
            contrib = cache.w_t[:, :, None] * (cache.x * d_eta[:, None])[:, None, :]
            q = cache.x.shape[1]
            gb = g.beta
            flat_t = cache.idx_t.ravel()
            cv = contrib.reshape(-1, q)
            for c in range(q):
                gb[:, c] = np.bincount(flat_t, weights=cv[:, c], minlength=m)
        if coeffs.propensity is not None:
            g.propensity[:] = (np.bincount(cache.src, weights=d_eta, minlength=p)
                               + np.bincount(cache.dst, weights=d_eta, minlength=p))
        return g

    def project(self, coeffs):
        """Apply the unit-norm constraint in place (hyper-sphere variant)."""
        if self.similarity.unit_norm:
            nrm = np.linalg.norm(coeffs.z, axis=2, keepdims=True)
            coeffs.z /= np.where(nrm > 0, nrm, 1.0)
        return coeffs


def log_rate(model, coeffs, i, j, t):
    """Log-rate of a single directed pair at time ``t``."""
    if i == j:
        raise ValueError("self-loops have no rate")
    p = coeffs.z.shape[0]
    if not (0 <= i < p and 0 <= j < p):
        raise IndexError("node index out of range")
    eta, _ = model.forward(coeffs, [i], [j], [t])
    return float(eta[0])


def _poisson_terms(model, coeffs, src, dst, t, dt, y, weight):
    eta, cache = model.forward(coeffs, src, dst, t)
    mu = np.exp(eta) * dt
    y = np.asarray(y, dtype=float)
    # log(lambda*dt) only matters where y > 0
    val = weight * (-mu + y * (eta + np.log(dt)))
    d_eta = weight * (y - mu)
    return float(np.sum(val)), cache, d_eta


def loglik_discrete(model, coeffs, src, dst, t, dt, y, weight=1.0):
    """Poisson interval log-likelihood ``sum -lambda dt + y log(lambda dt)``.

    ``t`` is the interval start at which the rate is evaluated and ``dt`` the
    interval width. Returns ``(value, gradient)``.
    """
    dt = np.broadcast_to(np.asarray(dt, dtype=float), np.shape(src))
    if np.any(dt <= 0):
        raise ValueError("interval widths must be positive")
    if np.any(np.asarray(y) < 0):
        raise ValueError("counts must be nonnegative")
    val, cache, d_eta = _poisson_terms(model, coeffs, src, dst, t, dt, y, weight)
    return val, model.backward(coeffs, cache, d_eta)


def loglik_discrete_cc(model, coeffs, cases, controls, N0, n0=None, case_weight=1.0):
    """Case-control Poisson likelihood with zero cells reweighted by ``N0/n0``.

    ``cases`` is ``(src, dst, t, dt, y)`` with ``y > 0``; ``controls`` is
    ``(src, dst, t, dt)`` drawn from zero cells. ``case_weight`` rescales the
    case part (``|E|/|B|`` inside a mini-batch).
    """
    csrc, cdst, ct, cdt = (np.asarray(a) for a in controls)
    n0 = csrc.size if n0 is None else int(n0)
    if n0 <= 0 or csrc.size == 0:
        raise ValueError("case-control likelihood needs at least one control")
    src, dst, t, dt, y = cases
    if np.any(np.asarray(y) <= 0):
        raise ValueError("cases must have positive counts")
    v1, g1 = loglik_discrete(model, coeffs, src, dst, t, dt, y, weight=case_weight)
    w0 = N0 / n0
    eta, cache = model.forward(coeffs, csrc, cdst, ct)
    mu = np.exp(eta) * cdt
    v0 = -w0 * float(np.sum(mu))
    g0 = model.backward(coeffs, cache, -w0 * mu)
    return v1 + v0, _add(g1, g0)


def loglik_partial_cc(model, coeffs, src, dst, t, ctrl_src, ctrl_dst, weight=1.0):
    """Sampled-risk-set partial likelihood ``sum log lambda / (lambda + sum lambda*)``.

    ``ctrl_src``/``ctrl_dst`` have shape ``(n,)`` (one control per case) or
    ``(n, C)``. Controls are evaluated at their case's time.
    """
    src = np.asarray(src)
    n = src.size
    cs = np.asarray(ctrl_src).reshape(n, -1)
    cd = np.asarray(ctrl_dst).reshape(n, -1)
    C = cs.shape[1]
    t = np.asarray(t, dtype=float)
    all_src = np.concatenate([src, cs.ravel()])
    all_dst = np.concatenate([np.asarray(dst), cd.ravel()])
    all_t = np.concatenate([t, np.repeat(t, C)])
    eta, cache = model.forward(coeffs, all_src, all_dst, all_t)
    e_case = eta[:n]
    e_ctrl = eta[n:].reshape(n, C)
    stack = np.column_stack([e_case, e_ctrl])
    lse = np.logaddexp.reduce(stack, axis=1)
    val = weight * float(np.sum(e_case - lse))
    prob = np.exp(stack - lse[:, None])
    d_case = weight * (1.0 - prob[:, 0])
    d_ctrl = -weight * prob[:, 1:]
    d_eta = np.concatenate([d_case, d_ctrl.ravel()])
    return val, model.backward(coeffs, cache, d_eta)


def _add(a, b):
    out = a.copy()
    out.z += b.z
    out.beta += b.beta
    if out.propensity is not None:
        out.propensity += b.propensity
    return out


def batch_loglik(model, coeffs, batch):
    """Unscaled likelihood ``l_B`` of a :class:`~latentrem.sampler.MiniBatch` and its gradient.

    In ``cc_discrete`` mode the control part already carries ``N0/n0`` and
    the case part is unscaled, so that ``scale * value`` is not meaningful;
    use :func:`assemble_loss`, which applies ``|E|/|B|`` to the case part only.
    """
    if batch.mode == "dense_discrete":
        return loglik_discrete(model, coeffs, batch.src, batch.dst, batch.time, batch.dt, batch.count)
    if batch.mode == "cc_partial":
        return loglik_partial_cc(model, coeffs, batch.src, batch.dst, batch.time,
                                 batch.ctrl_src, batch.ctrl_dst)
    if batch.mode == "cc_discrete":
        return loglik_discrete_cc(model, coeffs,
                                  (batch.src, batch.dst, batch.time, batch.dt, batch.count),
                                  (batch.ctrl_src, batch.ctrl_dst, batch.ctrl_time, batch.ctrl_dt),
                                  batch.N0, batch.n0)
    raise ValueError(f"unknown mode {batch.mode!r}")


def scaled_batch_loglik(model, coeffs, batch):
    """Mini-batch estimate of the full-data likelihood and its gradient."""
    if batch.mode == "cc_discrete":
        return loglik_discrete_cc(model, coeffs,
                                  (batch.src, batch.dst, batch.time, batch.dt, batch.count),
                                  (batch.ctrl_src, batch.ctrl_dst, batch.ctrl_time, batch.ctrl_dt),
                                  batch.N0, batch.n0, case_weight=batch.scale)
    val, g = batch_loglik(model, coeffs, batch)
    g.z *= batch.scale
    g.beta *= batch.scale
    if g.propensity is not None:
        g.propensity *= batch.scale
    return batch.scale * val, g


@dataclass
class MiniBatchLoss:
    """Penalized mini-batch objective (to be maximized)."""

    loglik: float
    p_smooth: float
    p_clust: float
    total: float
    grad: Coefficients
    scale: float


def clust_penalty_value(z, centroids, gamma_clust):
    diff = z - centroids
    return -gamma_clust * float(np.sum(diff * diff)), -2.0 * gamma_clust * diff


def assemble_loss(model, coeffs, batch, gamma_smooth=0.0, gamma_clust=0.0, centroids=None):
    """``(|E|/|B|) l_B + P_smooth + P_clust`` with its full gradient.

    Penalties are evaluated over all node coefficients; centroids are held
    constant.
    """
    ll, grad = scaled_batch_loglik(model, coeffs, batch)
    S, gS = smoothness_penalty(coeffs.z)
    p_smooth = -gamma_smooth * S
    grad.z += -gamma_smooth * gS
    p_clust = 0.0
    if centroids is not None and gamma_clust:
        p_clust, gC = clust_penalty_value(coeffs.z, centroids, gamma_clust)
        grad.z += gC
    return MiniBatchLoss(ll, p_smooth, p_clust, ll + p_smooth + p_clust, grad, batch.scale)


def full_loglik_discrete(model, coeffs, events):
    """Exact Poisson log-likelihood over every cell (small networks only)."""
    p, K = events.p, events.n_intervals
    k, i, j = np.meshgrid(np.arange(K), np.arange(p), np.arange(p), indexing="ij")
    keep = i != j
    k, i, j = k[keep], i[keep], j[keep]
    y = events.lookup(k, i, j)
    return loglik_discrete(model, coeffs, i, j, events.starts[k], events.widths[k], y)
