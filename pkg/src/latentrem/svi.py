"""Stochastic variational inference for latent space relational event models.

The variational family is a diagonal Gaussian over every coefficient and
over ``(log gamma_smooth, log gamma_clust)``. Each iteration draws a single
reparameterized coefficient sample for the mini-batch likelihood; the
penalty expectations and the KL term are closed form.

The fitting schedule is: a pilot fit with the smoothness penalty only,
freezing of the pilot means, kernel components per candidate radius, a
clustered refit per radius, selection of the radius with the highest lower
bound, and optionally a nested refit inside each sufficiently large cluster.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .cluster import ClusterState, candidate_radii, pilot_freeze
from .events import ContinuousEvents, DiscreteEvents, discretize
from .model import CovariateSpec, RateModel, SimilarityConfig, scaled_batch_loglik
from .optim import AdamState, StoppingRule, adam_step
from .sampler import Sampler, canonical_mode
from .splines import Coefficients, SplineBasis, smoothness_penalty, trajectories

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
SMOOTH, CLUST = 0, 1


@dataclass
class VariationalState:
    """Diagonal Gaussian posterior over coefficients and log-hyperparameters.

    All variational parameters live in one flat vector ``theta``::

        [mu (n), log_sigma (n), hyper_mu (2), hyper_log_sigma (2)]

    where ``n`` is the number of model coefficients laid out as in
    ``template`` and the hyper entries are ``log gamma_smooth`` and
    ``log gamma_clust``.
    """

    template: Coefficients
    theta: np.ndarray
    prior_mu: float = 0.0
    prior_sd: float = 1.0
    hyper_prior_mu: float = 0.0
    hyper_prior_sd: float = 2.0
    n_samples: int = 1

    @classmethod
    def from_coefficients(cls, coeffs, sigma=1e-3, log_gamma=(0.0, 0.0), hyper_sigma=1e-3, **kw):
        n = coeffs.size
        theta = np.concatenate([coeffs.ravel(), np.full(n, np.log(sigma)),
                                np.asarray(log_gamma, dtype=float), np.full(2, np.log(hyper_sigma))])
        return cls(coeffs.zeros_like(), theta, **kw)

    @property
    def n(self):
        return self.template.size

    @property
    def mu(self):
        return self.theta[:self.n]

    @property
    def log_sigma(self):
        return self.theta[self.n:2 * self.n]

    @property
    def sigma(self):
        return np.exp(self.log_sigma)

    @property
    def hyper_mu(self):
        return self.theta[2 * self.n:2 * self.n + 2]

    @property
    def hyper_log_sigma(self):
        return self.theta[2 * self.n + 2:]

    @property
    def hyper_sigma(self):
        return np.exp(self.hyper_log_sigma)

    @property
    def nz(self):
        return self.template.z.size

    def mean(self):
        return self.template.unravel(self.mu)

    def z_mu(self):
        return self.mu[:self.nz].reshape(self.template.z.shape)

    def z_sigma(self):
        return self.sigma[:self.nz].reshape(self.template.z.shape)

    def expected_gamma(self, which):
        return float(np.exp(self.hyper_mu[which] + 0.5 * self.hyper_sigma[which] ** 2))

    def copy(self):
        out = VariationalState(self.template, self.theta.copy(), self.prior_mu, self.prior_sd,
                               self.hyper_prior_mu, self.hyper_prior_sd, self.n_samples)
        return out

    def zero_grad(self):
        return np.zeros_like(self.theta)


def reparam_sample(state, rng, eps=None):
    """Draw ``alpha* = mu + sigma * eps``; returns ``(alpha*, eps)``."""
    if eps is None:
        eps = rng.standard_normal(state.n)
    return state.mu + state.sigma * eps, eps


def _hyper_slot(state, which):
    return 2 * state.n + which, 2 * state.n + 2 + which


def expected_smooth(state):
    """Closed-form ``E_q[P_smooth]`` and its gradient with respect to ``theta``."""
    mu, sig = state.z_mu(), state.z_sigma()
    p, m, d = mu.shape
    S_mu, g_mu = smoothness_penalty(mu)
    # each row k appears in one difference at the ends, two inside
    cnt = np.full(m, 2.0)
    if m >= 1:
        cnt[0] = cnt[-1] = 1.0
    if m == 1:
        cnt[:] = 0.0
    Q = S_mu + float(np.sum(cnt[None, :, None] * sig * sig))
    Eg = state.expected_gamma(SMOOTH)
    half_n = 0.5 * p * d * (m - 1)
    value = half_n * state.hyper_mu[SMOOTH] - Eg * Q
    grad = state.zero_grad()
    nz = state.nz
    grad[:nz] = -Eg * g_mu.ravel()
    grad[state.n:state.n + nz] = (-Eg * 2.0 * cnt[None, :, None] * sig * sig).ravel()
    jm, js = _hyper_slot(state, SMOOTH)
    hs = state.hyper_sigma[SMOOTH]
    grad[jm] = half_n - Eg * Q
    grad[js] = -Eg * Q * hs * hs
    return float(value), grad


def expected_clust(state, c, members=None, n_groups=0):
    """Closed-form ``E_q[P_clust]`` with constant centroids ``c``.

    ``members`` masks the nodes that belong to a cluster of size two or more;
    singletons carry no clustering penalty. ``None`` means every node.
    ``n_groups`` is the number of such clusters: deviations from a component
    mean sum to zero, so each cluster of ``n_c`` nodes has ``n_c - 1`` free
    coefficient blocks in the log-normalizer.
    """
    mu, sig = state.z_mu(), state.z_sigma()
    p, m, d = mu.shape
    mask = np.ones(p, dtype=bool) if members is None else np.asarray(members, dtype=bool)
    diff = (mu - c) * mask[:, None, None]
    s2 = sig * sig * mask[:, None, None]
    D = float(np.sum(diff * diff) + np.sum(s2))
    Eg = state.expected_gamma(CLUST)
    half_n = 0.5 * (int(mask.sum()) - int(n_groups)) * d * m
    value = half_n * state.hyper_mu[CLUST] - Eg * D
    grad = state.zero_grad()
    nz = state.nz
    grad[:nz] = (-2.0 * Eg * diff).ravel()
    grad[state.n:state.n + nz] = (-2.0 * Eg * s2).ravel()
    jm, js = _hyper_slot(state, CLUST)
    hs = state.hyper_sigma[CLUST]
    grad[jm] = half_n - Eg * D
    grad[js] = -Eg * D * hs * hs
    return float(value), grad


def kl_to_prior(state):
    """Closed-form KL divergence of the variational density from the prior."""
    n = state.n
    mu = np.concatenate([state.mu, state.hyper_mu])
    ls = np.concatenate([state.log_sigma, state.hyper_log_sigma])
    m0 = np.concatenate([np.full(n, state.prior_mu), np.full(2, state.hyper_prior_mu)])
    s0 = np.concatenate([np.full(n, state.prior_sd), np.full(2, state.hyper_prior_sd)])
    r = np.exp(2.0 * ls) / s0 ** 2
    dm = (mu - m0) / s0
    value = 0.5 * float(np.sum(r + dm * dm - 1.0 - np.log(r)))
    g_mu = (mu - m0) / s0 ** 2
    g_ls = r - 1.0
    grad = state.zero_grad()
    grad[:n] = g_mu[:n]
    grad[n:2 * n] = g_ls[:n]
    grad[2 * n:2 * n + 2] = g_mu[n:]
    grad[2 * n + 2:] = g_ls[n:]
    return value, grad


@dataclass
class LowerBoundReport:
    """Components of one mini-batch lower bound evaluation."""

    loglik: float
    e_smooth: float
    e_clust: float
    neg_kl: float
    total: float

    def as_row(self):
        return (self.loglik, self.e_smooth, self.e_clust, self.total)


def lower_bound(state, model, batch, rng, cluster=None, eps=None, centroids=None):
    """Mini-batch lower bound and its gradient with respect to ``theta``.

    Parameters
    ----------
    cluster : ClusterState, optional
        Kernel partition; without it the clustering term is absent.
    eps : ndarray, optional
        Standard normal draws for the reparameterized sample.
    centroids : ndarray, optional
        Centroids to hold constant; computed from the current means by default.
    """
    grad = state.zero_grad()
    ll = 0.0
    H = max(1, int(state.n_samples))
    n = state.n
    for h in range(H):
        a, e = reparam_sample(state, rng, eps if (eps is not None and H == 1) else None)
        coeffs = state.template.unravel(a)
        v, g = scaled_batch_loglik(model, coeffs, batch)
        gv = g.ravel()
        ll += v / H
        grad[:n] += gv / H
        grad[n:2 * n] += gv * e * state.sigma / H
    es, gs = expected_smooth(state)
    grad += gs
    ec = 0.0
    if cluster is not None and cluster.n_clusters < len(cluster.labels):
        c = cluster.centroids(state.z_mu()) if centroids is None else centroids
        ec, gc = expected_clust(state, c, cluster.clustered, cluster.n_groups)
        grad += gc
    kl, gk = kl_to_prior(state)
    grad -= gk
    total = ll + es + ec - kl
    return LowerBoundReport(ll, es, ec, -kl, total), grad


@dataclass
class FitConfig:
    """Settings for one variational fit."""

    n_iter: int = 3000
    batch_size: int | None = None
    lr: float = 1e-2
    xi1: float = 0.9
    xi2: float = 0.999
    adam_variant: str = "sqrt"
    bias_correction: bool = True
    patience: int = 2000
    smoothing: float = 0.99
    sigma_init: float = 1e-3
    init_scale: float = 0.01
    prior_sd: float = 1.0
    hyper_prior_sd: float = 2.0
    log_gamma_init: tuple = (0.0, 0.0)
    controls_per_case: int = 1
    n_eval_batches: int = 20
    log_every: int = 0
    seed: int = 0
    tail_average: float = 0.0


@dataclass
class FitResult:
    state: VariationalState
    trace: np.ndarray
    elbo: float
    n_iter: int
    cluster: ClusterState | None = None
    stopped_early: bool = False

    @property
    def coefficients(self):
        return self.state.mean()

    def trajectories(self, model, grid):
        return trajectories(model.basis, self.state.z_mu(), grid, model.static)


def _adam_for(state, cfg):
    return AdamState(state.theta.size, lr=cfg.lr, xi1=cfg.xi1, xi2=cfg.xi2,
                     variant=cfg.adam_variant, bias_correction=cfg.bias_correction)


def elbo_step(state, model, sampler, adam, rng, cluster=None):
    """One simultaneous ascent step on all variational parameters."""
    batch = sampler.sample()
    report, grad = lower_bound(state, model, batch, rng, cluster)
    if not np.isfinite(report.total):
        raise FloatingPointError(f"non-finite lower bound: {report}")
    _, state.theta = adam_step(adam, grad, state.theta)
    if model.similarity.unit_norm:
        z = state.theta[:state.nz].reshape(state.template.z.shape)
        nrm = np.linalg.norm(z, axis=2, keepdims=True)
        z /= np.where(nrm > 0, nrm, 1.0)
    return report


FULL_EVAL_CELLS = 2_000_000


def evaluate_elbo(state, model, events, mode, cfg, cluster=None, seed=12345):
    """Average lower bound over fresh batches with common random numbers.

    Small stores are evaluated on every cell (dense) or every event
    (case-control) at once, which removes the batch noise that otherwise
    swamps differences between partitions.
    """
    rng = np.random.default_rng(seed)
    sampler = Sampler(events, mode, cfg.batch_size, rng, cfg.controls_per_case)
    if sampler.n_data <= FULL_EVAL_CELLS:
        return float(lower_bound(state, model, sampler.full(), rng, cluster)[0].total)
    vals = [lower_bound(state, model, sampler.sample(), rng, cluster)[0].total
            for _ in range(max(1, cfg.n_eval_batches))]
    return float(np.mean(vals))


def fit_svi(model, events, mode, cfg=None, state=None, cluster=None, rng=None):
    """Run stochastic variational inference.

    Parameters
    ----------
    model : RateModel
    events : ContinuousEvents or DiscreteEvents
    mode : str
        Sampling mode, see :mod:`latentrem.sampler`.
    cfg : FitConfig
    state : VariationalState, optional
        Warm start; a fresh state is initialized otherwise.
    cluster : ClusterState, optional
        Enables the clustering penalty.
    """
    cfg = cfg or FitConfig()
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    mode = canonical_mode(mode)
    if state is None:
        state = init_state(model, events, cfg, rng)
    else:
        state = state.copy()
    sampler = Sampler(events, mode, cfg.batch_size, rng, cfg.controls_per_case)
    adam = _adam_for(state, cfg)
    stop = StoppingRule(cfg.patience, cfg.smoothing)
    trace = np.empty((cfg.n_iter, 5))
    it = 0
    early = False
    # iterate averaging over the last ``tail_average`` fraction of the run
    avg_from = cfg.n_iter - int(round(cfg.tail_average * cfg.n_iter)) if cfg.tail_average > 0 else None
    avg, n_avg = None, 0
    for it in range(cfg.n_iter):
        r = elbo_step(state, model, sampler, adam, rng, cluster)
        if avg_from is not None and it >= avg_from:
            n_avg += 1
            avg = state.theta.copy() if avg is None else avg + (state.theta - avg) / n_avg
        trace[it] = (it, r.loglik, r.e_smooth, r.e_clust, r.total)
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("iter %d elbo %.4g loglik %.4g", it, r.total, r.loglik)
        if stop.update(r.total):
            early = True
            break
    trace = trace[:it + 1]
    if avg is not None:
        state.theta = avg
    elbo = evaluate_elbo(state, model, events, mode, cfg, cluster)
    return FitResult(state, trace, elbo, it + 1, cluster, early)


def init_state(model, events, cfg, rng):
    p = events.p
    coeffs = model.init_coefficients(p, rng, cfg.init_scale)
    cov = model.covariates
    if cov.intercept and isinstance(events, DiscreteEvents):
        rate = events.total / (p * (p - 1) * events.horizon)
        coeffs.beta[:, 0] = np.log(max(rate, 1e-12))
    elif cov.intercept:
        rate = events.n / (p * (p - 1) * events.horizon)
        coeffs.beta[:, 0] = np.log(max(rate, 1e-12))
    model.project(coeffs)
    return VariationalState.from_coefficients(
        coeffs, sigma=cfg.sigma_init, log_gamma=cfg.log_gamma_init,
        prior_sd=cfg.prior_sd, hyper_prior_sd=cfg.hyper_prior_sd)


def select_radius(candidates, fit_procedure):
    """Pick the radius whose fit has the highest lower bound.

    ``fit_procedure(radius)`` returns an object with an ``elbo`` attribute.
    Ties go to the smaller radius. Returns ``(best_radius, table, fits)``
    where ``table`` lists ``(radius, elbo)`` per candidate.
    """
    cands = sorted(float(r) for r in candidates)
    if not cands:
        raise ValueError("need at least one candidate radius")
    fits = [fit_procedure(r) for r in cands]
    table = [(r, f.elbo) for r, f in zip(cands, fits)]
    best = max(range(len(cands)), key=lambda k: (fits[k].elbo, -k))
    return cands[best], table, fits


@dataclass
class ModelConfig:
    """Model structure shared by every fit of a pipeline."""

    d: int = 2
    n_basis: int = 10
    similarity: str = "neg_sq_euclid"
    scale: float = 1.0
    unit_norm: bool = False
    intercept: bool = True
    propensity: bool = False
    horizon: float | None = None

    def build(self, events, static=None):
        T = self.horizon if self.horizon is not None else events.horizon
        basis = SplineBasis(self.n_basis, T)
        cov = CovariateSpec(intercept=self.intercept, propensity=self.propensity)
        return RateModel(basis, self.d, SimilarityConfig(self.similarity, self.scale, self.unit_norm),
                         cov, None if static is None else np.asarray(static, dtype=bool))


@dataclass
class PipelineConfig:
    """Full fitting schedule."""

    model: ModelConfig = field(default_factory=ModelConfig)
    mode: str = "dense_discrete"
    n_intervals: int = 20
    pilot: FitConfig = field(default_factory=FitConfig)
    refit: FitConfig = field(default_factory=lambda: FitConfig(n_iter=1000))
    radii: list | None = None
    radius_quantiles: tuple = (0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5)
    cluster: bool = True
    nested_depth: int = 0
    nested_min_size: int = 10

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        model = ModelConfig(**d.pop("model", {}))
        pilot = FitConfig(**_tuplify(d.pop("pilot", {})))
        refit = FitConfig(**_tuplify(d.pop("refit", {})))
        if "radius_quantiles" in d:
            d["radius_quantiles"] = tuple(d["radius_quantiles"])
        return cls(model=model, pilot=pilot, refit=refit, **d)


def _tuplify(d):
    d = dict(d)
    if "log_gamma_init" in d:
        d["log_gamma_init"] = tuple(d["log_gamma_init"])
    return d


def prepare_events(events, mode, n_intervals):
    """Convert the store to what the sampling mode needs."""
    mode = canonical_mode(mode)
    if mode == "cc_partial":
        if not isinstance(events, ContinuousEvents):
            raise TypeError("cc_partial mode needs continuous events")
        return events
    if isinstance(events, ContinuousEvents):
        return discretize(events, n_intervals)
    return events


@dataclass
class PipelineResult:
    model: RateModel
    events: object
    pilot: FitResult
    alpha_plus: np.ndarray
    radius: float | None
    radius_table: list
    final: FitResult
    cluster: ClusterState | None
    children: list = field(default_factory=list)

    @property
    def labels(self):
        if self.cluster is None:
            return np.arange(self.events.p)
        return self.cluster.labels

    def tree(self, nodes=None, cluster_id=None):
        """Nested dictionary of clusters and their refits."""
        nodes = np.arange(self.events.p) if nodes is None else np.asarray(nodes)
        out = {"cluster": cluster_id, "nodes": [int(x) for x in nodes],
               "radius": self.radius, "labels": [int(x) for x in self.labels],
               "elbo": self.final.elbo,
               "coefficients": self.final.state.z_mu().tolist(), "children": []}
        for cid, sub_nodes, child in self.children:
            out["children"].append(child.tree(nodes[sub_nodes], int(cid)))
        return out


def fit_pipeline(events, cfg=None, static=None, seed=None, depth=None):
    """Pilot fit, radius selection by lower bound, clustered fit, nested refits."""
    cfg = cfg or PipelineConfig()
    mode = canonical_mode(cfg.mode)
    ev = prepare_events(events, mode, cfg.n_intervals)
    model = cfg.model.build(ev, static)
    base_seed = cfg.pilot.seed if seed is None else seed
    pilot_cfg = _with_seed(cfg.pilot, base_seed)
    pilot = fit_svi(model, ev, mode, pilot_cfg)
    alpha_plus = pilot_freeze(pilot.state.z_mu())
    radius, table, final, cstate = None, [], pilot, None
    if cfg.cluster and ev.p >= 2:
        radii = cfg.radii if cfg.radii else candidate_radii(alpha_plus, cfg.radius_quantiles)
        refit_cfg = _with_seed(cfg.refit, base_seed + 1)

        def refit(r):
            cs = ClusterState(alpha_plus, r)
            res = fit_svi(model, ev, mode, refit_cfg, state=pilot.state, cluster=cs)
            return res

        radius, elbos, fits = select_radius(radii, refit)
        k = [r for r, _ in elbos].index(radius)
        final = fits[k]
        cstate = final.cluster
        table = [(r, int(f.cluster.n_clusters), e) for (r, e), f in zip(elbos, fits)]
    result = PipelineResult(model, ev, pilot, alpha_plus, radius, table, final, cstate)
    depth = cfg.nested_depth if depth is None else depth
    if depth > 0 and cstate is not None:
        result.children = fit_nested(ev, cstate.labels, cfg, depth, static, base_seed)
    return result


def _with_seed(fc, seed):
    d = asdict(fc)
    d["seed"] = int(seed)
    return FitConfig(**d)


def fit_nested(events, labels, cfg, depth, static=None, seed=0):
    """Refit a fresh latent space inside every cluster of at least
    ``cfg.nested_min_size`` nodes, recursing ``depth`` levels.

    Returns a list of ``(cluster_id, member_indices, PipelineResult)``.
    Clusters without internal events are skipped with a warning.
    """
    if depth < 1:
        return []
    if cfg.nested_min_size < 2:
        raise ValueError("nested_min_size must be >= 2")
    labels = np.asarray(labels)
    out = []
    for cid in np.unique(labels):
        nodes = np.flatnonzero(labels == cid)
        if nodes.size < cfg.nested_min_size:
            continue
        sub = events.restrict(nodes)
        n_sub = sub.n if isinstance(sub, ContinuousEvents) else sub.n_positive
        if n_sub == 0:
            warnings.warn(f"cluster {cid} has no internal events; skipped", stacklevel=2)
            continue
        sub_static = None if static is None else np.asarray(static)[nodes]
        child = fit_pipeline(sub, cfg, sub_static, seed=seed + 1000 * (int(cid) + 1), depth=depth - 1)
        out.append((int(cid), nodes, child))
    return out


def save_checkpoint(path, state, cluster=None, extra=None):
    """Write the variational state and cluster state to an ``.npz`` archive."""
    p, m, d, q = state.template.shape
    header = {"version": CHECKPOINT_VERSION, "p": p, "m": m, "d": d, "q": q,
              "propensity": state.template.propensity is not None,
              "prior_mu": state.prior_mu, "prior_sd": state.prior_sd,
              "hyper_prior_mu": state.hyper_prior_mu, "hyper_prior_sd": state.hyper_prior_sd,
              "n_samples": state.n_samples, "radius": None if cluster is None else cluster.radius}
    if extra:
        header.update(extra)
    arrays = {"header": np.array(json.dumps(header)), "theta": state.theta}
    if cluster is not None:
        arrays["alpha_plus"] = np.asarray(cluster.alpha_plus)
        arrays["labels"] = np.asarray(cluster.labels)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as f:
        header = json.loads(str(f["header"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        tmpl = Coefficients.zeros(header["p"], header["m"], header["d"], header["q"], header["propensity"])
        state = VariationalState(tmpl, f["theta"].copy(), header["prior_mu"], header["prior_sd"],
                                 header["hyper_prior_mu"], header["hyper_prior_sd"], header["n_samples"])
        cluster = None
        if "labels" in f:
            cluster = ClusterState(f["alpha_plus"].copy(), header["radius"], f["labels"].copy())
    return state, cluster, header
