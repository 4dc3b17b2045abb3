"""Synthetic scenarios, Procrustes-aligned error, clustering accuracy and
the four simulation studies at desk scale."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .events import ContinuousEvents, DiscreteEvents, discretize
from .splines import SplineBasis, trajectories
from .svi import FitConfig, ModelConfig, PipelineConfig, fit_pipeline, fit_svi

MAX_CELL_MEAN = 1e6


@dataclass
class ScenarioConfig:
    """Generative scenario.

    Every node starts at the origin. Cluster ``g`` drifts along a ramp toward
    ``center_scale * u_g`` (``u_g`` evenly spread unit directions) with a
    shared random-walk wiggle of step ``wiggle_sd``; each node adds its own
    ramped offset with standard deviation ``within_sd``. Log-rates are
    ``intercept - ||z_i(t) - z_j(t)||^2``. With ``centered`` the node mean is
    removed at every time, since a common drift of all nodes leaves the
    likelihood unchanged and cannot be recovered.
    """

    p: int = 100
    d: int = 2
    m: int = 10
    T: float = 1.0
    n_clusters: int = 4
    cluster_sizes: list | None = None
    center_scale: float = 2.0
    within_sd: float = 0.5
    wiggle_sd: float = 0.3
    intercept: float = 2.0
    regime: str = "dense"
    n_intervals: int = 20
    replicates: int = 10
    seed: int = 0
    centered: bool = True

    def __post_init__(self):
        if self.cluster_sizes is not None:
            if sum(self.cluster_sizes) != self.p:
                raise ValueError("cluster sizes must sum to p")
            self.n_clusters = len(self.cluster_sizes)
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.regime not in ("dense", "sparse"):
            raise ValueError(f"unknown regime {self.regime!r}")

    def sizes(self):
        if self.cluster_sizes is not None:
            return list(self.cluster_sizes)
        base, extra = divmod(self.p, self.n_clusters)
        return [base + (g < extra) for g in range(self.n_clusters)]


@dataclass
class Truth:
    z: np.ndarray
    labels: np.ndarray
    basis: SplineBasis
    intercept: float

    def trajectories(self, grid):
        return trajectories(self.basis, self.z, grid)


def true_coefficients(cfg, rng):
    """Ground-truth spline coefficients and cluster labels."""
    m, d = cfg.m, cfg.d
    ramp = np.linspace(0.0, 1.0, m)[:, None]
    zs, labels = [], []
    K = cfg.n_clusters
    for g, size in enumerate(cfg.sizes()):
        if d == 1:
            u = np.array([1.0 if g % 2 == 0 else -1.0])
        else:
            ang = 2 * np.pi * g / K
            u = np.zeros(d)
            u[0], u[1] = np.cos(ang), np.sin(ang)
        steps = cfg.wiggle_sd * rng.standard_normal((m, d))
        steps[0] = 0.0
        wiggle = np.cumsum(steps, axis=0)
        center = ramp * (cfg.center_scale * u) + wiggle
        offsets = cfg.within_sd * rng.standard_normal((size, 1, d))
        zs.append(center[None] + ramp[None] * offsets)
        labels += [g] * size
    z = np.concatenate(zs)
    if cfg.centered:
        z -= z.mean(axis=0, keepdims=True)
    return z, np.asarray(labels)


def _pair_logrates(zt, intercept):
    sq = np.sum(zt * zt, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * zt @ zt.T
    return intercept - np.maximum(D, 0.0)


def generate(cfg, rng=None):
    """Draw ground truth and events.

    Dense scenarios produce Poisson interval counts with the rate fixed at
    each interval start; sparse scenarios produce continuous-time events by
    thinning a dominating homogeneous process.

    Returns
    -------
    truth : Truth
    events : DiscreteEvents or ContinuousEvents
    """
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    z, labels = true_coefficients(cfg, rng)
    basis = SplineBasis(cfg.m, cfg.T)
    truth = Truth(z, labels, basis, cfg.intercept)
    p = cfg.p
    off = ~np.eye(p, dtype=bool)
    if cfg.regime == "dense":
        b = np.linspace(0.0, cfg.T, cfg.n_intervals + 1)
        pos = trajectories(basis, z, b[:-1])
        K, S, D, Y = [], [], [], []
        for k in range(cfg.n_intervals):
            mean = np.exp(_pair_logrates(pos[:, k], cfg.intercept)) * (b[k + 1] - b[k])
            if mean.max() > MAX_CELL_MEAN:
                raise OverflowError("expected cell count exceeds 1e6; rescale the scenario")
            y = rng.poisson(mean) * off
            i, j = np.nonzero(y)
            K.append(np.full(i.size, k))
            S.append(i)
            D.append(j)
            Y.append(y[i, j])
        return truth, DiscreteEvents(np.concatenate(K), np.concatenate(S), np.concatenate(D),
                                     np.concatenate(Y), b, p)
    # sparse: thinning
    grid = np.linspace(0.0, cfg.T, 200)
    pos = trajectories(basis, z, grid)
    lam_max = 0.0
    for g in range(grid.size):
        lam_max = max(lam_max, float(np.exp(_pair_logrates(pos[:, g], cfg.intercept)[off].max())))
    lam_max *= 1.2
    n_pairs = p * (p - 1)
    n_cand = rng.poisson(lam_max * cfg.T * n_pairs)
    if n_cand > 5e7:
        raise OverflowError("too many candidate events; rescale the scenario")
    t = np.sort(rng.uniform(0.0, cfg.T, n_cand))
    i = rng.integers(0, p, n_cand)
    j = rng.integers(0, p - 1, n_cand)
    j = j + (j >= i)
    keep = np.zeros(n_cand, dtype=bool)
    for s in range(0, n_cand, 200_000):
        sl = slice(s, s + 200_000)
        B = basis.dense(t[sl])
        zi = np.einsum("nk,nkd->nd", B, z[i[sl]])
        zj = np.einsum("nk,nkd->nd", B, z[j[sl]])
        lam = np.exp(cfg.intercept - np.sum((zi - zj) ** 2, axis=1))
        if lam.max() > lam_max:
            raise RuntimeError("dominating rate violated; increase the grid")
        keep[sl] = rng.uniform(size=lam.size) * lam_max < lam
    return truth, ContinuousEvents(i[keep], j[keep], t[keep], cfg.T, p)


def procrustes_align(estimate, truth):
    """Best translation plus orthogonal map (reflections allowed) of
    ``estimate`` onto ``truth``; both are ``(..., d)`` point sets."""
    X = np.asarray(estimate, dtype=float).reshape(-1, np.shape(estimate)[-1])
    Y = np.asarray(truth, dtype=float).reshape(-1, np.shape(truth)[-1])
    if X.shape != Y.shape:
        raise ValueError("estimate and truth must have the same shape")
    mx, my = X.mean(0), Y.mean(0)
    Xc, Yc = X - mx, Y - my
    if np.allclose(Xc, 0.0):
        R = np.eye(X.shape[1])
    else:
        U, _, Vt = np.linalg.svd(Xc.T @ Yc)
        R = U @ Vt
    return (Xc @ R + my).reshape(np.shape(truth))


def procrustes_mse(estimate, truth):
    """Mean squared Euclidean residual after Procrustes alignment.

    ``estimate`` and ``truth`` are ``(p, n_times, d)`` trajectory arrays
    sampled on a common grid; one transform is fitted for all nodes and
    times.
    """
    aligned = procrustes_align(estimate, truth)
    r = aligned - np.asarray(truth, dtype=float)
    return float(np.mean(np.sum(r * r, axis=-1)))


def clustering_accuracy(labels, true_labels):
    """Fraction of nodes matched under the best one-to-one label mapping."""
    a = np.unique(np.asarray(labels), return_inverse=True)[1].ravel()
    b = np.unique(np.asarray(true_labels), return_inverse=True)[1].ravel()
    if a.size != b.size:
        raise ValueError("label vectors differ in length")
    C = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(C, (a, b), 1)
    r, c = linear_sum_assignment(C, maximize=True)
    return float(C[r, c].sum() / a.size)


GRID_POINTS = 50


def evaluate_fit(z_est, truth, static=None):
    grid = np.linspace(0.0, truth.basis.horizon, GRID_POINTS)
    est = trajectories(truth.basis, z_est, grid, static)
    return procrustes_mse(est, truth.trajectories(grid))


# --- experiments -----------------------------------------------------------

@dataclass
class Setting:
    """One point of an experiment: a scenario and how to fit it."""

    name: str
    scenario: ScenarioConfig
    mode: str = "dense_discrete"
    fit: FitConfig = field(default_factory=FitConfig)
    batch_factor: float | None = None
    cluster: bool = False
    data_regime: str | None = None


@dataclass
class EvalReport:
    setting: str
    replicate: int
    mse: float
    accuracy: float
    seconds: float
    n_events: int


def _fit_cfg(n_iter, **kw):
    kw.setdefault("tail_average", 0.5)
    return FitConfig(n_iter=n_iter, patience=10 ** 9, n_eval_batches=1, **kw)


def _base(p, replicates, **kw):
    # the reconstruction shared by the trend experiments
    kw = {"intercept": DENSE_INTERCEPT, "center_scale": 1.0, "within_sd": 0.5, **kw}
    return ScenarioConfig(p=p, replicates=replicates, **kw)


DENSE_INTERCEPT = 1.0
SPARSE_INTERCEPT = -0.5


def presets(which, scale="desk", replicates=10, n_iter=None):
    """Settings for each experiment.

    ``scale="desk"`` is the acceptance size; ``"tiny"`` is for quick runs.
    """
    tiny = scale == "tiny"
    if which == "vary_p":
        ps = (30, 60) if tiny else (100, 1000)
        it = n_iter or (300 if tiny else 20000)
        return [Setting(f"p={p}", _base(p, replicates), "dense_discrete", _fit_cfg(it)) for p in ps]
    if which == "vary_batch":
        p = 60 if tiny else 1000
        it = n_iter or (300 if tiny else 20000)
        sc = _base(p, replicates)
        return [Setting(f"n_b={f}p", sc, "dense_discrete", _fit_cfg(it, batch_size=max(1, int(round(f * p)))),
                        batch_factor=f) for f in (0.05, 2.0)]
    if which == "vary_sparsity":
        p = 40 if tiny else 200
        it = n_iter or (300 if tiny else 6000)
        dense = _base(p, replicates)
        sparse = replace(dense, regime="sparse", intercept=SPARSE_INTERCEPT)
        return [Setting("dense_poisson", dense, "dense_discrete", _fit_cfg(it)),
                Setting("sparse_cox", sparse, "cc_partial", _fit_cfg(it)),
                Setting("sparse_poisson", sparse, "dense_discrete", _fit_cfg(it))]
    if which == "vary_cluster_vicinity":
        p = 40 if tiny else 200
        it = n_iter or (300 if tiny else 3000)
        out = []
        for scale_ in (4.0, 2.0, 1.0, 0.5):
            sc = _base(p, replicates, n_clusters=2, center_scale=scale_, within_sd=0.1, wiggle_sd=0.3)
            out.append(Setting(f"scale={scale_}", sc, "dense_discrete", _fit_cfg(it), cluster=True))
        return out
    raise ValueError(f"unknown experiment {which!r}")


def run_replicate(setting, replicate):
    sc = replace(setting.scenario, seed=setting.scenario.seed + 7919 * replicate)
    truth, events = generate(sc)
    n_events = events.n if isinstance(events, ContinuousEvents) else events.total
    fit = replace(setting.fit, seed=sc.seed + 1)
    t0 = time.perf_counter()
    if setting.cluster:
        pcfg = PipelineConfig(model=ModelConfig(d=sc.d, n_basis=sc.m), mode=setting.mode,
                              n_intervals=sc.n_intervals, pilot=fit,
                              refit=replace(fit, n_iter=max(1, fit.n_iter // 3), n_eval_batches=10))
        res = fit_pipeline(events, pcfg)
        z = res.final.state.z_mu()
        acc = clustering_accuracy(res.labels, truth.labels)
    else:
        if setting.mode != "cc_partial" and isinstance(events, ContinuousEvents):
            events = discretize(events, sc.n_intervals)
        model = ModelConfig(d=sc.d, n_basis=sc.m).build(events)
        res = fit_svi(model, events, setting.mode, fit)
        z = res.state.z_mu()
        acc = float("nan")
    secs = time.perf_counter() - t0
    return EvalReport(setting.name, replicate, evaluate_fit(z, truth), acc, secs, int(n_events))


def run_experiment(which, settings=None, out_dir=None, n_jobs=1, **preset_kw):
    """Run every setting over its replicates.

    Returns ``(rows, summary)``: per-replicate :class:`EvalReport` rows and
    one dictionary per setting with mean/sd of MSE, accuracy and time. When
    ``out_dir`` is given, ``results.csv``, ``summary.csv`` and
    ``long.csv`` (setting, metric, value) are written there.
    """
    settings = settings or presets(which, **preset_kw)
    jobs = [(s, r) for s in settings for r in range(s.scenario.replicates)]
    if n_jobs == 1:
        rows = [run_replicate(s, r) for s, r in jobs]
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(n_jobs) as ex:
            rows = list(ex.map(run_replicate, *zip(*jobs)))
    summary = summarize(rows, [s.name for s in settings])
    if out_dir is not None:
        write_results(out_dir, which, rows, summary)
    return rows, summary


def _sd(x):
    x = np.asarray(x, dtype=float)
    return float(np.std(x, ddof=1)) if x.size > 1 else float("nan")


def summarize(rows, order):
    out = []
    for name in order:
        rs = [r for r in rows if r.setting == name]
        mse = [r.mse for r in rs]
        acc = [r.accuracy for r in rs]
        out.append({"setting": name, "n": len(rs), "mse_mean": float(np.mean(mse)), "mse_sd": _sd(mse),
                    "accuracy_mean": float(np.mean(acc)), "accuracy_sd": _sd(acc),
                    "seconds_mean": float(np.mean([r.seconds for r in rs]))})
    return out


def write_results(out_dir, which, rows, summary):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting", "replicate", "mse", "accuracy", "seconds", "n_events"])
        for r in rows:
            w.writerow([r.setting, r.replicate, r.mse, r.accuracy, r.seconds, r.n_events])
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]), lineterminator="\n")
        w.writeheader()
        for s in summary:
            w.writerow({k: ("" if isinstance(v, float) and np.isnan(v) else v) for k, v in s.items()})
    with open(out / "long.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "setting", "replicate", "metric", "value"])
        for r in rows:
            for metric in ("mse", "accuracy", "seconds"):
                w.writerow([which, r.setting, r.replicate, metric, getattr(r, metric)])


def load_scenario(path):
    """Scenario from a YAML or JSON file."""
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml
        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    return ScenarioConfig(**data)


def scenario_dict(cfg):
    return asdict(cfg)
