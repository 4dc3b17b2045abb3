import numpy as np
import pytest
from scipy.stats import special_ortho_group

from latentrem.events import ContinuousEvents
from latentrem.simkit import (ScenarioConfig, clustering_accuracy, evaluate_fit, generate, load_scenario,
                              presets, procrustes_mse, run_experiment, scenario_dict)


def test_generate_reproducible():
    a = generate(ScenarioConfig(p=20, seed=3))
    b = generate(ScenarioConfig(p=20, seed=3))
    np.testing.assert_array_equal(a[0].z, b[0].z)
    np.testing.assert_array_equal(a[1].count, b[1].count)


def test_truth_is_centered():
    truth, _ = generate(ScenarioConfig(p=30, seed=1))
    np.testing.assert_allclose(truth.z.mean(0), 0.0, atol=1e-12)


def test_far_clusters_interact_within():
    cfg = ScenarioConfig(p=40, n_clusters=2, center_scale=4.0, within_sd=0.1, regime="sparse", intercept=2.0, seed=2)
    truth, ev = generate(cfg)
    assert isinstance(ev, ContinuousEvents)
    same = truth.labels[ev.src] == truth.labels[ev.dst]
    # within-cluster pairs are about half of all pairs
    assert (~same).sum() < 0.2 * same.sum()


def test_cell_means_match_rates(monkeypatch):
    cfg = ScenarioConfig(p=6, n_intervals=4, intercept=1.0, seed=0)
    truth, _ = generate(cfg)
    from latentrem.splines import trajectories
    b = np.linspace(0, 1, 5)
    pos = trajectories(truth.basis, truth.z, b[:-1])
    lam = np.exp(1.0 - np.sum((pos[:, None] - pos[None]) ** 2, axis=-1)) * 0.25  # (p, p, K)
    reps = 3000
    tot = np.zeros((4, 6, 6))
    rng = np.random.default_rng(5)
    for r in range(reps):
        _, ev = _redraw(monkeypatch, cfg, truth, rng)
        y = np.zeros((4, 6, 6))
        y[ev.interval, ev.src, ev.dst] = ev.count
        tot += y
    mean = tot / reps
    target = np.moveaxis(lam, 2, 0)
    se = np.sqrt(target / reps)  # Poisson variance equals the mean
    off = ~np.eye(6, dtype=bool)
    assert np.all(np.abs(mean - target)[:, off] < 4.5 * se[:, off])


def _redraw(monkeypatch, cfg, truth, rng):
    """Counts for a fixed truth: the generator with its coefficient draw pinned."""
    import latentrem.simkit as sk
    monkeypatch.setattr(sk, "true_coefficients", lambda c, r: (truth.z, truth.labels))
    return sk.generate(cfg, rng)


def test_sparse_regime_is_sparse():
    _, ev = generate(ScenarioConfig(p=50, regime="sparse", intercept=np.log(40 / 50), seed=1))
    assert isinstance(ev, ContinuousEvents)
    assert ev.n < 50 * 49


def test_procrustes_examples(rng):
    X = rng.standard_normal((10, 7, 2))
    assert procrustes_mse(X, X) == pytest.approx(0.0, abs=1e-20)
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    assert procrustes_mse(X @ R + 5.0, X) < 1e-10
    M = special_ortho_group.rvs(3, random_state=2) @ np.diag([1, 1, -1])
    Y = rng.standard_normal((8, 5, 3))
    assert procrustes_mse(Y @ M - 2.5, Y) < 1e-10
    assert procrustes_mse(np.zeros_like(X), X) == pytest.approx(np.mean(np.sum((X - X.mean((0, 1))) ** 2, -1)))


def test_procrustes_noise_level(rng):
    vals = []
    for _ in range(20):
        X = rng.standard_normal((50, 20, 2)) * 3
        vals.append(procrustes_mse(X + rng.normal(0, 0.1, X.shape), X))
    assert abs(np.mean(vals) - 0.02) < 0.2 * 0.02


def test_accuracy_examples():
    a = np.array([0, 0, 1, 1, 2])
    assert clustering_accuracy(a, a) == 1.0
    assert clustering_accuracy(np.array([2, 2, 0, 0, 1]), a) == 1.0
    b = a.copy()
    b[4] = 0
    assert clustering_accuracy(b, a) == pytest.approx(4 / 5)
    with pytest.raises(ValueError):
        clustering_accuracy(a[:3], a)


def test_static_truth_recovered(monkeypatch):
    cfg = ScenarioConfig(p=30, n_clusters=3, wiggle_sd=0.0, center_scale=1.5, within_sd=0.3, intercept=1.5, seed=6)
    truth, ev = generate(cfg)
    # constant trajectories: the ramp is removed by taking the end point
    truth.z[:] = truth.z[:, -1:, :]
    _, ev = _redraw(monkeypatch, cfg, truth, np.random.default_rng(1))
    from latentrem.svi import FitConfig, ModelConfig, fit_svi
    model = ModelConfig(n_basis=4).build(ev, static=np.ones(30, dtype=bool))
    res = fit_svi(model, ev, "dense", FitConfig(n_iter=3000, n_eval_batches=1, tail_average=0.5))
    zero = evaluate_fit(np.zeros_like(truth.z), truth)
    # a static node sits at its first coefficient row
    est = np.repeat(res.state.z_mu()[:, :1], truth.z.shape[1], axis=1)
    mse = evaluate_fit(est, truth)
    assert mse < 0.1 * zero


def test_presets_contract():
    vp = presets("vary_p")
    assert [s.scenario.p for s in vp] == [100, 1000]
    vb = presets("vary_batch")
    assert [s.fit.batch_size for s in vb] == [50, 2000]
    vs = presets("vary_sparsity")
    assert [s.mode for s in vs] == ["dense_discrete", "cc_partial", "dense_discrete"]
    vc = presets("vary_cluster_vicinity")
    assert vc[0].scenario.n_clusters == 2 and vc[0].scenario.p == 200 and vc[0].cluster
    with pytest.raises(ValueError):
        presets("nope")


def test_run_experiment_tiny(tmp_path):
    rows, summary = run_experiment("vary_p", out_dir=tmp_path, scale="tiny", replicates=1, n_iter=50)
    assert len(rows) == 2 and len(summary) == 2
    text = (tmp_path / "summary.csv").read_text().splitlines()
    assert text[0].startswith("setting,n,mse_mean,mse_sd")
    assert text[1].split(",")[3] == ""  # sd of a single replicate
    assert (tmp_path / "long.csv").exists() and (tmp_path / "results.csv").exists()


def test_scenario_files(tmp_path):
    cfg = ScenarioConfig(p=12, regime="sparse", seed=9)
    import json
    import yaml
    (tmp_path / "s.json").write_text(json.dumps(scenario_dict(cfg)))
    (tmp_path / "s.yaml").write_text(yaml.safe_dump(scenario_dict(cfg)))
    assert load_scenario(tmp_path / "s.json") == cfg
    assert load_scenario(tmp_path / "s.yaml") == cfg
