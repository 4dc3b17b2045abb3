"""Synthetic networks with known trajectories and how fits are scored.

Truth is compared with an estimate after one translation and orthogonal map
fitted over all nodes and times, since distances cannot see rigid motions.
Cluster labels are compared after the best one-to-one relabelling.
"""
from dataclasses import replace

import numpy as np

from latentrem.events import discretize
from latentrem.simkit import ScenarioConfig, evaluate_fit, generate, run_experiment
from latentrem.svi import FitConfig, ModelConfig, fit_svi

sc = ScenarioConfig(p=40, n_clusters=2, center_scale=1.5, within_sd=0.3, intercept=1.0, seed=4)
truth, events = generate(sc)
counts = events if not hasattr(events, "time") else discretize(events, sc.n_intervals)
print(f"{counts.total} events, true labels {np.bincount(truth.labels)}")

model = ModelConfig(d=sc.d, n_basis=sc.m).build(counts)
res = fit_svi(model, counts, "dense", FitConfig(n_iter=4000, lr=0.02, seed=0, tail_average=0.5))
print(f"Procrustes MSE of the fit {evaluate_fit(res.state.z_mu(), truth):.3f}")
print(f"Procrustes MSE of a zero estimate {evaluate_fit(np.zeros_like(truth.z), truth):.3f}")

# The sparse regime keeps raw timestamps and far fewer events.
_, sparse = generate(replace(sc, regime="sparse", intercept=-0.5))
print(f"sparse regime: {sparse.n} timestamped events")

# A small version of the node-count grid; scale="desk" is the full size.
rows, summary = run_experiment("vary_p", scale="tiny", replicates=2, n_iter=4000)
for s in summary:
    print(f"{s['setting']:>6s}: mean MSE {s['mse_mean']:.3f}, {s['seconds_mean']:.1f}s per fit")
