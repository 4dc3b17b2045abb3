"""The three likelihoods and their gradients.

log lambda_ij(t) = -||z_i(t) - z_j(t)||^2 + beta(t). The discrete Poisson
likelihood sees interval counts, the case-control version reweights a sample
of zero cells, and the partial likelihood compares each event against sampled
non-events at the same instant.
"""
from pathlib import Path

import numpy as np

from latentrem.events import discretize, load_events
from latentrem.model import full_loglik_discrete, log_rate, loglik_partial_cc, scaled_batch_loglik
from latentrem.sampler import Sampler
from latentrem.svi import ModelConfig

registry, events, _ = load_events(Path(__file__).parent / "data" / "toy_events.tsv")
counts = discretize(events, 20)
model = ModelConfig(d=2, n_basis=6).build(counts)
rng = np.random.default_rng(1)
coeffs = model.init_coefficients(counts.p, rng, 0.5)
coeffs.beta[:, 0] = 1.0

print(f"log-rate {registry.id(0)} -> {registry.id(1)} at t=0.3:", round(float(log_rate(model, coeffs, 0, 1, 0.3)), 3))

full, grad = full_loglik_discrete(model, coeffs, counts)
print(f"full Poisson log-likelihood {full:.2f}, gradient norm {np.linalg.norm(grad.ravel()):.2f}")

# Scaled mini-batches are unbiased for the full value.
for mode in ("dense_discrete", "cc_discrete"):
    s = Sampler(counts, mode, 50, rng)
    est = np.mean([scaled_batch_loglik(model, coeffs, s.sample())[0] for _ in range(3000)])
    print(f"{mode:15s} mean of 3000 batch estimates {est:.2f}")

# Partial likelihood with three controls per event.
ctrl = rng.integers(0, counts.p, (events.n, 3, 2))
ok = ctrl[..., 0] != ctrl[..., 1]
ctrl[~ok, 1] = (ctrl[~ok, 0] + 1) % counts.p
val, _ = loglik_partial_cc(model, coeffs, events.src, events.dst, events.time, ctrl[..., 0], ctrl[..., 1])
print(f"partial log-likelihood with 3 controls per event {val:.2f}")

# Rigid motions of all trajectories leave the distance model unchanged.
theta = 0.7
R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
moved = coeffs.copy()
moved.z[:] = coeffs.z @ R + np.array([3.0, -1.0])
print("invariant under rotation and translation:",
      np.isclose(full_loglik_discrete(model, moved, counts)[0], full))
