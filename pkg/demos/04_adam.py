"""Adam as an ascent method on a noisy concave objective."""
import numpy as np

from latentrem.optim import AdamState, StoppingRule, adam_step

rng = np.random.default_rng(0)
target = np.array([1.0, -2.0, 0.5])


def noisy_grad(x):
    return -2 * (x - target) + rng.normal(0, 0.5, x.size)


for variant in ("sqrt", "ratio"):
    state = AdamState(3, lr=0.05, variant=variant)
    x = np.zeros(3)
    for _ in range(2000):
        state, x = adam_step(state, noisy_grad(x), x)
    print(f"{variant:5s} variant ends at {np.round(x, 2)}")

# Stopping after the smoothed objective stalls for `patience` checks.
rule = StoppingRule(patience=5, smoothing=0.5)
state, x = AdamState(3, lr=0.05), np.zeros(3)
for k in range(5000):
    state, x = adam_step(state, noisy_grad(x), x)
    if k % 20 == 0 and rule.update(-np.sum((x - target) ** 2)):
        print(f"stopped after {k} steps at {np.round(x, 2)}")
        break
