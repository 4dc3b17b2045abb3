"""Node trajectories as clamped cubic B-splines.

Each node carries an ``m x d`` block of coefficients; its position at time
``t`` is the basis row at ``t`` times that block. The smoothness penalty sums
squared differences of adjacent rows, so a constant block costs nothing.
"""
import numpy as np

from latentrem.splines import SplineBasis, position, smoothness_penalty, trajectories

basis = SplineBasis(n_basis=10, horizon=1.0)
grid = np.linspace(0, 1, 6)
B = basis.dense(grid)
print("basis rows sum to one:", np.allclose(B.sum(1), 1.0))
print("only the first function is active at t=0:", np.round(B[0], 3))

rng = np.random.default_rng(0)
z = np.cumsum(rng.normal(0, 0.3, (3, 10, 2)), axis=1)  # three wandering nodes in 2-d
path = trajectories(basis, z, grid)
print("node 0 on the grid:\n", np.round(path[0], 3))
print("position of node 2 at t=0.5:", np.round(position(basis, z, 2, 0.5), 3))

value, grad = smoothness_penalty(z)
print(f"smoothness penalty {value:.3f}")
flat = np.repeat(z[:, :1], 10, axis=1)
print("penalty of static nodes:", smoothness_penalty(flat)[0])

# Static nodes keep their first row for all times.
static = np.array([False, True, False])
print("static node is fixed:", np.allclose(trajectories(basis, z, grid, static)[1], z[1, 0]))
