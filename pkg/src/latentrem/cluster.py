"""Fast convex clustering of node trajectories.

With the centroid-distance weight sent to infinity, the centroids of the
convex clustering penalty collapse to the means of the connected components
of the kernel graph ``||a_i+ - a_j+|| <= radius`` built on frozen pilot
coefficients. The penalty then costs ``O(p)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _csgraph_components


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path halving and union by size."""

    def __init__(self, n):
        self.parent = np.arange(n)
        self.size = np.ones(n, dtype=np.int64)

    def find(self, x):
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True

    def labels(self):
        roots = np.array([self.find(i) for i in range(self.parent.size)])
        return canonical_labels(roots)


def canonical_labels(labels):
    """Relabel to ``0..K-1`` in order of first appearance."""
    labels = np.asarray(labels)
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inv.ravel()]


def pilot_freeze(coeffs):
    """Frozen copy of pilot trajectory coefficients ``a+`` (read-only)."""
    z = coeffs.z if hasattr(coeffs, "z") else coeffs
    out = np.array(z, dtype=float, copy=True)
    out.setflags(write=False)
    return out


def _features(alpha):
    a = np.asarray(alpha, dtype=float)
    return a.reshape(a.shape[0], -1)


def kernel_pairs(alpha_plus, radius, max_proj_dims=3):
    """All pairs ``i < j`` with ``||a_i - a_j|| <= radius`` (Frobenius norm).

    Candidates come from a grid hash on the leading principal directions of
    the flattened coefficients: orthogonal projection never increases a
    distance, so every kernel pair lies in adjacent cells. Candidates are
    then checked in the full space.
    """
    X = _features(alpha_plus)
    p = X.shape[0]
    if p < 2 or radius < 0:
        return np.empty((0, 2), dtype=np.int64)
    if radius == 0:
        _, inv = np.unique(X, axis=0, return_inverse=True)
        inv = inv.ravel()
        order = np.argsort(inv, kind="stable")
        out = []
        for grp in np.split(order, np.flatnonzero(np.diff(inv[order])) + 1):
            if grp.size > 1:
                a, b = np.triu_indices(grp.size, 1)
                out.append(np.column_stack([grp[a], grp[b]]))
        return np.vstack(out) if out else np.empty((0, 2), dtype=np.int64)
    Xc = X - X.mean(axis=0)
    k = min(max_proj_dims, X.shape[1])
    if np.allclose(Xc, 0):
        P = np.zeros((p, k))
    else:
        _, _, vt = np.linalg.svd(Xc, full_matrices=False)
        P = Xc @ vt[:k].T
    cell = np.floor(P / radius).astype(np.int64)
    buckets = {}
    for i, c in enumerate(map(tuple, cell)):
        buckets.setdefault(c, []).append(i)
    buckets = {c: np.asarray(v) for c, v in buckets.items()}
    offsets = [o for o in product((-1, 0, 1), repeat=k) if o > (0,) * k]
    r2 = radius * radius
    out = []

    def check(a, b, same):
        for s in range(0, a.size, 2048):
            aa = a[s:s + 2048]
            D = ((X[aa, None, :] - X[None, b, :]) ** 2).sum(-1)
            ok = D <= r2
            if same:
                ok &= aa[:, None] < b[None, :]
            ia, ib = np.nonzero(ok)
            if ia.size:
                out.append(np.column_stack([aa[ia], b[ib]]))

    for c, members in buckets.items():
        check(members, members, True)
        for o in offsets:
            nb = buckets.get(tuple(ci + oi for ci, oi in zip(c, o)))
            if nb is not None:
                check(members, nb, False)
    if not out:
        return np.empty((0, 2), dtype=np.int64)
    pairs = np.vstack(out)
    return np.column_stack([pairs.min(1), pairs.max(1)])


def components_from_pairs(p, pairs):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(p, p))
    _, labels = _csgraph_components(g, directed=False)
    return canonical_labels(labels)


def connected_components(alpha_plus, radius):
    """Component labels of the kernel graph at ``radius``."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    X = _features(alpha_plus)
    return components_from_pairs(X.shape[0], kernel_pairs(X, radius))


def cluster_sizes(labels):
    labels = np.asarray(labels)
    return np.bincount(labels)[labels]


def centroids(labels, z):
    """Component means broadcast back to members; linear in ``p``."""
    labels = np.asarray(labels)
    z = np.asarray(z, dtype=float)
    flat = z.reshape(z.shape[0], -1)
    K = labels.max() + 1
    counts = np.bincount(labels, minlength=K).astype(float)
    sums = np.zeros((K, flat.shape[1]))
    np.add.at(sums, labels, flat)
    return (sums / counts[:, None])[labels].reshape(z.shape)


def clust_penalty_fast(z, c, gamma_clust):
    """``-gamma * sum_i ||a_i - c_i||^2`` and its gradient with ``c`` frozen."""
    diff = np.asarray(z, dtype=float) - c
    return -gamma_clust * float(np.sum(diff * diff)), -2.0 * gamma_clust * diff


def clust_penalty_minibatch(z, c, pairs, gamma_aux, gamma_dist, w=None):
    """Mini-batch convex clustering penalty with free centroids.

    Value ``-(gamma_aux sum_i ||a_i - c_i||^2 + gamma_dist sum_(i,j) w_ij ||c_i - c_j||^2)``
    over the sampled kernel pairs. Returns ``(value, grad_z, grad_c)``.
    """
    z = np.asarray(z, dtype=float)
    c = np.asarray(c, dtype=float)
    diff = z - c
    val = -gamma_aux * float(np.sum(diff * diff))
    gz = -2.0 * gamma_aux * diff
    gc = 2.0 * gamma_aux * diff
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs):
        w = np.ones(len(pairs)) if w is None else np.asarray(w, dtype=float)
        dc = c[pairs[:, 0]] - c[pairs[:, 1]]
        wsq = np.sum((dc * dc).reshape(len(pairs), -1), axis=1)
        val -= gamma_dist * float(np.sum(w * wsq))
        gpair = -2.0 * gamma_dist * w.reshape((-1,) + (1,) * (c.ndim - 1)) * dc
        np.add.at(gc, pairs[:, 0], gpair)
        np.add.at(gc, pairs[:, 1], -gpair)
    return val, gz, gc


def radius_sweep(alpha_plus, radii):
    """Components for each radius of an ascending grid.

    Returns a list of ``(radius, labels, n_clusters)``. Partitions coarsen
    monotonically along the grid.
    """
    radii = [float(r) for r in radii]
    if any(b < a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be sorted ascending")
    X = _features(alpha_plus)
    p = X.shape[0]
    out = []
    for r in radii:
        if np.isfinite(r):
            labels = components_from_pairs(p, kernel_pairs(X, r))
        else:
            labels = np.zeros(p, dtype=np.int64)
        out.append((r, labels, int(labels.max() + 1) if p else 0))
    return out


def candidate_radii(alpha_plus, quantiles=(0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5), max_pairs=200_000, rng=0):
    """Heuristic radius grid: quantiles of pairwise pilot distances."""
    X = _features(alpha_plus)
    p = X.shape[0]
    n_all = p * (p - 1) // 2
    if n_all <= max_pairs:
        a, b = np.triu_indices(p, 1)
    else:
        g = np.random.default_rng(rng)
        a = g.integers(0, p, max_pairs)
        b = g.integers(0, p - 1, max_pairs)
        b = b + (b >= a)
    d = np.linalg.norm(X[a] - X[b], axis=1)
    return np.unique(np.quantile(d, quantiles))


@dataclass
class ClusterState:
    """Frozen pilot coefficients with the kernel partition at one radius."""

    alpha_plus: np.ndarray
    radius: float
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.labels is None:
            self.labels = connected_components(self.alpha_plus, self.radius)

    @property
    def sizes(self):
        return cluster_sizes(self.labels)

    @property
    def n_clusters(self):
        return int(self.labels.max() + 1)

    @property
    def n_groups(self):
        """Number of components with two or more members."""
        return int(np.sum(np.bincount(self.labels) > 1))

    @property
    def clustered(self):
        """Mask of nodes in components of size two or more."""
        return self.sizes > 1

    def centroids(self, z):
        return centroids(self.labels, z)


def write_clusters(path, labels, ids=None):
    labels = np.asarray(labels)
    sizes = cluster_sizes(labels)
    ids = range(labels.size) if ids is None else ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "cluster_id", "cluster_size"])
        for node, lab, s in zip(ids, labels, sizes):
            w.writerow([node, int(lab), int(s)])


def read_clusters(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [r["node_id"] for r in rows], np.array([int(r["cluster_id"]) for r in rows])


def write_sweep(path, sweep):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["radius", "n_clusters"])
        for r, _, k in sweep:
            w.writerow([repr(float(r)), k])
