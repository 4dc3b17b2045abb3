import numpy as np
import pytest

from latentrem.cluster import canonical_labels
from latentrem.model import CovariateSpec, RateModel, SimilarityConfig
from latentrem.splines import SplineBasis


def fd_grad(f, x, h=1e-6):
    """Central finite differences of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def small_model(kind="neg_sq_euclid", m=5, d=2, T=1.0, intercept=True, propensity=False,
                n_exogenous=0, static=None, scale=1.0):
    def exo(src, dst, t):
        return np.column_stack([np.sin(src + 2 * dst + t * k) for k in range(1, n_exogenous + 1)])
    cov = CovariateSpec(intercept=intercept, exogenous=exo if n_exogenous else None, n_exogenous=n_exogenous,
                        propensity=propensity)
    return RateModel(SplineBasis(m, T), d, SimilarityConfig(kind, scale), cov, static)


def random_coeffs(model, p, rng, scale=0.5):
    c = model.init_coefficients(p)
    c.z[:] = scale * rng.standard_normal(c.z.shape)
    c.beta[:] = 0.3 * rng.standard_normal(c.beta.shape)
    if c.propensity is not None:
        c.propensity[:] = 0.3 * rng.standard_normal(p)
    return c


def brute_components(X, r):
    """Oracle: all-pairs distances plus transitive closure by repeated relaxation."""
    X = X.reshape(X.shape[0], -1)
    D = np.sqrt(((X[:, None] - X[None]) ** 2).sum(-1))
    adj = D <= r
    lab = np.arange(len(X))
    while True:
        new = np.array([lab[adj[i]].min() for i in range(len(X))])
        new = np.minimum(new, new[new])
        if np.array_equal(new, lab):
            return canonical_labels(lab)
        lab = new


def same_partition(a, b):
    return np.array_equal(canonical_labels(a), canonical_labels(b))


@pytest.fixture
def rng():
    return np.random.default_rng(20231016)


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``record(number, ok, detail)`` for the acceptance summary."""
    def record(number, ok, detail):
        ACCEPTANCE[number] = (bool(ok), detail)
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
