import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.stats import special_ortho_group

from conftest import fd_grad, random_coeffs, rel_err, small_model
from latentrem.events import ContinuousEvents, discretize
from latentrem.model import (CovariateSpec, RateModel, SimilarityConfig, assemble_loss, full_loglik_discrete,
                             log_rate, loglik_discrete, loglik_discrete_cc, loglik_partial_cc)
from latentrem.sampler import Sampler
from latentrem.splines import Coefficients, SplineBasis, smoothness_penalty


def check_grad(fn, coeffs, tol=1e-5):
    """``fn(coeffs) -> (value, Coefficients grad)`` against central differences."""
    _, g = fn(coeffs)
    num = fd_grad(lambda v: fn(coeffs.unravel(v))[0], coeffs.ravel())
    assert rel_err(g.ravel(), num) < tol


def random_cells(rng, p, n, T=1.0):
    i = rng.integers(0, p, n)
    j = (i + rng.integers(1, p, n)) % p
    return i, j, rng.uniform(0, T, n)


def test_log_rate_examples():
    m = RateModel(SplineBasis(4, 1.0), 2)
    c = Coefficients.zeros(2, 4, 2)
    c.z[1] = (3.0, 4.0)
    assert log_rate(m, c, 0, 1, 0.3) == pytest.approx(-25.0)
    mi = RateModel(SplineBasis(4, 1.0), 2, SimilarityConfig("inner_product", 1.0))
    c.z[:] = (1.0, 0.0)
    assert log_rate(mi, c, 0, 1, 0.7) == pytest.approx(1.0)
    mp = RateModel(SplineBasis(4, 1.0), 2, covariates=CovariateSpec(propensity=True))
    cp = mp.init_coefficients(2)
    cp.propensity[:] = (0.5, -0.5)
    assert log_rate(mp, cp, 0, 1, 0.1) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        log_rate(m, c, 1, 1, 0.1)


def intercept_model(level):
    m = small_model(m=4)
    c = m.init_coefficients(2)
    c.beta[:, 0] = level
    return m, c


def test_discrete_hand_values():
    m, c = intercept_model(0.0)
    v, _ = loglik_discrete(m, c, [0], [1], [0.2], [1.0], [0])
    assert v == pytest.approx(-1.0)
    m, c = intercept_model(np.log(2.0))
    v, _ = loglik_discrete(m, c, [0], [1], [0.2], [0.5], [3])
    assert v == pytest.approx(-1.0)


def test_rate_clamp_zeroes_gradient():
    m, c = intercept_model(100.0)
    eta, _ = m.forward(c, [0], [1], [0.5])
    assert eta[0] == 40.0
    _, g = loglik_discrete(m, c, [0], [1], [0.5], [1.0], [1])
    assert not np.any(g.ravel())


@pytest.mark.parametrize("kind", ["neg_sq_euclid", "inner_product"])
@pytest.mark.parametrize("extras", [dict(), dict(propensity=True, n_exogenous=2)])
def test_discrete_gradient(rng, kind, extras):
    model = small_model(kind, **extras)
    c = random_coeffs(model, 6, rng)
    i, j, t = random_cells(rng, 6, 25)
    dt = rng.uniform(0.05, 0.3, 25)
    y = rng.poisson(1.0, 25)
    check_grad(lambda cc: loglik_discrete(model, cc, i, j, t, dt, y, weight=1.7), c)


def test_discrete_cc_gradient_and_weight(rng):
    model = small_model(propensity=True)
    c = random_coeffs(model, 5, rng)
    i, j, t = random_cells(rng, 5, 8)
    cases = (i, j, t, np.full(8, 0.1), rng.integers(1, 4, 8))
    ci, cj, ct = random_cells(rng, 5, 10)
    controls = (ci, cj, ct, np.full(10, 0.1))
    check_grad(lambda cc: loglik_discrete_cc(model, cc, cases, controls, 1000, 10, case_weight=3.0), c)
    v_all, _ = loglik_discrete_cc(model, c, cases, controls, 1000, 10)
    v_case, _ = loglik_discrete(model, c, *cases)
    eta, _ = model.forward(c, ci, cj, ct)
    assert v_all - v_case == pytest.approx(-100.0 * np.sum(np.exp(eta) * 0.1))
    with pytest.raises(ValueError):
        loglik_discrete_cc(model, c, cases, ([], [], [], []), 1000, 0)


def test_discrete_cc_expectation_matches_zero_cells(rng):
    model = small_model()
    p = 4
    c = random_coeffs(model, p, rng)
    ev = ContinuousEvents(*random_cells(rng, p, 12), 1.0, p)
    dv = discretize(ev, 3)
    # oracle: enumerate all zero cells
    K = dv.n_intervals
    k, i, j = np.meshgrid(np.arange(K), np.arange(p), np.arange(p), indexing="ij")
    keep = (i != j) & (dv.lookup(k, i, j) == 0)
    k, i, j = k[keep], i[keep], j[keep]
    eta, _ = model.forward(c, i, j, dv.starts[k])
    target = -np.sum(np.exp(eta) * dv.widths[k])
    sampler = Sampler(dv, "cc_discrete", 5, rng)
    vals = []
    for _ in range(4000):
        b = sampler.sample()
        e, _ = model.forward(c, b.ctrl_src, b.ctrl_dst, b.ctrl_time)
        vals.append(-b.control_weight * np.sum(np.exp(e) * b.ctrl_dt))
    se = np.std(vals) / np.sqrt(len(vals))
    assert abs(np.mean(vals) - target) < 4 * se
    assert sampler.sample().N0 == dv.n_cells - dv.n_positive


def test_partial_examples():
    m, c = intercept_model(0.3)
    v, _ = loglik_partial_cc(m, c, [0], [1], [0.5], [1], [0])
    assert v == pytest.approx(np.log(0.5))
    m = small_model(m=4)
    c = m.init_coefficients(3)
    c.z[2] = 30.0
    v, _ = loglik_partial_cc(m, c, [0], [1], [0.5], [0], [2])
    assert v == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("C", [1, 3])
def test_partial_gradient(rng, C):
    model = small_model(propensity=True, n_exogenous=1)
    c = random_coeffs(model, 7, rng)
    i, j, t = random_cells(rng, 7, 15)
    ci, cj, _ = random_cells(rng, 7, 15 * C)
    check_grad(lambda cc: loglik_partial_cc(model, cc, i, j, t, ci.reshape(15, C), cj.reshape(15, C), 2.0), c)


def test_static_nodes_gradient(rng):
    model = small_model(static=np.array([True, False, False, True, False]))
    c = random_coeffs(model, 5, rng)
    i, j, t = random_cells(rng, 5, 20)
    _, g = loglik_discrete(model, c, i, j, t, 0.1, rng.poisson(1, 20))
    assert not np.any(g.z[[0, 3], 1:])
    check_grad(lambda cc: loglik_discrete(model, cc, i, j, t, 0.1, np.ones(20)), c)


def test_partition_additivity(rng):
    model = small_model()
    c = random_coeffs(model, 5, rng)
    i, j, t = random_cells(rng, 5, 30)
    y = rng.poisson(1, 30)
    whole, g = loglik_discrete(model, c, i, j, t, 0.2, y)
    parts = [loglik_discrete(model, c, i[s], j[s], t[s], 0.2, y[s]) for s in np.array_split(np.arange(30), 4)]
    assert whole == pytest.approx(sum(v for v, _ in parts))
    np.testing.assert_allclose(g.z, sum(gg.z for _, gg in parts))


def test_translation_rotation_invariance(rng):
    model = small_model(n_exogenous=1)
    c = random_coeffs(model, 6, rng)
    i, j, t = random_cells(rng, 6, 40)
    ci, cj, _ = random_cells(rng, 6, 40)
    moved = c.copy()
    R = special_ortho_group.rvs(2, random_state=1) @ np.diag([1, -1])
    moved.z = moved.z @ R + rng.standard_normal(2)
    for f in (lambda cc: loglik_discrete(model, cc, i, j, t, 0.1, np.arange(40) % 3)[0],
              lambda cc: loglik_partial_cc(model, cc, i, j, t, ci, cj)[0]):
        assert abs(f(c) - f(moved)) < 1e-9


def test_assemble_loss(rng):
    model = small_model()
    p = 6
    c = random_coeffs(model, p, rng)
    ev = ContinuousEvents(*random_cells(rng, p, 1000), 1.0, p)
    batch = Sampler(ev, "cc_partial", 100, rng).sample()
    assert batch.scale == 10.0
    plain = assemble_loss(model, c, batch)
    ll, g_ll = loglik_partial_cc(model, c, batch.src, batch.dst, batch.time, batch.ctrl_src, batch.ctrl_dst)
    assert plain.total == pytest.approx(10 * ll)
    cent = rng.standard_normal(c.z.shape)
    loss = assemble_loss(model, c, batch, 0.7, 1.3, cent)
    S, gS = smoothness_penalty(c.z)
    assert loss.p_smooth == pytest.approx(-0.7 * S)
    assert loss.p_clust == pytest.approx(-1.3 * np.sum((c.z - cent) ** 2))
    np.testing.assert_allclose(loss.grad.z, 10 * g_ll.z - 0.7 * gS - 2.6 * (c.z - cent))
    num = fd_grad(lambda v: assemble_loss(model, c.unravel(v), batch, 0.7, 1.3, cent).total, c.ravel())
    assert rel_err(loss.grad.ravel(), num) < 1e-5


def continuous_loglik(model, coeffs, ev, n_grid=1000):
    """Oracle: sum log lambda at events minus trapezoid integral of all rates."""
    eta, _ = model.forward(coeffs, ev.src, ev.dst, ev.time)
    grid = np.linspace(0, ev.horizon, n_grid)
    p = ev.p
    i, j = np.nonzero(~np.eye(p, dtype=bool))
    rates = np.exp(model.forward(coeffs, np.repeat(i, n_grid), np.repeat(j, n_grid), np.tile(grid, i.size))[0])
    return eta.sum() - trapezoid(rates.reshape(i.size, n_grid), grid, axis=1).sum()


def test_fine_discretization_approaches_continuous_likelihood(rng):
    model = small_model(m=5)
    p = 4
    c = random_coeffs(model, p, rng)
    ev = ContinuousEvents(*random_cells(rng, p, 25), 1.0, p)
    exact = continuous_loglik(model, c, ev)
    errs = []
    for K in (50, 400):
        dv = discretize(ev, K)
        v, _ = full_loglik_discrete(model, c, dv)
        # Poisson cells carry y log(dt); the continuous density does not
        errs.append(abs(v - ev.n * np.log(1.0 / K) - exact))
    assert errs[1] < errs[0] and errs[1] < 0.05
