import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import BSpline

from conftest import fd_grad, rel_err
from latentrem.splines import (Coefficients, SplineBasis, load_coefficients, position, positions,
                               save_coefficients, smoothness_penalty, trajectories)


@pytest.mark.parametrize("m,T", [(10, 1.0), (5, 3.0), (4, 0.5), (17, 2.0)])
def test_basis_matches_scipy(m, T):
    basis = SplineBasis(m, T)
    t = np.concatenate([np.linspace(0, T, 301), [T * 0.5 + 1e-13]])
    ref = BSpline.design_matrix(t, basis.knots, 3).toarray()
    np.testing.assert_allclose(basis.dense(t), ref, atol=1e-12)


def test_partition_of_unity_and_support(rng):
    basis = SplineBasis(10, 1.0)
    t = rng.uniform(0, 1, 500)
    idx, w = basis.evaluate(t)
    np.testing.assert_allclose(w.sum(1), 1.0, atol=1e-12)
    assert idx.shape[1] == 4 and np.all(w >= -1e-15)
    assert len(basis.eval_basis(0.37)) <= 4


def test_boundary_support():
    basis = SplineBasis(10, 1.0)
    assert basis.eval_basis(0.0) == [(0, 1.0)]
    assert basis.eval_basis(1.0) == [(9, 1.0)]


def test_out_of_domain():
    with pytest.raises(ValueError):
        SplineBasis(10, 1.0).evaluate(1.01)
    with pytest.raises(ValueError):
        SplineBasis(10, 1.0).evaluate(-1e-9)


def test_constant_rows_reproduce_vector(rng):
    basis = SplineBasis(10, 2.0)
    v = rng.standard_normal(3)
    z = np.broadcast_to(v, (1, 10, 3)).copy()
    for t in rng.uniform(0, 2, 20):
        np.testing.assert_allclose(position(basis, z, 0, t), v, atol=1e-12)


def test_position_examples():
    basis = SplineBasis(10, 1.0)
    c = Coefficients.zeros(2, 10, 2)
    np.testing.assert_array_equal(position(basis, c, 0, 0.4), [0.0, 0.0])
    c.z[1, :, 0] = np.arange(1, 11) / 10
    grid = np.linspace(0, 1, 101)
    xs = np.array([position(basis, c, 1, t)[0] for t in grid])
    assert np.all(np.diff(xs) > 0)
    ref = BSpline(basis.knots, c.z[1, :, 0], 3)(grid)
    np.testing.assert_allclose(xs, ref, atol=1e-12)


def test_static_node_is_fixed(rng):
    basis = SplineBasis(6, 1.0)
    z = rng.standard_normal((3, 6, 2))
    static = np.array([False, True, False])
    t = rng.uniform(0, 1, 10)
    pos = positions(basis, z, np.ones(10, dtype=int), t, static)
    np.testing.assert_allclose(pos, np.broadcast_to(z[1, 0], (10, 2)))
    traj = trajectories(basis, z, t, static)
    np.testing.assert_allclose(traj[1], np.broadcast_to(z[1, 0], (10, 2)))


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 1), st.integers(0, 2**31 - 1))
def test_position_linear(a, b, t, seed):
    r = np.random.default_rng(seed)
    basis = SplineBasis(7, 1.0)
    z1, z2 = r.standard_normal((2, 1, 7, 2))
    lhs = position(basis, a * z1 + b * z2, 0, t)
    rhs = a * position(basis, z1, 0, t) + b * position(basis, z2, 0, t)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_smoothness_examples(rng):
    S, _ = smoothness_penalty(np.array([0.0, 1.0, 3.0]).reshape(1, 3, 1))
    assert S == 5.0
    assert smoothness_penalty(np.ones((2, 5, 3)))[0] == 0.0
    z = rng.standard_normal((3, 5, 2))
    _, g = smoothness_penalty(z)
    num = fd_grad(lambda x: smoothness_penalty(x.reshape(z.shape))[0], z.ravel())
    assert rel_err(g, num) < 1e-6


def test_smoothness_translation_invariant(rng):
    z = rng.standard_normal((4, 6, 2))
    shift = rng.standard_normal((4, 1, 2))
    assert np.isclose(smoothness_penalty(z)[0], smoothness_penalty(z + shift)[0])


def test_coefficients_round_trip(tmp_path, rng):
    c = Coefficients(rng.standard_normal((3, 5, 2)), rng.standard_normal((5, 2)), rng.standard_normal(3))
    v = c.ravel()
    assert v.size == c.size
    np.testing.assert_array_equal(c.unravel(v).ravel(), v)
    basis = SplineBasis(5, 2.0)
    save_coefficients(tmp_path / "coef", c, basis)
    c2, b2 = load_coefficients(tmp_path / "coef")
    np.testing.assert_array_equal(c2.z, c.z)
    np.testing.assert_array_equal(c2.beta, c.beta)
    np.testing.assert_array_equal(c2.propensity, c.propensity)
    np.testing.assert_array_equal(b2.knots, basis.knots)
