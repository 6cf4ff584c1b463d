import numpy as np
import pytest

from conftest import central_diff, unit_rows
from kscl import encoder as enc
from kscl.errors import DimensionMismatch, NonFiniteGradient, ShapeMismatch
from kscl.loss import batch_kshot_loss_and_grad
from kscl.subspace import TruncationPolicy, build_subspaces, stack_bases


def set_flat(params, flat):
    out, i = [], 0
    for w, b in params.layers:
        nw = flat[i : i + w.size].reshape(w.shape)
        i += w.size
        nb = flat[i : i + b.size]
        i += b.size
        out.append((nw, nb))
    return enc.MlpParams(out)


def flat_grads(grads):
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def test_identity_layer_normalizes():
    params = enc.MlpParams([(np.eye(2), np.zeros(2))])
    v, _ = enc.forward(params, np.array([3.0, 4.0]))
    np.testing.assert_allclose(v, [0.6, 0.8], atol=1e-15)


def test_unit_norm_and_determinism(rng):
    p1 = enc.init_mlp([5, 7, 3], np.random.default_rng(11))
    p2 = enc.init_mlp([5, 7, 3], np.random.default_rng(11))
    x = rng.normal(size=(20, 5)) * 10
    v1, _ = enc.forward(p1, x)
    v2, _ = enc.forward(p2, x)
    np.testing.assert_array_equal(v1, v2)
    np.testing.assert_allclose(np.linalg.norm(v1, axis=1), 1.0, atol=1e-8)


def test_init_bounds():
    p = enc.init_mlp([16, 4], np.random.default_rng(0))
    w, b = p.layers[0]
    assert np.all(np.abs(w) <= 0.25) and np.all(np.abs(b) <= 0.25)


def test_norm_guard_on_zero_output():
    params = enc.MlpParams([(np.zeros((2, 3)), np.zeros(2))])
    v, cache = enc.forward(params, np.ones(3))
    np.testing.assert_array_equal(v, np.zeros(2))
    assert cache.norms[0] == 1e-12


def test_dimension_mismatch():
    params = enc.init_mlp([4, 3], np.random.default_rng(0))
    with pytest.raises(DimensionMismatch):
        enc.forward(params, np.ones(5))
    with pytest.raises(ShapeMismatch):
        enc.MlpParams([(np.ones((3, 4)), np.ones(3)), (np.ones((2, 5)), np.ones(2))])


def test_zero_upstream_gives_zero_grads(rng):
    params = enc.init_mlp([6, 5, 4], rng)
    _, cache = enc.forward(params, rng.normal(size=(3, 6)))
    for gw, gb in enc.backward(params, cache, np.zeros((3, 4))):
        assert not gw.any() and not gb.any()


def test_backward_shape_mismatch(rng):
    params = enc.init_mlp([6, 4], rng)
    _, cache = enc.forward(params, rng.normal(size=(3, 6)))
    with pytest.raises(ShapeMismatch):
        enc.backward(params, cache, np.zeros((2, 4)))


def test_normalization_gradient_is_tangent(rng):
    v = unit_rows(rng, 10, 6)
    g = rng.normal(size=(10, 6))
    eff = enc.normalization_backward(v, rng.uniform(0.5, 3, size=10), g)
    np.testing.assert_allclose(np.sum(eff * v, axis=1), 0.0, atol=1e-8)


def test_backward_matches_finite_differences(rng):
    params = enc.init_mlp([5, 6, 4], rng)
    x = rng.normal(size=(3, 5))
    c = rng.normal(size=(3, 4))

    def f(flat):
        v, _ = enc.forward(set_flat(params, flat), x)
        return float(np.sum(c * v))

    _, cache = enc.forward(params, x)
    g = flat_grads(enc.backward(params, cache, c))
    fd = central_diff(f, params.flat(), h=1e-5)
    assert np.max(np.abs(g - fd)) <= 1e-4 * np.max(np.abs(fd))


def test_single_input_backward(rng):
    params = enc.init_mlp([5, 4], rng)
    x = rng.normal(size=5)
    _, c1 = enc.forward(params, x)
    _, c2 = enc.forward(params, x[None])
    g = rng.normal(size=4)
    for (a, b), (p, q) in zip(enc.backward(params, c1, g), enc.backward(params, c2, g[None])):
        np.testing.assert_array_equal(a, p)
        np.testing.assert_array_equal(b, q)


def test_end_to_end_gradient_through_kshot_loss():
    rng = np.random.default_rng(3)
    d, k, n, f, b = 8, 2, 4, 6, 3
    params = enc.init_mlp([f, 10, d], rng)
    x = rng.normal(size=(b, f))
    pol = TruncationPolicy(1.0)
    positives = stack_bases(build_subspaces(unit_rows(rng, b * k, d).reshape(b, k, d), pol))
    negatives = stack_bases(build_subspaces(unit_rows(rng, n * k, d).reshape(n, k, d), pol))

    def f_loss(flat):
        v, _ = enc.forward(set_flat(params, flat), x)
        return batch_kshot_loss_and_grad(v, positives, negatives).loss

    v, cache = enc.forward(params, x)
    out = batch_kshot_loss_and_grad(v, positives, negatives)
    g = flat_grads(enc.backward(params, cache, out.grad_wrt_queries))
    fd = central_diff(f_loss, params.flat(), h=1e-5)
    assert np.max(np.abs(g - fd)) <= 1e-3 * np.max(np.abs(fd))


def test_momentum_update_examples():
    q = enc.MlpParams([(np.ones((1, 1)), np.ones(1))])
    pair = enc.EncoderPair(q, enc.MlpParams([(np.zeros((1, 1)), np.zeros(1))]), momentum=0.999)
    enc.momentum_update(pair)
    assert pair.key.layers[0][0][0, 0] == pytest.approx(0.001, rel=1e-12)
    pair = enc.EncoderPair(q, enc.MlpParams([(np.full((1, 1), 7.0), np.zeros(1))]), momentum=0.0)
    enc.momentum_update(pair)
    np.testing.assert_array_equal(pair.key.flat(), q.flat())


def test_momentum_contracts_geometrically(rng):
    pair = enc.EncoderPair(enc.init_mlp([4, 3], rng), enc.init_mlp([4, 3], rng), momentum=0.9)
    gap = np.linalg.norm(pair.key.flat() - pair.query.flat())
    for _ in range(10):
        enc.momentum_update(pair)
        new_gap = np.linalg.norm(pair.key.flat() - pair.query.flat())
        assert new_gap == pytest.approx(0.9 * gap, rel=1e-10)
        gap = new_gap


def test_momentum_keeps_equal_encoders_identical(rng):
    pair = enc.EncoderPair.from_query(enc.init_mlp([4, 3], rng), momentum=0.999)
    enc.momentum_update(pair)
    np.testing.assert_array_equal(pair.key.flat(), pair.query.flat())


def test_momentum_shape_mismatch(rng):
    pair = enc.EncoderPair(enc.init_mlp([4, 3], rng), enc.init_mlp([4, 2], rng))
    with pytest.raises(ShapeMismatch):
        enc.momentum_update(pair)


def scalar(p):
    return enc.MlpParams([(np.array([[p]]), np.zeros(1))])


def test_sgd_examples():
    p = scalar(1.5)
    zero = [(np.zeros((1, 1)), np.zeros(1))]
    out, _ = enc.sgd_step(p, zero, lr=0.1)
    np.testing.assert_array_equal(out.flat(), p.flat())
    out, _ = enc.sgd_step(p, [(np.array([[2.0]]), np.zeros(1))], lr=0.1)
    assert out.layers[0][0][0, 0] == pytest.approx(1.5 - 0.1 * 2.0)


def test_sgd_two_step_momentum_expansion():
    p0, g0, g1, lr, mu, wd = 1.5, 2.0, -0.5, 0.1, 0.9, 0.01
    p, state = enc.sgd_step(scalar(p0), [(np.array([[g0]]), np.zeros(1))], lr, wd, mu)
    p, state = enc.sgd_step(p, [(np.array([[g1]]), np.zeros(1))], lr, wd, mu, state)
    d0 = g0 + wd * p0
    p1 = p0 - lr * d0
    p2 = p1 - lr * (mu * d0 + g1 + wd * p1)
    assert p.layers[0][0][0, 0] == pytest.approx(p2, rel=1e-14)


def test_sgd_errors():
    with pytest.raises(NonFiniteGradient):
        enc.sgd_step(scalar(1.0), [(np.array([[np.nan]]), np.zeros(1))], 0.1)
    with pytest.raises(ShapeMismatch):
        enc.sgd_step(scalar(1.0), [(np.zeros((2, 1)), np.zeros(1))], 0.1)
