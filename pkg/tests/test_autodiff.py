"""Engine sanity: every op's analytic gradient agrees with finite differences."""

import numpy as np
import pytest

from pointillist import autodiff as ad
from pointillist.autodiff import Tensor

from helpers import fd_check_params


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def _scalarize(t):
    # Weighted sum keeps per-entry gradients distinguishable.
    w = Tensor(np.linspace(0.3, 1.7, t.data.size).reshape(t.data.shape))
    return (t * w).sum()


@pytest.mark.parametrize(
    "build",
    [
        lambda a, b: a + b,
        lambda a, b: a - b,
        lambda a, b: a * b,
        lambda a, b: a / (b + 3.0),
        lambda a, b: a ** 3,
        lambda a, b: ad.exp(a * 0.3) + ad.log(b + 5.0),
        lambda a, b: ad.tanh(a) * ad.sigmoid(b),
        lambda a, b: ad.gelu(a) + ad.relu(b + 0.37),
        lambda a, b: ad.sqrt(a * a + 1.0),
        lambda a, b: ad.softmax(a, axis=-1) * b,
        lambda a, b: ad.absolute(a + 0.123),
        lambda a, b: ad.clip(a, -0.5, 0.5) + b,
    ],
)
def test_elementwise_grads(build, rng):
    a = Tensor.param(rng.normal(size=(4, 5)), name="a")
    b = Tensor.param(rng.normal(size=(4, 5)), name="b")
    fd_check_params(lambda: _scalarize(build(a, b)), [a, b], rng, n_probes=8, rtol=1e-5)


def test_broadcast_grads(rng):
    a = Tensor.param(rng.normal(size=(4, 5)), name="a")
    b = Tensor.param(rng.normal(size=(5,)), name="b")
    c = Tensor.param(rng.normal(size=(4, 1)), name="c")
    fd_check_params(lambda: _scalarize(a * b + c), [a, b, c], rng, n_probes=8, rtol=1e-5)


def test_matmul_grads(rng):
    a = Tensor.param(rng.normal(size=(3, 4)), name="a")
    b = Tensor.param(rng.normal(size=(4, 6)), name="b")
    fd_check_params(lambda: _scalarize(a @ b), [a, b], rng, n_probes=10, rtol=1e-5)


def test_batched_matmul_grads(rng):
    a = Tensor.param(rng.normal(size=(2, 3, 4)), name="a")
    b = Tensor.param(rng.normal(size=(2, 4, 5)), name="b")
    fd_check_params(lambda: _scalarize(a @ b), [a, b], rng, n_probes=10, rtol=1e-5)


def test_matmul_broadcast_batch(rng):
    a = Tensor.param(rng.normal(size=(2, 3, 4)), name="a")
    b = Tensor.param(rng.normal(size=(4, 5)), name="b")
    fd_check_params(lambda: _scalarize(a @ b), [a, b], rng, n_probes=10, rtol=1e-5)


def test_shape_op_grads(rng):
    a = Tensor.param(rng.normal(size=(3, 4, 2)), name="a")

    def loss():
        t = a.transpose(2, 0, 1).reshape(2, 12)
        t = t[:, 2:9]
        return _scalarize(t)

    fd_check_params(loss, [a], rng, n_probes=10, rtol=1e-5)


def test_reduction_grads(rng):
    a = Tensor.param(rng.normal(size=(4, 5)), name="a")
    fd_check_params(lambda: (a.mean(axis=0).reshape(1, 5) @ a.sum(axis=0).reshape(5, 1) * a.mean()).sum(), [a], rng, rtol=1e-5)


def test_max_grad(rng):
    a = Tensor.param(rng.normal(size=(6, 5)), name="a")
    fd_check_params(lambda: _scalarize(a.max(axis=0)), [a], rng, n_probes=8, rtol=1e-5)


def test_concat_stack_grads(rng):
    a = Tensor.param(rng.normal(size=(3, 4)), name="a")
    b = Tensor.param(rng.normal(size=(3, 2)), name="b")

    def loss():
        cat = ad.concatenate([a, b], axis=1)
        st = ad.stack([cat.sum(axis=1), cat.mean(axis=1)], axis=0)
        return _scalarize(st)

    fd_check_params(loss, [a, b], rng, n_probes=8, rtol=1e-5)


def test_take_rows_grad(rng):
    table = Tensor.param(rng.normal(size=(7, 3)), name="table")
    idx = np.array([0, 3, 3, 6, 1])
    fd_check_params(lambda: _scalarize(ad.take_rows(table, idx)), [table], rng, n_probes=10, rtol=1e-5)


def test_softmax_rows_sum_to_one(rng):
    x = Tensor(rng.normal(size=(5, 9)))
    s = ad.softmax(x, axis=-1)
    np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)


def test_no_grad_blocks_graph(rng):
    a = Tensor.param(rng.normal(size=(3,)))
    with ad.no_grad():
        out = a * 2.0
    assert not out.requires_grad
    out2 = a * 2.0
    assert out2.requires_grad


def test_grad_accumulates_over_reuse(rng):
    a = Tensor.param(np.array([2.0]))
    loss = (a * a + a * 3.0).sum()
    loss.backward()
    np.testing.assert_allclose(a.grad, [7.0])


def test_adamw_decoupled_decay():
    p = Tensor.param(np.array([1.0]))
    opt = ad.AdamW([p], lr=0.1, weight_decay=0.5)
    p.grad = np.array([0.0])
    opt.step()
    # Zero gradient: only the decoupled decay moves the parameter.
    np.testing.assert_allclose(p.data, [1.0 - 0.1 * 0.5])


def test_adamw_descends_quadratic(rng):
    p = Tensor.param(rng.normal(size=(4,)) + 3.0)
    opt = ad.AdamW([p], lr=0.05)
    for _ in range(500):
        opt.zero_grad()
        loss = (p * p).sum()
        loss.backward()
        opt.step()
    assert np.abs(p.data).max() < 1e-2
