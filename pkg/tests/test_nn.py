import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from oracles import central_difference, max_relative_error
from socialvae.nn import (LOG_VAR_MAX, LOG_VAR_MIN, MLP, Adam, DiagGaussian, GaussianHead, GRUCell,
                          Linear, Param, ShapeError, Tensor, TrainingError, adam_update, concat,
                          gaussian_log_density, gaussian_sample, gru_step, kl_diag_gaussians,
                          masked_softmax, mlp_forward, no_grad)


def rng():
    return np.random.default_rng(0)


def gauss(mean, log_var):
    return DiagGaussian(Tensor(np.asarray(mean, float)), Tensor(np.asarray(log_var, float)))


def check_grads(loss_fn, params, tol=1e-4):
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    for p in params:
        num = central_difference(lambda: float(loss_fn().data), p)
        err = max_relative_error(p.grad, num)
        assert err < tol, f"{p.name}: relative error {err:.2e}"


def test_mlp_zero_weights_and_identity_layer():
    m = MLP([2, 3], rng(), np.float64)
    m.layers[0].weight.data[:] = 0.0
    out = mlp_forward(m, np.ones((4, 2)), [2, 3])
    np.testing.assert_array_equal(out.data, np.zeros((4, 3)))
    ident = MLP([2, 2], rng(), np.float64)
    ident.layers[0].weight.data[:] = np.eye(2)
    np.testing.assert_allclose(mlp_forward(ident, [[1.0, -1.0]]).data, [[1.0, -0.2]])
    with pytest.raises(ShapeError):
        mlp_forward(m, np.ones((4, 5)))
    with pytest.raises(ShapeError):
        mlp_forward(m, np.ones((4, 2)), [2, 4])


def test_mlp_final_activation_switch():
    m = MLP([1, 1], rng(), np.float64, final_activation=False)
    m.layers[0].weight.data[:] = 1.0
    assert m(Tensor(np.array([[-1.0]]))).data[0, 0] == -1.0


def test_gru_zero_params_halves_state():
    cell = GRUCell(3, 4, rng(), np.float64)
    for p in cell.params():
        p.data[:] = 0.0
    prev = np.array([[1.0, -2.0, 0.5, 4.0]])
    np.testing.assert_allclose(gru_step(cell, np.ones((1, 3)), prev).data, 0.5 * prev)
    with pytest.raises(ShapeError):
        gru_step(cell, np.ones((1, 2)), prev)


def test_elementwise_op_gradients():
    x = Param("x", np.random.default_rng(1).normal(size=(3, 4)))
    y = Param("y", np.random.default_rng(2).normal(size=(4,)))
    check_grads(lambda: ((x * y).tanh() + (x - y).sigmoid() + (x * 0.3).exp()).sum(), [x, y])
    check_grads(lambda: (x.leaky_relu() * x.square()).mean(), [x])
    check_grads(lambda: (x.clamp(-0.5, 0.5) * 2.0).sum(), [x])
    check_grads(lambda: concat([x[:, :2], (-x)[:, 2:]]).reshape(12).sum(), [x])


def test_matmul_gradients_with_batching():
    g = np.random.default_rng(3)
    a = Param("a", g.normal(size=(2, 3, 4)))
    w = Param("w", g.normal(size=(4, 5)))
    check_grads(lambda: ((a @ w).tanh() * 1.5).sum(), [a, w])


def test_masked_softmax_values_and_gradient():
    s = Param("s", np.array([[1.0, 2.0, 3.0], [0.5, -1.0, 0.0]]))
    mask = np.array([[True, True, False], [False, False, False]])
    w = masked_softmax(s, mask).data
    np.testing.assert_allclose(w[0], [1 / (1 + math.e), math.e / (1 + math.e), 0.0])
    np.testing.assert_array_equal(w[1], 0.0)
    coef = np.array([[1.0, -2.0, 5.0], [1.0, 1.0, 1.0]])
    check_grads(lambda: (masked_softmax(s, mask) * coef).sum(), [s])


def test_linear_and_gru_gradients():
    g = np.random.default_rng(4)
    lin = Linear(3, 2, g, np.float64)
    cell = GRUCell(2, 3, g, np.float64)
    for p in cell.params():
        p.data += g.normal(scale=0.1, size=p.data.shape)
    x = Tensor(g.normal(size=(5, 3)))
    h0 = Tensor(g.normal(size=(5, 3)))

    def loss():
        h = cell(lin(x), h0)
        h = cell(lin(x).leaky_relu(), h)
        return (h * h).sum()
    check_grads(loss, lin.params() + cell.params())


def test_no_grad_builds_no_graph():
    p = Param("p", np.ones(3))
    with no_grad():
        y = (p * 2.0).sum()
    assert not y.requires_grad
    y.backward()
    np.testing.assert_array_equal(p.grad, 0.0)
    y2 = (p * 2.0).sum()
    y2.backward()
    np.testing.assert_allclose(p.grad, 2.0)


def test_gaussian_sample_reparameterisation():
    d = gauss([1.0, -1.0], [0.0, math.log(4.0)])
    np.testing.assert_allclose(gaussian_sample(d, [0.0, 0.0]).data, [1.0, -1.0])
    np.testing.assert_allclose(gaussian_sample(d, [1.0, 1.0]).data, [2.0, 1.0])
    with pytest.raises(ShapeError):
        gaussian_sample(d, [0.0])


def test_log_density_standard_normal_and_normalisation():
    d = gauss([0.0, 0.0], [0.0, 0.0])
    assert float(gaussian_log_density(d, [0.0, 0.0]).data) == pytest.approx(-math.log(2 * math.pi))
    one = gauss([0.7], [math.log(0.3)])
    xs = np.linspace(-8, 8, 20001)
    dens = np.exp([float(gaussian_log_density(one, [x]).data) for x in xs])
    assert integrate.trapezoid(dens, xs) == pytest.approx(1.0, abs=1e-3)


def test_kl_closed_form():
    p = gauss(np.zeros(3), np.zeros(3))
    q = gauss(np.ones(3), np.zeros(3))
    assert float(kl_diag_gaussians(q, p).data) == pytest.approx(1.5)
    assert float(kl_diag_gaussians(p, p).data) == 0.0


def test_kl_matches_monte_carlo():
    q = gauss([0.3, -0.5], [math.log(0.5), math.log(2.0)])
    p = gauss([0.0, 0.2], [0.0, math.log(0.7)])
    g = np.random.default_rng(0)
    z = q.mean.data + q.std * g.standard_normal((1_000_000, 2))
    qz = DiagGaussian(Tensor(np.broadcast_to(q.mean.data, z.shape)), Tensor(np.broadcast_to(q.log_var.data, z.shape)))
    pz = DiagGaussian(Tensor(np.broadcast_to(p.mean.data, z.shape)), Tensor(np.broadcast_to(p.log_var.data, z.shape)))
    mc = float((gaussian_log_density(qz, z).data - gaussian_log_density(pz, z).data).mean())
    assert float(kl_diag_gaussians(q, p).data) == pytest.approx(mc, abs=1e-2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4),
       st.lists(st.floats(-6, 3), min_size=4, max_size=4))
def test_kl_nonnegative(means, log_vars):
    q = gauss(means[:2], log_vars[:2])
    p = gauss(means[2:], log_vars[2:])
    assert float(kl_diag_gaussians(q, p).data) >= -1e-12


def test_gaussian_head_clamps_log_variance():
    head = GaussianHead(2, [], 1, rng(), np.float64)
    head.out.weight.data[:] = 0.0
    head.out.bias.data[:] = [0.0, 100.0]
    assert head(Tensor(np.zeros((1, 2)))).log_var.data[0, 0] == LOG_VAR_MAX
    head.out.bias.data[:] = [0.0, -100.0]
    out = head(Tensor(np.zeros((1, 2))))
    assert out.log_var.data[0, 0] == LOG_VAR_MIN
    out.log_var.sum().backward()
    assert np.all(head.out.bias.grad == 0.0)


def test_adam_first_step_is_learning_rate():
    p = Param("w", np.array([1.0, -2.0]))
    p.grad[:] = [3.0, -0.01]
    Adam([("w", p)], lr=0.1).step()
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-6)
    np.testing.assert_array_equal(p.grad, 0.0)


def test_adam_converges_on_quadratic():
    target = np.array([3.0, -1.0, 0.5])
    p = Param("w", np.zeros(3))
    opt = Adam([("w", p)], lr=0.05)
    for _ in range(2000):
        d = p - Tensor(target)
        (d * d).sum().backward()
        opt.step()
    np.testing.assert_allclose(p.data, target, atol=1e-4)


def test_adam_rejects_non_finite_gradient():
    good = Param("good", np.ones(2))
    bad = Param("bad", np.ones(2))
    bad.grad[:] = [np.nan, 0.0]
    with pytest.raises(TrainingError, match="decoder.bias"):
        adam_update([("good", good), ("decoder.bias", bad)], 1e-3, 0.9, 0.999, 1e-8, 1)
    np.testing.assert_array_equal(good.data, 1.0)
