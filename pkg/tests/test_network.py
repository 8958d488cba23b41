import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from layerhess.network import (Activation, FunctionalBlock, Network, ShapeError, activation_eval,
                               bias_index, block_gradient, forward, init_network, scalar_function,
                               unflatten, weight_index)

from conftest import random_block

SIG1 = 1 / (1 + np.exp(-1.0))


def test_activation_examples():
    assert activation_eval("tanh", 0.0) == 0.0
    assert activation_eval("sigmoid", 0.0, 1) == 0.25
    # oracle: central difference of sigma' at u=1
    h = 1e-5
    fd = (activation_eval("sigmoid", 1 + h, 1) - activation_eval("sigmoid", 1 - h, 1)) / (2 * h)
    assert activation_eval("sigmoid", 1.0, 2) == pytest.approx(fd, abs=1e-9)
    assert activation_eval("sigmoid", 1.0, 2) == pytest.approx(-0.09085776, abs=1e-7)


def test_relu_convention_at_zero():
    assert activation_eval("relu", 0.0, 1) == 0.0
    assert np.all(activation_eval("relu", np.array([-1.0, 0.0, 2.0]), 2) == 0.0)


def test_sigmoid_is_overflow_safe():
    with np.errstate(over="raise"):
        out = activation_eval("sigmoid", np.array([-800.0, 800.0]))
    np.testing.assert_array_equal(out, [0.0, 1.0])


@pytest.mark.parametrize("kind", ["sigmoid", "tanh"])
@given(u=st.floats(-6, 6))
def test_second_derivative_matches_fd(kind, u):
    h = 1e-5
    fd = (activation_eval(kind, u + h, 1) - activation_eval(kind, u - h, 1)) / (2 * h)
    assert activation_eval(kind, u, 2) == pytest.approx(fd, abs=1e-6)


def test_forward_examples():
    blk = FunctionalBlock(np.eye(2), np.zeros(2), "identity")
    np.testing.assert_array_equal(forward(Network([blk]), [3.0, -4.0]).output, [3.0, -4.0])
    relu = FunctionalBlock(np.eye(2), np.zeros(2), "relu")
    np.testing.assert_array_equal(forward(Network([relu]), [-1.0, 2.0]).output, [0.0, 2.0])


def test_two_block_forward_is_composition(rng):
    b1, b2 = random_block(rng, 3, 2, "tanh"), random_block(rng, 2, 3, "tanh")
    b2.layer_index = 1
    net = Network([b1, b2])
    x = rng.normal(size=2)
    tr = forward(net, x)
    np.testing.assert_allclose(tr.output, b2(b1(x)), rtol=0, atol=0)
    np.testing.assert_array_equal(tr.inputs[0], x)
    np.testing.assert_array_equal(tr.inputs[1], tr.outputs[0])


def test_network_rejects_bad_chain(rng):
    with pytest.raises(ShapeError):
        Network([random_block(rng, 3, 2, "tanh"), random_block(rng, 2, 4, "tanh")])
    with pytest.raises(ShapeError):
        forward(Network([random_block(rng, 3, 2, "tanh")]), [1.0, 2.0, 3.0])


def test_scalar_function_examples():
    assert scalar_function(FunctionalBlock(np.zeros((2, 1)), [1, 2], "identity"), [7.0]) == 3.0
    assert scalar_function(FunctionalBlock(np.zeros((2, 1)), [-5, 4], "relu"), [7.0]) == 4.0
    sig = FunctionalBlock([[0.5]], [0.0], "sigmoid")
    assert scalar_function(sig, [2.0]) == pytest.approx(0.7310586, abs=1e-7)


def test_block_gradient_examples():
    ident = FunctionalBlock(np.zeros((1, 2)), [0.0], "identity")
    np.testing.assert_array_equal(block_gradient(ident, [3.0, 4.0]), [3.0, 4.0, 1.0])
    relu = FunctionalBlock(-np.ones((2, 2)), [-1.0, -1.0], "relu")
    assert np.all(block_gradient(relu, [1.0, 1.0]) == 0)
    sig = FunctionalBlock([[0.5]], [0.0], "sigmoid")
    np.testing.assert_allclose(block_gradient(sig, [2.0]), [0.3932238, 0.1966119], atol=1e-7)


@given(st.integers(1, 16), st.integers(1, 16), st.sampled_from(["sigmoid", "tanh"]),
       st.integers(0, 2 ** 32 - 1))
def test_block_gradient_matches_fd(q, d, kind, seed):
    rng = np.random.default_rng(seed)
    blk = random_block(rng, q, d, kind)
    z = rng.normal(size=d)
    theta = blk.flat_params()
    h = 1e-6
    g = block_gradient(blk, z)
    for j in rng.choice(theta.size, size=min(theta.size, 12), replace=False):
        e = np.zeros_like(theta)
        e[j] = h
        fd = (scalar_function(blk.with_params(theta + e), z)
              - scalar_function(blk.with_params(theta - e), z)) / (2 * h)
        assert abs(fd - g[j]) <= 1e-6


def test_flattening_order():
    blk = FunctionalBlock([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], [7.0, 8.0], "tanh")
    theta = blk.flat_params()
    assert theta.tolist() == [1, 2, 3, 4, 5, 6, 7, 8]
    assert theta[weight_index(1, 2, 3)] == 6.0
    assert theta[bias_index(1, 2, 3)] == 8.0
    w, b = unflatten(theta, 2, 3)
    np.testing.assert_array_equal(w, blk.weights)
    with pytest.raises(ShapeError):
        unflatten(theta[:-1], 2, 3)


def test_init_network_bounds_and_scale():
    rng = np.random.default_rng(0)
    net = init_network([4, 8, 2], ["tanh", "identity"], rng, scale=3.0)
    bound = 3.0 * np.sqrt(6 / 12)
    assert np.max(np.abs(net.blocks[0].weights)) <= bound
    assert np.all(net.blocks[0].bias == 0)
    assert net.blocks[1].activation is Activation.IDENTITY
    assert net.n_params == 4 * 8 + 8 + 8 * 2 + 2
