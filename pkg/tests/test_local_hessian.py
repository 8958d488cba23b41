"""Three independent routes to the local Hessian must agree."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from layerhess.local_hessian import (NeuronBlockHessian, all_local_hessians,
                                     all_neuron_block_hessians, hessian_closed_form, hessian_fd,
                                     hessian_neuron_blocks, hessian_rowwise, max_discrepancy)
from layerhess.network import FunctionalBlock, Network, ShapeError, activation_eval, forward

from conftest import random_block

S2 = float(activation_eval("sigmoid", 1.0, 2))
SIGMOID_1X1 = np.array([[4 * S2, 2 * S2], [2 * S2, S2]])


@pytest.fixture
def sigmoid_1x1():
    return FunctionalBlock([[0.5]], [0.0], "sigmoid")


class TestRowwise:
    def test_identity_block_is_zero(self, rng):
        blk = random_block(rng, 4, 3, "identity")
        assert np.all(hessian_rowwise(blk, rng.normal(size=3)).matrix == 0)

    def test_relu_with_nonzero_preactivations_is_zero(self, rng):
        blk = random_block(rng, 5, 4, "relu")
        z = rng.normal(size=4)
        assert np.all(blk.preactivation(z) != 0)
        assert np.all(hessian_rowwise(blk, z).matrix == 0)

    def test_sigmoid_1x1_values(self, sigmoid_1x1):
        h = hessian_rowwise(sigmoid_1x1, [2.0]).matrix
        np.testing.assert_allclose(h, [[-0.363431, -0.181716], [-0.181716, -0.090858]], atol=1e-6)
        np.testing.assert_allclose(h, hessian_fd(sigmoid_1x1, [2.0]).matrix, atol=1e-6)

    def test_exact_symmetry_without_symmetrization(self, rng):
        blk = random_block(rng, 6, 5, "tanh")
        h = hessian_rowwise(blk, rng.normal(size=5)).matrix
        assert np.max(np.abs(h - h.T)) <= 1e-10

    def test_zero_input_coordinate_skips_row(self, rng):
        blk = random_block(rng, 2, 3, "sigmoid")
        z = np.array([0.7, 0.0, -1.2])
        h = hessian_rowwise(blk, z).matrix
        for j in range(2):
            assert np.all(h[j * 3 + 1] == 0)

    def test_threads_give_identical_result(self, rng):
        blk = random_block(rng, 12, 9, "tanh")
        z = rng.normal(size=9)
        seq = hessian_rowwise(blk, z).matrix
        for w in (2, 3, 8):
            np.testing.assert_array_equal(hessian_rowwise(blk, z, workers=w).matrix, seq)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ShapeError):
            hessian_rowwise(random_block(rng, 2, 3, "tanh"), np.ones(4))


class TestClosedForm:
    def test_tanh_at_zero_preactivation(self):
        blk = FunctionalBlock([[1.0, -1.0]], [0.0], "tanh")
        assert np.all(hessian_closed_form(blk, [2.0, 2.0]).matrix == 0)

    def test_block_diagonal_per_neuron(self):
        blk = FunctionalBlock([[0.3], [-0.8]], [0.1, 0.2], "sigmoid")
        h = hessian_closed_form(blk, [1.5]).matrix
        # order: W00, W10, b0, b1 -> neuron 0 owns {0, 2}, neuron 1 owns {1, 3}
        for i, j in [(0, 1), (0, 3), (1, 2), (2, 3)]:
            assert h[i, j] == 0 and h[j, i] == 0

    def test_sigmoid_1x1(self, sigmoid_1x1):
        np.testing.assert_allclose(hessian_closed_form(sigmoid_1x1, [2.0]).matrix, SIGMOID_1X1,
                                   rtol=1e-15)
        np.testing.assert_allclose(hessian_fd(sigmoid_1x1, [2.0]).matrix, SIGMOID_1X1, atol=1e-5)


class TestFiniteDifference:
    def test_identity_is_near_zero(self, rng):
        blk = random_block(rng, 3, 2, "identity")
        assert np.max(np.abs(hessian_fd(blk, rng.normal(size=2)).matrix)) <= 1e-6

    @pytest.mark.parametrize("h", [1e-7, 2e-3])
    def test_step_range(self, sigmoid_1x1, h):
        with pytest.raises(ValueError):
            hessian_fd(sigmoid_1x1, [2.0], h=h)

    def test_tanh_matches_rowwise(self, rng):
        blk = random_block(rng, 4, 5, "tanh")
        z = rng.normal(size=5)
        assert max_discrepancy(hessian_fd(blk, z), hessian_rowwise(blk, z)) <= 1e-4


@given(st.integers(1, 10), st.integers(1, 10), st.sampled_from(["sigmoid", "tanh"]),
       st.integers(0, 2 ** 32 - 1))
def test_three_way_agreement(q, d, kind, seed):
    rng = np.random.default_rng(seed)
    blk = random_block(rng, q, d, kind)
    z = rng.normal(size=d)
    rw, cf = hessian_rowwise(blk, z), hessian_closed_form(blk, z)
    scale = max(1.0, np.max(np.abs(cf.matrix)))
    assert max_discrepancy(rw, cf) <= 1e-9 * scale
    assert max_discrepancy(hessian_fd(blk, z), cf) <= 1e-4


@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
def test_neuron_blocks_match_dense(q, d, seed):
    rng = np.random.default_rng(seed)
    blk = random_block(rng, q, d, "tanh")
    z = rng.normal(size=d)
    nb = hessian_neuron_blocks(blk, z)
    dense = hessian_rowwise(blk, z)
    np.testing.assert_array_equal(nb.to_dense().matrix, dense.matrix)
    np.testing.assert_allclose(nb.eigenvalues(), np.linalg.eigvalsh(dense.matrix), atol=1e-12)


def test_rank_bounded_by_neurons(rng):
    blk = random_block(rng, 3, 6, "sigmoid")
    h = hessian_rowwise(blk, rng.normal(size=6)).matrix
    assert np.linalg.matrix_rank(h) <= 3


def test_scale_law_at_fixed_preactivation(rng):
    blk = random_block(rng, 3, 4, "tanh")
    z = rng.normal(size=4)
    c = 2.5
    u = blk.preactivation(z)
    # same u with input c*z: keep W, move the bias
    moved = FunctionalBlock(blk.weights, u - blk.weights @ (c * z), "tanh")
    h1 = hessian_closed_form(blk, z).matrix
    h2 = hessian_closed_form(moved, c * z).matrix
    qd = 12
    np.testing.assert_allclose(h2[:qd, :qd], c ** 2 * h1[:qd, :qd], rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(h2[:qd, qd:], c * h1[:qd, qd:], rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(h2[qd:, qd:], h1[qd:, qd:], rtol=1e-12, atol=1e-15)


class TestNetworkSweep:
    def test_all_identity_network(self, rng):
        net = Network([random_block(rng, 3, 2, "identity"), random_block(rng, 2, 3, "identity")])
        assert all(np.all(h.matrix == 0) for h in all_local_hessians(net, rng.normal(size=2)))

    def test_matches_manual_recompute(self, rng):
        net = Network([random_block(rng, 4, 3, "tanh"), random_block(rng, 2, 4, "tanh")])
        x = rng.normal(size=3)
        tr = forward(net, x)
        for i, h in enumerate(all_local_hessians(net, x)):
            assert h.layer_index == i
            np.testing.assert_array_equal(h.matrix, hessian_rowwise(net.blocks[i], tr.inputs[i]).matrix)

    def test_relu_between_tanh(self, rng):
        net = Network([random_block(rng, 4, 3, "tanh"), random_block(rng, 4, 4, "relu"),
                       random_block(rng, 2, 4, "tanh")])
        hs = all_local_hessians(net, rng.normal(size=3))
        assert np.all(hs[1].matrix == 0)
        assert np.any(hs[0].matrix != 0) and np.any(hs[2].matrix != 0)

    def test_neuron_block_sweep(self, rng):
        net = Network([random_block(rng, 4, 3, "tanh"), random_block(rng, 2, 4, "sigmoid")])
        x = rng.normal(size=3)
        for nb, h in zip(all_neuron_block_hessians(net, x), all_local_hessians(net, x)):
            assert isinstance(nb, NeuronBlockHessian)
            np.testing.assert_array_equal(nb.to_dense().matrix, h.matrix)
