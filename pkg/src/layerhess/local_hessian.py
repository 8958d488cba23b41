"""Local Hessians of a block's scalar function with respect to its own parameters.

Three independent routes are provided:

* :func:`hessian_rowwise` builds the matrix one row at a time. Each row is
  the forward-mode derivative of the reverse-mode gradient along one
  parameter direction, and rows whose gradient entry cannot depend on the
  parameters are written as zeros without differentiating.
* :func:`hessian_closed_form` writes the analytic entries directly.
* :func:`hessian_fd` uses central second differences of the scalar function.

With sum aggregation only parameters feeding the same output neuron
interact, so the Hessian is block diagonal per neuron (up to the
weights-then-biases ordering). :class:`NeuronBlockHessian` keeps just those
``(d+1) x (d+1)`` blocks, which is how wide layers are handled.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .network import (Activation, FunctionalBlock, Network, ShapeError, activation_eval,
                      forward)
from .numerics import max_abs

FD_STEP = 1e-4


@dataclass(frozen=True)
class LocalHessian:
    layer_index: int
    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class NeuronBlockHessian:
    """Per-neuron diagonal blocks of a local Hessian.

    ``blocks[j]`` is indexed by the neuron-local coordinates
    ``(W[j, 0], ..., W[j, d-1], b[j])``.
    """
    layer_index: int
    n_out: int
    n_in: int
    blocks: np.ndarray  # q x (d+1) x (d+1)

    @property
    def dim(self) -> int:
        return self.n_out * (self.n_in + 1)

    def neuron_coordinates(self, j: int) -> np.ndarray:
        d, q = self.n_in, self.n_out
        return np.append(np.arange(j * d, (j + 1) * d), q * d + j)

    def to_dense(self) -> LocalHessian:
        h = np.zeros((self.dim, self.dim))
        for j in range(self.n_out):
            idx = self.neuron_coordinates(j)
            h[np.ix_(idx, idx)] = self.blocks[j]
        return LocalHessian(self.layer_index, h)

    def eigenvalues(self) -> np.ndarray:
        """Spectrum of the full Hessian: the union of the block spectra, ascending."""
        if self.n_out == 0:
            return np.zeros(0)
        sym = 0.5 * (self.blocks + np.transpose(self.blocks, (0, 2, 1)))
        return np.sort(np.linalg.eigvalsh(sym).reshape(-1), kind="stable")


def _row_is_constant(activation: Activation, z: np.ndarray, j: int, q: int, d: int) -> bool:
    # gradient entry for W[a, k] is A'(u_a) z_k and for b[a] is A'(u_a)
    if activation is Activation.IDENTITY:
        return True
    if activation is Activation.RELU:
        # A' is piecewise constant; at u == 0 the convention A'' = 0 applies
        return True
    return j < q * d and z[j % d] == 0.0


def _row_local(d2: np.ndarray, z_ext: np.ndarray, j: int, q: int, d: int) -> tuple[int, np.ndarray]:
    """Derivative of the gradient along parameter ``j``.

    The tangent of parameter ``j`` only moves the pre-activation of its own
    neuron ``a``; pushing it through ``g = [A'(u) z^T | A'(u)]`` gives a row
    supported on neuron ``a``'s coordinates. Returns ``a`` and that support.
    """
    if j < q * d:
        a, k = divmod(j, d)
        u_dot = z_ext[k]
    else:
        a, u_dot = j - q * d, 1.0
    return a, (d2[a] * u_dot) * z_ext


def _second_derivatives(block: FunctionalBlock, z: np.ndarray) -> np.ndarray:
    return activation_eval(block.activation, block.weights @ z + block.bias, 2)


def hessian_rowwise(block: FunctionalBlock, z, workers: int = 1) -> LocalHessian:
    """Local Hessian assembled row by row.

    ``workers > 1`` spreads rows over threads; every row is written exactly
    once so the result is identical to the sequential run.
    """
    z = block.check_input(z)
    q, d, p = block.n_out, block.n_in, block.n_params
    h = np.zeros((p, p))
    d2 = _second_derivatives(block, z)
    z_ext = np.append(z, 1.0)

    def fill(rows):
        for j in rows:
            if _row_is_constant(block.activation, z, j, q, d):
                continue
            a, vals = _row_local(d2, z_ext, j, q, d)
            h[j, a * d:(a + 1) * d] = vals[:d]
            h[j, q * d + a] = vals[d]

    if workers <= 1 or p < 2:
        fill(range(p))
    else:
        chunks = np.array_split(np.arange(p), workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, chunks))
    return LocalHessian(block.layer_index, h)


def hessian_neuron_blocks(block: FunctionalBlock, z) -> NeuronBlockHessian:
    """Same rows as :func:`hessian_rowwise`, keeping only each neuron's block."""
    z = block.check_input(z)
    q, d = block.n_out, block.n_in
    blocks = np.zeros((q, d + 1, d + 1))
    d2 = _second_derivatives(block, z)
    z_ext = np.append(z, 1.0)
    for a in range(q):
        for r in range(d + 1):
            j = a * d + r if r < d else q * d + a
            if _row_is_constant(block.activation, z, j, q, d):
                continue
            _, vals = _row_local(d2, z_ext, j, q, d)
            blocks[a, r] = vals
    return NeuronBlockHessian(block.layer_index, q, d, blocks)


def hessian_closed_form(block: FunctionalBlock, z) -> LocalHessian:
    z = block.check_input(z)
    q, d, p = block.n_out, block.n_in, block.n_params
    d2 = _second_derivatives(block, z)
    h = np.zeros((p, p))
    zz = np.outer(z, z)
    for j in range(q):
        w = slice(j * d, (j + 1) * d)
        bj = q * d + j
        h[w, w] = d2[j] * zz
        h[w, bj] = d2[j] * z
        h[bj, w] = d2[j] * z
        h[bj, bj] = d2[j]
    return LocalHessian(block.layer_index, h)


def _scalar_batch(block: FunctionalBlock, thetas: np.ndarray, z: np.ndarray) -> np.ndarray:
    q, d = block.n_out, block.n_in
    w = thetas[:, : q * d].reshape(-1, q, d)
    b = thetas[:, q * d:]
    u = np.einsum("mqd,d->mq", w, z) + b
    return activation_eval(block.activation, u).sum(axis=1)


def hessian_fd(block: FunctionalBlock, z, h: float = FD_STEP) -> LocalHessian:
    """Central second differences of the scalar function, symmetrized."""
    if not (1e-6 <= h <= 1e-3):
        raise ValueError(f"finite-difference step {h} outside [1e-6, 1e-3]")
    z = block.check_input(z)
    theta = block.flat_params()
    p = theta.size
    eye = np.eye(p) * h
    out = np.zeros((p, p))
    for j in range(p):
        plus = theta + eye[j]
        minus = theta - eye[j]
        fpp = _scalar_batch(block, plus + eye, z)
        fpm = _scalar_batch(block, plus - eye, z)
        fmp = _scalar_batch(block, minus + eye, z)
        fmm = _scalar_batch(block, minus - eye, z)
        out[j] = (fpp - fpm - fmp + fmm) / (4.0 * h * h)
    return LocalHessian(block.layer_index, 0.5 * (out + out.T))


def all_local_hessians(net: Network, x, workers: int = 1) -> list[LocalHessian]:
    trace = forward(net, x)
    return [hessian_rowwise(blk, z, workers) for blk, z in zip(net.blocks, trace.inputs)]


def all_neuron_block_hessians(net: Network, x) -> list[NeuronBlockHessian]:
    trace = forward(net, x)
    return [hessian_neuron_blocks(blk, z) for blk, z in zip(net.blocks, trace.inputs)]


def max_discrepancy(a: LocalHessian, b: LocalHessian) -> float:
    if a.matrix.shape != b.matrix.shape:
        raise ShapeError(f"shape mismatch {a.matrix.shape} vs {b.matrix.shape}")
    return max_abs(a.matrix - b.matrix)
