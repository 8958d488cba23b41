"""Feed-forward networks as a chain of functional blocks.

A block maps its input ``z`` to ``A(W z + b)``. Its parameters are flattened
as all weights in row-major order followed by the biases; that order indexes
Hessian rows, gradient vectors and snapshot arrays everywhere.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    pass


class Activation(str, enum.Enum):
    IDENTITY = "identity"
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"


def _sigmoid(u: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def activation_eval(kind: Activation | str, u, order: int = 0) -> np.ndarray:
    """Elementwise A(u), A'(u) or A''(u).

    ReLU uses A'(0) = 0 and A'' = 0 everywhere.
    """
    kind = Activation(kind)
    u = np.asarray(u, dtype=np.float64)
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    if kind is Activation.IDENTITY:
        return u.copy() if order == 0 else np.full_like(u, 1.0 if order == 1 else 0.0)
    if kind is Activation.RELU:
        if order == 0:
            return np.maximum(u, 0.0)
        if order == 1:
            return (u > 0).astype(np.float64)
        return np.zeros_like(u)
    if kind is Activation.SIGMOID:
        s = _sigmoid(u)
        if order == 0:
            return s
        d1 = s * (1.0 - s)
        return d1 if order == 1 else d1 * (1.0 - 2.0 * s)
    t = np.tanh(u)
    if order == 0:
        return t
    sech2 = 1.0 - t * t
    return sech2 if order == 1 else -2.0 * t * sech2


@dataclass
class FunctionalBlock:
    weights: np.ndarray  # q x d
    bias: np.ndarray  # q
    activation: Activation
    layer_index: int = 0

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        self.activation = Activation(self.activation)
        if self.weights.ndim != 2 or self.bias.size != self.weights.shape[0]:
            raise ShapeError(
                f"bias of length {self.bias.size} does not match weights {self.weights.shape}")

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_params(self) -> int:
        return self.n_out * self.n_in + self.n_out

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.weights.reshape(-1), self.bias])

    def with_params(self, theta) -> "FunctionalBlock":
        w, b = unflatten(theta, self.n_out, self.n_in)
        return FunctionalBlock(w, b, self.activation, self.layer_index)

    def check_input(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if z.size != self.n_in:
            raise ShapeError(
                f"block {self.layer_index} expects input of length {self.n_in}, got {z.size}")
        return z

    def preactivation(self, z) -> np.ndarray:
        return self.weights @ self.check_input(z) + self.bias

    def __call__(self, z) -> np.ndarray:
        return activation_eval(self.activation, self.preactivation(z))


def unflatten(theta, q: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if theta.size != q * d + q:
        raise ShapeError(f"expected {q * d + q} parameters, got {theta.size}")
    return theta[: q * d].reshape(q, d).copy(), theta[q * d:].copy()


def weight_index(j: int, k: int, d: int) -> int:
    """Flat position of W[j, k] in a block with fan-in ``d``."""
    return j * d + k


def bias_index(j: int, q: int, d: int) -> int:
    return q * d + j


@dataclass
class ForwardTrace:
    inputs: list[np.ndarray]  # z_i per block
    preactivations: list[np.ndarray]  # u_i
    outputs: list[np.ndarray]  # y_i

    @property
    def output(self) -> np.ndarray:
        return self.outputs[-1]


@dataclass
class Network:
    blocks: list[FunctionalBlock] = field(default_factory=list)

    def __post_init__(self):
        if not self.blocks:
            raise ShapeError("a network needs at least one block")
        for i, blk in enumerate(self.blocks):
            blk.layer_index = i
        for a, b in zip(self.blocks, self.blocks[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(
                    f"block {a.layer_index} outputs {a.n_out} values but block "
                    f"{b.layer_index} expects {b.n_in}")

    @property
    def n_params(self) -> int:
        return sum(b.n_params for b in self.blocks)

    @property
    def n_in(self) -> int:
        return self.blocks[0].n_in

    @property
    def n_out(self) -> int:
        return self.blocks[-1].n_out

    def copy(self) -> "Network":
        return Network([FunctionalBlock(b.weights.copy(), b.bias.copy(), b.activation,
                                        b.layer_index) for b in self.blocks])

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Batched forward pass, rows of ``x`` are samples."""
        h = np.asarray(x, dtype=np.float64)
        for blk in self.blocks:
            h = activation_eval(blk.activation, h @ blk.weights.T + blk.bias)
        return h


def forward(net: Network, x) -> ForwardTrace:
    z = np.asarray(x, dtype=np.float64).reshape(-1)
    if z.size != net.n_in:
        raise ShapeError(f"network expects input of length {net.n_in}, got {z.size}")
    inputs, pre, outs = [], [], []
    for blk in net.blocks:
        inputs.append(z)
        u = blk.preactivation(z)
        y = activation_eval(blk.activation, u)
        pre.append(u)
        outs.append(y)
        z = y
    return ForwardTrace(inputs, pre, outs)


def scalar_function(block: FunctionalBlock, z) -> float:
    """Sum of the block's outputs at input ``z``."""
    return float(np.sum(block(z)))


def block_gradient(block: FunctionalBlock, z) -> np.ndarray:
    """Gradient of the block's scalar function w.r.t. its flattened parameters."""
    z = block.check_input(z)
    d1 = activation_eval(block.activation, block.weights @ z + block.bias, 1)
    return np.concatenate([np.outer(d1, z).reshape(-1), d1])


def glorot_bound(n_in: int, n_out: int) -> float:
    return math.sqrt(6.0 / (n_in + n_out))


def init_network(widths: list[int], activations: list[Activation | str],
                 rng: np.random.Generator, scale: float = 1.0) -> Network:
    """Uniform fan-based initialisation, biases zero.

    ``widths`` lists layer sizes including input and output; ``scale``
    multiplies the uniform bound, pushing pre-activations into saturation
    when large.
    """
    if len(activations) != len(widths) - 1:
        raise ShapeError("need one activation per block")
    if scale <= 0:
        raise ValueError("init scale must be positive")
    blocks = []
    for i, (d, q) in enumerate(zip(widths[:-1], widths[1:])):
        a = scale * glorot_bound(d, q)
        w = rng.uniform(-a, a, size=(q, d))
        blocks.append(FunctionalBlock(w, np.zeros(q), Activation(activations[i]), i))
    return Network(blocks)
