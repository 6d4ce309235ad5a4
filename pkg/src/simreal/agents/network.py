"""Fully connected network built from affine maps and pointwise activations.

Forward and reverse mode are written out by hand in numpy so every gradient
can be checked against finite differences. Inputs may be a single vector or a
batch (rows); parameter gradients are summed over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DimensionMismatch


def _identity(z):
    return z


def _relu(z):
    return np.maximum(z, 0.0)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# derivative expressed through (pre-activation z, activation a)
ACTIVATIONS = {
    "linear": (_identity, lambda z, a: np.ones_like(z)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "relu": (_relu, lambda z, a: (z > 0).astype(float)),
    "sigmoid": (_sigmoid, lambda z, a: a * (1.0 - a)),
}


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise DimensionMismatch(f"bias {self.b.shape} does not match weight {self.W.shape}")


class LayeredNetwork:
    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.W.shape[0] != b.W.shape[1]:
                raise DimensionMismatch(f"layer output {a.W.shape[0]} feeds input {b.W.shape[1]}")

    @classmethod
    def build(cls, dims: Sequence[int], hidden_activation: str = "tanh",
              output_activation: str = "linear", rng: np.random.Generator | int | None = 0) -> "LayeredNetwork":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation."""
        if len(dims) < 2:
            raise ValueError("need at least input and output dimensions")
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            b = rng.uniform(-bound, bound, size=fan_out)
            act = output_activation if i == len(dims) - 2 else hidden_activation
            layers.append(Layer(W, b, act))
        return cls(layers)

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.layers[0].W.shape[1], *[l.W.shape[0] for l in self.layers])

    @property
    def activations(self) -> tuple[str, ...]:
        return tuple(l.activation for l in self.layers)

    def parameters(self) -> list[np.ndarray]:
        """Live references, ordered W1, b1, W2, b2, ..."""
        out = []
        for l in self.layers:
            out.extend((l.W, l.b))
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "LayeredNetwork":
        return LayeredNetwork([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])

    def forward(self, x, cache: bool = False):
        a = np.asarray(x, dtype=float)
        if a.shape[-1] != self.dims[0]:
            raise DimensionMismatch(f"input has {a.shape[-1]} features, network expects {self.dims[0]}")
        tape = []
        for l in self.layers:
            z = a @ l.W.T + l.b
            out = ACTIVATIONS[l.activation][0](z)
            tape.append((a, z, out))
            a = out
        return (a, tape) if cache else a

    def backward(self, tape, upstream) -> tuple[list[np.ndarray], np.ndarray]:
        """Parameter gradients of ``sum(upstream * output)`` and the input gradient."""
        g = np.asarray(upstream, dtype=float)
        if g.shape != tape[-1][2].shape:
            raise DimensionMismatch(f"upstream {g.shape} does not match output {tape[-1][2].shape}")
        grads: list[np.ndarray] = []
        for l, (a_in, z, a_out) in zip(reversed(self.layers), reversed(tape)):
            g = g * ACTIVATIONS[l.activation][1](z, a_out)
            if g.ndim == 1:
                gW = np.outer(g, a_in)
                gb = g.copy()
            else:
                gW = g.T @ a_in
                gb = g.sum(axis=0)
            grads.extend((gb, gW))
            g = g @ l.W
        grads.reverse()
        return grads, g

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "activations": list(self.activations),
            "layers": [{"W": l.W.tolist(), "b": l.b.tolist()} for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayeredNetwork":
        layers = [Layer(np.array(l["W"], dtype=float).reshape(o, i), np.array(l["b"], dtype=float), act)
                  for l, act, i, o in zip(d["layers"], d["activations"], d["dims"], d["dims"][1:])]
        return cls(layers)


def forward(net: LayeredNetwork, x) -> np.ndarray:
    return net.forward(x)


def backprop(net: LayeredNetwork, x, upstream) -> list[np.ndarray]:
    _, tape = net.forward(x, cache=True)
    return net.backward(tape, upstream)[0]


class Adam:
    """Adam over a fixed list of parameter arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        """Descend along ``grads``."""
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}

    def load_state_dict(self, d: dict) -> None:
        self.t = int(d["t"])
        for dst, src in zip(self.m, d["m"]):
            dst[...] = np.array(src).reshape(dst.shape)
        for dst, src in zip(self.v, d["v"]):
            dst[...] = np.array(src).reshape(dst.shape)
