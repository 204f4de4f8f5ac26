"""LSTM/GRU cell steps and affine layers built on :mod:`imaginernn.autodiff`.

Gate conventions:

* LSTM gates are stacked in the order input, forget, cell-candidate, output
  (``i, f, g, o``); ``c' = f*c + i*g`` and ``h' = o*tanh(c')``.
* GRU gates are reset ``r``, update ``z`` and candidate ``n`` with
  ``n = tanh(W_n [x, r*h] + b_n)`` and ``h' = (1 - z)*h + z*n``, so a
  closed update gate (``z -> 0``) carries the state through unchanged.

Every gate matrix acts on the concatenation ``[x, h]`` and has shape
``[d_h, d_in + d_h]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError, ShapeError

CELL_KINDS = ("lstm", "gru")
GATES = {"lstm": ("i", "f", "g", "o"), "gru": ("r", "z", "n")}


@dataclass
class CellParams:
    kind: str
    d_in: int
    d_h: int
    # lstm: one block holding all four gates; gru: [r|z] block and n block
    weights: list[Parameter]
    biases: list[Parameter]

    def parameters(self) -> list[Parameter]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def gate_weight(self, gate: str) -> np.ndarray:
        """View of one gate's ``[d_h, d_in + d_h]`` matrix."""
        idx = GATES[self.kind].index(gate)
        if self.kind == "gru" and gate == "n":
            return self.weights[1].data
        return self.weights[0].data[idx * self.d_h:(idx + 1) * self.d_h]

    def gate_bias(self, gate: str) -> np.ndarray:
        idx = GATES[self.kind].index(gate)
        if self.kind == "gru" and gate == "n":
            return self.biases[1].data
        return self.biases[0].data[idx * self.d_h:(idx + 1) * self.d_h]


@dataclass
class CellState:
    h: Tensor
    c: Tensor | None = None

    @classmethod
    def zeros(cls, kind: str, d_h: int, batch: int | None = None) -> "CellState":
        shape = (d_h,) if batch is None else (batch, d_h)
        c = Tensor(np.zeros(shape)) if kind == "lstm" else None
        return cls(Tensor(np.zeros(shape)), c)

    def detached(self) -> "CellState":
        return CellState(ad.detach(self.h), None if self.c is None else ad.detach(self.c))


@dataclass
class LinearParams:
    weight: Parameter
    bias: Parameter
    activation: str | None = None

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_cell(kind: str, d_in: int, d_h: int, rng: np.random.Generator,
              forget_bias: float = 1.0, name: str = "cell") -> CellParams:
    if kind not in CELL_KINDS:
        raise ConfigError(f"cell kind must be one of {CELL_KINDS}, got {kind!r}")
    fan_in = d_in + d_h
    if kind == "lstm":
        w = _uniform(rng, (4 * d_h, fan_in), fan_in)
        b = _uniform(rng, (4 * d_h,), fan_in)
        b[d_h:2 * d_h] = forget_bias
        weights = [Parameter(w, name=f"{name}.w")]
        biases = [Parameter(b, name=f"{name}.b")]
    else:
        weights = [Parameter(_uniform(rng, (2 * d_h, fan_in), fan_in), name=f"{name}.w_rz"),
                   Parameter(_uniform(rng, (d_h, fan_in), fan_in), name=f"{name}.w_n")]
        biases = [Parameter(_uniform(rng, (2 * d_h,), fan_in), name=f"{name}.b_rz"),
                  Parameter(_uniform(rng, (d_h,), fan_in), name=f"{name}.b_n")]
    return CellParams(kind, d_in, d_h, weights, biases)


def init_linear(d_in: int, d_out: int, rng: np.random.Generator,
                activation: str | None = None, name: str = "linear") -> LinearParams:
    return LinearParams(Parameter(_uniform(rng, (d_out, d_in), d_in), name=f"{name}.w"),
                        Parameter(_uniform(rng, (d_out,), d_in), name=f"{name}.b"),
                        activation)


def cell_step(params: CellParams, x: Tensor, state: CellState) -> CellState:
    """Advance one recurrent step on input ``x`` (``[d_in]`` or ``[B, d_in]``)."""
    if x.shape[-1] != params.d_in:
        raise ShapeError(f"{params.kind} cell expects inputs of width {params.d_in}, got {x.shape}")
    if state.h.shape[-1] != params.d_h or state.h.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"state {state.h.shape} does not match input {x.shape} and d_h={params.d_h}")
    d = params.d_h
    h = state.h
    if params.kind == "lstm":
        if state.c is None:
            raise ShapeError("lstm state needs a memory cell")
        z = ad.affine(ad.concat([x, h]), params.weights[0], params.biases[0])
        i = ad.sigmoid(ad.slice_last(z, 0, d))
        f = ad.sigmoid(ad.slice_last(z, d, 2 * d))
        g = ad.tanh(ad.slice_last(z, 2 * d, 3 * d))
        o = ad.sigmoid(ad.slice_last(z, 3 * d, 4 * d))
        c_new = ad.add(ad.mul(f, state.c), ad.mul(i, g))
        return CellState(ad.mul(o, ad.tanh(c_new)), c_new)

    rz = ad.sigmoid(ad.affine(ad.concat([x, h]), params.weights[0], params.biases[0]))
    r = ad.slice_last(rz, 0, d)
    u = ad.slice_last(rz, d, 2 * d)
    n = ad.tanh(ad.affine(ad.concat([x, ad.mul(r, h)]), params.weights[1], params.biases[1]))
    # h' = h + z*(n - h)
    return CellState(ad.add(h, ad.mul(u, ad.sub(n, h))))


def linear_forward(params: LinearParams, x: Tensor) -> Tensor:
    if x.shape[-1] != params.d_in:
        raise ShapeError(f"linear layer expects width {params.d_in}, got {x.shape}")
    y = ad.affine(x, params.weight, params.bias)
    if params.activation is not None:
        y = ad.activation(params.activation, y)
    return y
