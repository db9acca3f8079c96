"""Multilayer perceptrons: tanh hidden layers, identity output.

Two evaluation paths share the same kernels (and therefore the same
bits): ``mlp_forward`` for inference and ``mlp_apply`` for building the
differentiable graph on a Tape.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass
from typing import Sequence

from .autodiff import Tape, Var
from .backend import K
from .errors import ConfigError
from .rng import RngKey, fold_in, uniforms
from .tensor import Tensor, new_buf


@dataclass
class MlpParams:
    """Ordered (weight [out, in], bias [out]) pairs."""

    layers: list[tuple[Tensor, Tensor]]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def flatten(self) -> Tensor:
        buf = array("d")
        for w, b in self.layers:
            buf.extend(w.data)
            buf.extend(b.data)
        return Tensor((len(buf),), buf)

    def copy(self) -> "MlpParams":
        return MlpParams([(w.copy(), b.copy()) for w, b in self.layers])


def mlp_from_flat(template: MlpParams, flat: Tensor, offset: int = 0) -> MlpParams:
    layers = []
    pos = offset
    for w, b in template.layers:
        wt = Tensor(w.shape, flat.data[pos : pos + w.size])
        pos += w.size
        bt = Tensor(b.shape, flat.data[pos : pos + b.size])
        pos += b.size
        layers.append((wt, bt))
    return MlpParams(layers)


def init_mlp(key: RngKey, sizes: Sequence[int]) -> MlpParams:
    """Fan-based uniform init in +-sqrt(6/(in+out)); biases zero."""
    if len(sizes) < 2:
        raise ConfigError("an MLP needs at least input and output sizes")
    layers = []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        u = uniforms(fold_in(key, i), fan_out * fan_in)
        w = new_buf(fan_out * fan_in)
        K.axpb(u.data, 2.0 * bound, -bound, w, fan_out * fan_in)
        layers.append((Tensor((fan_out, fan_in), w), Tensor((fan_out,))))
    return MlpParams(layers)


def mlp_forward(params: MlpParams, inputs: Tensor) -> Tensor:
    """Batched forward pass; rows are independent."""
    if len(inputs.shape) != 2:
        raise ConfigError(f"mlp_forward wants [batch, in], got {inputs.shape}")
    n, din = inputs.shape
    if din != params.in_dim:
        raise ConfigError(f"input width {din} != first layer width {params.in_dim}")
    h = inputs
    last = len(params.layers) - 1
    for li, (w, b) in enumerate(params.layers):
        dout, dk = w.shape
        out = new_buf(n * dout)
        K.affine_fwd(h.data, w.data, b.data, out, n, dk, dout)
        if li != last:
            K.tanh_fwd(out, out, n * dout)
        h = Tensor((n, dout), out)
    return h


def mlp_apply(tape: Tape, layer_vars: Sequence[tuple[Var, Var]], x: Var) -> Var:
    """Tape-path forward pass over layer Vars."""
    h = x
    last = len(layer_vars) - 1
    for li, (w, b) in enumerate(layer_vars):
        h = tape.affine(h, w, b)
        if li != last:
            h = tape.tanh(h)
    return h


def mlp_segment_vars(tape: Tape, flat_var: Var, template: MlpParams,
                     offset: int = 0) -> tuple[list[tuple[Var, Var]], int]:
    """Layer Vars carved out of one flat parameter Var; returns (vars, end)."""
    layer_vars = []
    pos = offset
    for w, b in template.layers:
        wv = tape.segment(flat_var, pos, w.shape)
        pos += w.size
        bv = tape.segment(flat_var, pos, b.shape)
        pos += b.size
        layer_vars.append((wv, bv))
    return layer_vars, pos
