"""Bias-corrected Adam over flat parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass

from .backend import K
from .errors import ConfigError
from .tensor import Tensor


@dataclass
class AdamState:
    m: Tensor
    v: Tensor
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(n_params: int, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    return AdamState(Tensor((n_params,)), Tensor((n_params,)), 0, beta1, beta2, eps)


def adam_step(params: Tensor, grads: Tensor, state: AdamState,
              lr: float) -> tuple[Tensor, AdamState]:
    """One functional Adam update; returns fresh (params, state)."""
    n = params.size
    if grads.size != n or state.m.size != n or state.v.size != n:
        raise ConfigError(
            f"adam_step: params {n}, grads {grads.size}, m {state.m.size}, v {state.v.size}")
    if lr <= 0.0:
        raise ConfigError(f"adam_step: lr must be > 0, got {lr}")
    p = params.copy()
    m = state.m.copy()
    v = state.v.copy()
    t = state.t + 1
    K.adam_kernel(p.data, m.data, v.data, grads.data, n, t, lr,
                  state.beta1, state.beta2, state.eps)
    return p, AdamState(m, v, t, state.beta1, state.beta2, state.eps)
