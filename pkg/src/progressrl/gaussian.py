"""Gaussian parameter containers and the closed-form KL divergence."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .tensor import Tensor


@dataclass
class GaussianParams:
    """Mean and strictly positive standard deviation (scalars or vectors)."""

    mu: float | Tensor
    sigma: float | Tensor

    def as_lists(self) -> tuple[list[float], list[float]]:
        mu = list(self.mu.data) if isinstance(self.mu, Tensor) else [float(self.mu)]
        sig = list(self.sigma.data) if isinstance(self.sigma, Tensor) else [float(self.sigma)]
        if len(mu) != len(sig):
            raise ValueError(f"mu has {len(mu)} dims, sigma has {len(sig)}")
        return mu, sig


def kl_gaussian(p: GaussianParams, q: GaussianParams) -> float:
    """KL(p || q) for (diagonal) Gaussians; sum over dimensions.

    Per dimension: log(sq/sp) + (sp^2 + (mp - mq)^2) / (2 sq^2) - 1/2.
    Zero exactly when p == q.
    """
    mp, sp = p.as_lists()
    mq, sq = q.as_lists()
    if len(mp) != len(mq):
        raise ValueError(f"dimension mismatch: {len(mp)} vs {len(mq)}")
    total = 0.0
    for i in range(len(mp)):
        if sp[i] <= 0.0 or sq[i] <= 0.0:
            raise ValueError(f"sigma must be > 0, got p={sp[i]}, q={sq[i]}")
        d = mp[i] - mq[i]
        total += math.log(sq[i] / sp[i]) + (sp[i] * sp[i] + d * d) / (2.0 * sq[i] * sq[i]) - 0.5
    return total


def gaussian_log_density(x: float, mu: float, sigma: float) -> float:
    z = (x - mu) / sigma
    return -0.5 * z * z - math.log(sigma) - 0.5 * math.log(2.0 * math.pi)
