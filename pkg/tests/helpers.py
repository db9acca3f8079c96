"""Shared test oracles: finite differences, quadrature, rank correlation."""

from __future__ import annotations

import math

from progressrl.tensor import Tensor


def fd_grad(loss_of_flat, flat: Tensor, h: float = 1e-5) -> list[float]:
    """Central finite-difference gradient of a scalar loss over a flat vector."""
    g = []
    for i in range(flat.size):
        orig = flat.data[i]
        flat.data[i] = orig + h
        lp = loss_of_flat(flat)
        flat.data[i] = orig - h
        lm = loss_of_flat(flat)
        flat.data[i] = orig
        g.append((lp - lm) / (2.0 * h))
    return g


def assert_grads_close(analytic, numeric, tol: float = 1e-4) -> None:
    assert len(analytic) == len(numeric)
    worst = 0.0
    for a, f in zip(analytic, numeric):
        denom = max(1.0, abs(a), abs(f))
        worst = max(worst, abs(a - f) / denom)
    assert worst < tol, f"gradient mismatch: relative error {worst:.3e} >= {tol}"


def gauss_kl_quadrature(mu_p, sig_p, mu_q, sig_q, span: float = 12.0, steps: int = 200001) -> float:
    """KL(p || q) by trapezoidal integration of p log(p/q) on a fine grid."""
    lo = mu_p - span * sig_p
    hi = mu_p + span * sig_p
    dx = (hi - lo) / (steps - 1)

    def logpdf(x, mu, sig):
        z = (x - mu) / sig
        return -0.5 * z * z - math.log(sig) - 0.5 * math.log(2.0 * math.pi)

    total = 0.0
    for i in range(steps):
        x = lo + i * dx
        lp = logpdf(x, mu_p, sig_p)
        val = math.exp(lp) * (lp - logpdf(x, mu_q, sig_q))
        w = 0.5 if i in (0, steps - 1) else 1.0
        total += w * val
    return total * dx


def spearman(xs, ys) -> float:
    """Spearman rank correlation with average ranks for ties."""

    def ranks(v):
        order = sorted(range(len(v)), key=lambda i: v[i])
        r = [0.0] * len(v)
        i = 0
        while i < len(order):
            j = i
            while j + 1 < len(order) and v[order[j + 1]] == v[order[i]]:
                j += 1
            avg = (i + j) / 2.0 + 1.0
            for k in range(i, j + 1):
                r[order[k]] = avg
            i = j + 1
        return r

    rx, ry = ranks(list(xs)), ranks(list(ys))
    n = len(rx)
    mx = sum(rx) / n
    my = sum(ry) / n
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
    return num / den if den > 0 else 0.0


def discounted_return(rewards, gamma: float) -> float:
    total = 0.0
    for t, r in enumerate(rewards):
        total += (gamma ** t) * r
    return total
