"""Post-task continual-learning machinery: advantage-ranked coreset
storage and the synaptic-importance path integral."""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass, field

from .backend import K
from .errors import ConfigError
from .rng import RngKey, fold_in, randints
from .tensor import Tensor, new_buf


@dataclass
class CoresetEntry:
    obs: tuple[float, ...]
    action: tuple[float, ...]
    advantage: float
    task_id: str


@dataclass
class Coreset:
    capacity_per_task: int = 256
    entries: list[CoresetEntry] = field(default_factory=list)

    def task_ids(self) -> list[str]:
        return sorted({e.task_id for e in self.entries})

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class SiAccumulator:
    """Running per-parameter path integral plus the snapshots it needs."""

    omega: Tensor
    theta_prev: Tensor
    task_start_theta: Tensor


@dataclass
class SiRegularizer:
    omega_cap: Tensor
    theta_star: Tensor


def si_fresh(theta_flat: Tensor) -> SiAccumulator:
    """Accumulator reset for a task boundary."""
    return SiAccumulator(Tensor((theta_flat.size,)), theta_flat.copy(), theta_flat.copy())


def si_accumulate(acc: SiAccumulator, grads: Tensor, theta_new: Tensor) -> SiAccumulator:
    """omega += (-grads) * (theta_new - theta_prev); advance theta_prev."""
    n = acc.omega.size
    if grads.size != n or theta_new.size != n:
        raise ConfigError(
            f"si_accumulate layout mismatch: omega {n}, grads {grads.size}, "
            f"theta {theta_new.size}")
    delta = new_buf(n)
    K.ew_sub(theta_new.data, acc.theta_prev.data, delta, n)
    contrib = new_buf(n)
    K.ew_mul(grads.data, delta, contrib, n)
    omega = new_buf(n)
    K.axpb(contrib, -1.0, 0.0, omega, n)
    K.acc_add(omega, acc.omega.data, n)
    return SiAccumulator(Tensor((n,), omega), theta_new.copy(), acc.task_start_theta)


def compute_si(acc: SiAccumulator, theta_end: Tensor, xi: float) -> SiRegularizer:
    """Omega = max(0, omega) / ((theta_end - task_start)^2 + xi)."""
    if xi <= 0:
        raise ConfigError(f"xi must be > 0, got {xi}")
    n = acc.omega.size
    if theta_end.size != n:
        raise ConfigError("compute_si: theta_end layout mismatch")
    disp = new_buf(n)
    K.ew_sub(theta_end.data, acc.task_start_theta.data, disp, n)
    denom = new_buf(n)
    K.ew_mul(disp, disp, denom, n)
    K.axpb(denom, 1.0, xi, denom, n)
    clipped = new_buf(n)
    K.clip_const(acc.omega.data, 0.0, math.inf, clipped, n)
    omega_cap = new_buf(n)
    K.ew_div(clipped, denom, omega_cap, n)
    return SiRegularizer(Tensor((n,), omega_cap), theta_end.copy())


def update_coreset(coreset: Coreset, rollouts, task_id: str) -> Coreset:
    """Replace the task's entries with its top positive-advantage
    transitions from the given rollout batches (ties keep earlier ones)."""
    if not rollouts:
        raise ConfigError("update_coreset needs at least one rollout batch")
    candidates: list[tuple[float, int, CoresetEntry]] = []
    order = 0
    for rb in rollouts:
        obs_flat = rb.obs_flat()
        act_flat = rb.actions_flat()
        adv = rb.advantages.data
        for i in range(rb.n_transitions):
            a = adv[i]
            if a > 0.0:
                entry = CoresetEntry(
                    tuple(obs_flat.row(i)), tuple(act_flat.row(i)), a, task_id)
                candidates.append((-a, order, entry))
            order += 1
    candidates.sort(key=lambda c: (c[0], c[1]))
    kept = [c[2] for c in candidates[: coreset.capacity_per_task]]
    others = [e for e in coreset.entries if e.task_id != task_id]
    return Coreset(coreset.capacity_per_task, others + kept)


def sample_coreset(coreset: Coreset | None, key: RngKey, batch: int) -> list[CoresetEntry]:
    """Uniform with replacement, stratified equally across stored tasks."""
    if coreset is None or not coreset.entries or batch <= 0:
        return []
    by_task: dict[str, list[CoresetEntry]] = {}
    for e in coreset.entries:
        by_task.setdefault(e.task_id, []).append(e)
    tasks = sorted(by_task)
    base = batch // len(tasks)
    rem = batch % len(tasks)
    out: list[CoresetEntry] = []
    for ti, tid in enumerate(tasks):
        want = base + (1 if ti < rem else 0)
        if want == 0:
            continue
        pool = by_task[tid]
        for idx in randints(fold_in(key, ti), want, len(pool)):
            out.append(pool[idx])
    return out
