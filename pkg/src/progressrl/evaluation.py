"""Deterministic policy evaluation, retention/efficiency metrics, and
potential-trace export."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import ConfigError
from .policy import PolicyParams, mean_action
from .progress import ProgressModel, RewardHyper, Triplet, model_head, triplet_inputs
from .rng import RngKey, fold_in, rng_split
from .tasks import OBS_DIM, TaskSpec, Trajectory, env_reset, env_step, observe, scripted_expert
from .tensor import Tensor, new_buf


@dataclass
class EvalReport:
    per_task_success: dict[str, float]
    eval_reward: float
    ap: float
    regret: float
    checkpoint_step: int


@dataclass
class PotentialTrace:
    trajectory_kind: str  # expert | agent_success | agent_failure
    values: list[tuple[int, float]]


def _obs_matrix(obs_rows: Sequence[tuple[float, ...]]) -> Tensor:
    buf = new_buf(len(obs_rows) * OBS_DIM)
    pos = 0
    for row in obs_rows:
        for v in row:
            buf[pos] = v
            pos += 1
    return Tensor((len(obs_rows), OBS_DIM), buf)


def rollout_mean_actions(theta: PolicyParams, task: TaskSpec, n_episodes: int,
                         key: RngKey) -> list[list[tuple[float, ...]]]:
    """Deterministic rollouts (mean actions); returns per-episode obs lists."""
    states = env_reset(task, key, n_episodes)
    seqs = [[observe(task, s)] for s in states]
    for _ in range(task.horizon):
        obs_m = _obs_matrix([seq[-1] for seq in seqs])
        mu = mean_action(theta, obs_m)
        actions = [(mu.data[2 * i], mu.data[2 * i + 1]) for i in range(n_episodes)]
        states, obs, _ = env_step(task, states, actions)
        for i in range(n_episodes):
            seqs[i].append(obs[i])
    return seqs


def _sticky_success_steps(task: TaskSpec, seq: Sequence[tuple[float, ...]]) -> int:
    """Number of steps spent in the (sticky) success state."""
    count = 0
    stuck = False
    for obs in seq[1:]:
        if not stuck and abs(obs[4] - task.object_target) < task.success_tol:
            stuck = True
        if stuck:
            count += 1
    return count


def eval_policy(theta: PolicyParams, task: TaskSpec, n_episodes: int,
                key: RngKey) -> tuple[float, float]:
    """(success rate, mean ground-truth return) over mean-action rollouts.

    The ground-truth return of an episode is its count of steps spent in
    the sticky success state, so earlier completion scores higher.
    """
    if n_episodes < 1:
        raise ConfigError(f"n_episodes must be >= 1, got {n_episodes}")
    seqs = rollout_mean_actions(theta, task, n_episodes, key)
    succ = 0
    reward = 0.0
    for seq in seqs:
        steps = _sticky_success_steps(task, seq)
        succ += 1 if steps > 0 else 0
        reward += float(steps)
    return succ / n_episodes, reward / n_episodes


def expert_success_rate(task: TaskSpec, n_episodes: int, key: RngKey,
                        noise: float = 0.0) -> float:
    """Measured success of the scripted controller; the regret oracle."""
    states = env_reset(task, key, n_episodes)
    stuck = [False] * n_episodes
    for t in range(task.horizon):
        actions = [scripted_expert(task, s, fold_in(key, t * n_episodes + i), noise)
                   for i, s in enumerate(states)]
        states, _, flags = env_step(task, states, actions)
        for i, f in enumerate(flags):
            stuck[i] = stuck[i] or f
    return sum(stuck) / n_episodes


def eval_shaped_return(theta: PolicyParams, phi: ProgressModel, task: TaskSpec,
                       demos: Sequence[Trajectory], n_episodes: int, key: RngKey,
                       hyper: RewardHyper) -> float:
    """Mean cumulative shaped reward over mean-action eval episodes."""
    goals = [d.observations[-1] for d in demos if d.success]
    if not goals:
        raise ConfigError("no successful demo to anchor the goal observation")
    gkey, rkey = rng_split(key)
    seqs = rollout_mean_actions(theta, task, n_episodes, rkey)
    from .rng import randints

    picks = randints(gkey, n_episodes, len(goals))
    total = 0.0
    for i, seq in enumerate(seqs):
        goal = goals[picks[i]]
        trips = [Triplet(seq[0], o, goal) for o in seq]
        mu, _ = model_head(phi, triplet_inputs(trips))
        for t in range(1, len(seq)):
            total += hyper.gamma * mu.data[t] - mu.data[t - 1]
    return total / n_episodes


# -- retention / efficiency metrics ------------------------------------------------

def compute_ap(per_task_success: dict[str, float]) -> float:
    """Mean success over all tasks seen so far."""
    if not per_task_success:
        raise ValueError("compute_ap: empty success map")
    return sum(per_task_success.values()) / len(per_task_success)


def compute_regret(oracle_success: float, success_checkpoints: Sequence[float]) -> float:
    """Mean clamped shortfall to the oracle across evaluation checkpoints."""
    if not success_checkpoints:
        raise ValueError("compute_regret: empty checkpoint list")
    if not 0.0 <= oracle_success <= 1.0:
        raise ValueError(f"oracle_success must be in [0,1], got {oracle_success}")
    return sum(max(0.0, oracle_success - c) for c in success_checkpoints) / len(success_checkpoints)


# -- potential traces ---------------------------------------------------------------

def export_potential_trace(phi: ProgressModel, trajectory: Trajectory,
                           goal_anchor: tuple[float, ...], kind: str) -> PotentialTrace:
    if len(trajectory.observations) < 2:
        raise ValueError("trajectory must have at least 2 observations")
    obs = trajectory.observations
    trips = [Triplet(obs[0], o, tuple(goal_anchor)) for o in obs]
    mu, _ = model_head(phi, triplet_inputs(trips))
    return PotentialTrace(kind, [(t, mu.data[t]) for t in range(len(obs))])


def write_trace_csv(traces: Sequence[PotentialTrace], path: str) -> None:
    lines = ["kind,t,phi"]
    for tr in traces:
        for t, v in tr.values:
            lines.append(f"{tr.trajectory_kind},{t},{v!r}")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    import os

    os.replace(tmp, path)


def parse_trace_csv(path: str) -> list[PotentialTrace]:
    traces: dict[str, PotentialTrace] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "kind,t,phi":
            raise ConfigError(f"unexpected trace header: {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            kind, t, v = line.split(",")
            if kind not in traces:
                traces[kind] = PotentialTrace(kind, [])
                order.append(kind)
            traces[kind].values.append((int(t), float(v)))
    return [traces[k] for k in order]
