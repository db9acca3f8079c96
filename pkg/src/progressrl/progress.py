"""Gaussian progress model, its losses, and the induced shaped reward.

The model maps a concatenated observation triplet (anchor, current, goal)
to a Gaussian over the relative progress ratio. Expert triplets supervise
the prediction toward N(delta, sigma_target^2); agent triplets are pushed
toward a wide zero-mean prior, suppressing confident predictions off the
demonstration distribution. The prediction mean doubles as a state
potential whose discounted difference is the dense reward.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass
from typing import Sequence

from .autodiff import Tape, Var, value_and_grad_flat
from .backend import K
from .errors import ConfigError, NumericalError
from .nets import MlpParams, init_mlp, mlp_apply, mlp_forward, mlp_from_flat, mlp_segment_vars
from .optim import AdamState, adam_step
from .rng import RngKey, uniforms
from .tensor import Tensor, new_buf
from .tasks import OBS_DIM, Trajectory

SIGMA_FLOOR = 1e-4
TRIPLET_DIM = 3 * OBS_DIM


@dataclass
class RewardHyper:
    sigma_target: float = 0.2
    sigma_prior: float = 1.0
    beta: float = 0.5
    gamma: float = 0.99
    reverse_kl: bool = False

    def __post_init__(self):
        if self.sigma_target <= 0 or self.sigma_prior <= 0:
            raise ConfigError("sigma_target and sigma_prior must be > 0")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0,1], got {self.gamma}")


@dataclass
class ProgressModel:
    """MLP over triplets with a (mean, softplus std) head."""

    net: MlpParams

    def copy(self) -> "ProgressModel":
        return ProgressModel(self.net.copy())


@dataclass
class Triplet:
    o_i: tuple[float, ...]
    o_j: tuple[float, ...]
    o_g: tuple[float, ...]
    delta: float | None = None


def init_progress_model(key: RngKey,
                        hidden: Sequence[int] = (64, 64, 64, 64)) -> ProgressModel:
    return ProgressModel(init_mlp(key, [TRIPLET_DIM, *hidden, 2]))


# -- triplet sampling -----------------------------------------------------------

def _sample_indices(u0: float, u1: float, u2: float, length: int) -> tuple[int, int, int]:
    """(i, j, g) with i in [0, L-2], g in (i, L-1], j in [i, g]."""
    i = min(int(u0 * (length - 1)), length - 2)
    g = i + 1 + min(int(u1 * (length - 1 - i)), length - 2 - i)
    j = i + min(int(u2 * (g - i + 1)), g - i)
    return i, j, g


def sample_expert_triplets(demos: Sequence[Trajectory], key: RngKey,
                           batch: int) -> list[Triplet]:
    """Progress-labeled triplets; all indices from one trajectory each."""
    if not demos:
        raise ValueError("empty demo set")
    if any(len(d.observations) < 2 for d in demos):
        raise ValueError("every demo needs at least 2 observations")
    u = uniforms(key, 4 * batch).data
    out = []
    for b in range(batch):
        traj = demos[min(int(u[4 * b] * len(demos)), len(demos) - 1)]
        obs = traj.observations
        i, j, g = _sample_indices(u[4 * b + 1], u[4 * b + 2], u[4 * b + 3], len(obs))
        out.append(Triplet(obs[i], obs[j], obs[g], (j - i) / (g - i)))
    return out


def sample_agent_triplets(sequences: Sequence[Sequence[tuple[float, ...]]],
                          key: RngKey, batch: int,
                          goal_pool: Sequence[tuple[float, ...]] | None = None
                          ) -> list[Triplet]:
    """Same index scheme over policy rollouts; progress labels unused.

    With a goal_pool, the goal slot is drawn from it instead of the rollout
    itself, matching the triplet family the shaped reward actually queries
    online (agent anchor, agent state, demonstration goal).
    """
    if not sequences:
        raise ValueError("empty rollout set")
    u = uniforms(key, 4 * batch).data
    out = []
    for b in range(batch):
        obs = sequences[min(int(u[4 * b] * len(sequences)), len(sequences) - 1)]
        i, j, g = _sample_indices(u[4 * b + 1], u[4 * b + 2], u[4 * b + 3], len(obs))
        if goal_pool is not None:
            pick = min(int(u[4 * b + 3] * len(goal_pool)), len(goal_pool) - 1)
            out.append(Triplet(obs[i], obs[j], tuple(goal_pool[pick]), None))
        else:
            out.append(Triplet(obs[i], obs[j], obs[g], None))
    return out


def triplet_inputs(triplets: Sequence[Triplet]) -> Tensor:
    buf = new_buf(len(triplets) * TRIPLET_DIM)
    pos = 0
    for t in triplets:
        for part in (t.o_i, t.o_j, t.o_g):
            for v in part:
                buf[pos] = v
                pos += 1
    return Tensor((len(triplets), TRIPLET_DIM), buf)


# -- model evaluation -----------------------------------------------------------

def model_head(model: ProgressModel, inputs: Tensor) -> tuple[Tensor, Tensor]:
    """(mu, sigma) for a [batch, 3*OBS_DIM] input matrix."""
    raw = mlp_forward(model.net, inputs)
    n = raw.shape[0]
    mu = new_buf(n)
    K.col_get(raw.data, 0, mu, n, 2)
    sraw = new_buf(n)
    K.col_get(raw.data, 1, sraw, n, 2)
    sig = new_buf(n)
    K.softplus_fwd(sraw, sig, n)
    K.axpb(sig, 1.0, SIGMA_FLOOR, sig, n)
    return Tensor((n,), mu), Tensor((n,), sig)


def potential(model: ProgressModel, o_0, o_t, o_g) -> float:
    """Predicted-mean potential of the current observation."""
    mu, _ = model_head(model, triplet_inputs([Triplet(tuple(o_0), tuple(o_t), tuple(o_g))]))
    return mu.data[0]


def potential_batch(model: ProgressModel, anchors, currents, goals) -> Tensor:
    trips = [Triplet(tuple(a), tuple(c), tuple(g))
             for a, c, g in zip(anchors, currents, goals)]
    mu, _ = model_head(model, triplet_inputs(trips))
    return mu


def shaped_reward(model: ProgressModel, o_prev, o_curr, o_0, o_g,
                  hyper: RewardHyper) -> float:
    """gamma * potential(current) - potential(previous)."""
    return (hyper.gamma * potential(model, o_0, o_curr, o_g)
            - potential(model, o_0, o_prev, o_g))


# -- losses -----------------------------------------------------------------------

def _head_vars(tape: Tape, layer_vars, x_const: Var) -> tuple[Var, Var]:
    raw = mlp_apply(tape, layer_vars, x_const)
    mu = tape.column(raw, 0)
    sigma = tape.axpb(tape.softplus(tape.column(raw, 1)), 1.0, SIGMA_FLOOR)
    return mu, sigma


def expert_loss_t(tape: Tape, layer_vars, triplets: Sequence[Triplet],
                  hyper: RewardHyper) -> Var:
    """Mean KL between the progress target and the model prediction."""
    if not triplets:
        raise ValueError("expert triplet batch is empty")
    if any(t.delta is None for t in triplets):
        raise ValueError("expert triplets must carry progress labels")
    x = tape.const(triplet_inputs(triplets))
    deltas = tape.const(Tensor((len(triplets),), array("d", (t.delta for t in triplets))))
    mu, sigma = _head_vars(tape, layer_vars, x)
    st = hyper.sigma_target
    diff_sq = tape.square(tape.sub(deltas, mu))
    if not hyper.reverse_kl:
        # KL(N(delta, st) || N(mu, sigma))
        num = tape.axpb(diff_sq, 1.0, st * st)
        den = tape.axpb(tape.square(sigma), 2.0, 0.0)
        row = tape.add(tape.log(sigma), tape.div(num, den))
        return tape.axpb(tape.mean(row), 1.0, -math.log(st) - 0.5)
    # KL(N(mu, sigma) || N(delta, st))
    num = tape.add(tape.square(sigma), diff_sq)
    row = tape.sub(tape.axpb(num, 1.0 / (2.0 * st * st), 0.0), tape.log(sigma))
    return tape.axpb(tape.mean(row), 1.0, math.log(st) - 0.5)


def push_loss_t(tape: Tape, layer_vars, triplets: Sequence[Triplet],
                hyper: RewardHyper) -> Var:
    """Mean KL between the model prediction and the wide zero-mean prior."""
    if not triplets:
        raise ValueError("agent triplet batch is empty")
    x = tape.const(triplet_inputs(triplets))
    mu, sigma = _head_vars(tape, layer_vars, x)
    sp = hyper.sigma_prior
    if not hyper.reverse_kl:
        # KL(N(mu, sigma) || N(0, sp))
        num = tape.add(tape.square(sigma), tape.square(mu))
        row = tape.sub(tape.axpb(num, 1.0 / (2.0 * sp * sp), 0.0), tape.log(sigma))
        return tape.axpb(tape.mean(row), 1.0, math.log(sp) - 0.5)
    # KL(N(0, sp) || N(mu, sigma))
    num = tape.axpb(tape.square(mu), 1.0, sp * sp)
    den = tape.axpb(tape.square(sigma), 2.0, 0.0)
    row = tape.add(tape.log(sigma), tape.div(num, den))
    return tape.axpb(tape.mean(row), 1.0, -math.log(sp) - 0.5)


def reward_loss_t(tape: Tape, layer_vars, expert_triplets, agent_triplets,
                  hyper: RewardHyper) -> tuple[Var, Var, Var | None]:
    """(total, expert term, push term); the push term is omitted entirely
    when beta is zero or no agent triplets exist, so the total is then
    bit-identical to the expert term."""
    e = expert_loss_t(tape, layer_vars, expert_triplets, hyper)
    if hyper.beta == 0.0 or not agent_triplets:
        return e, e, None
    p = push_loss_t(tape, layer_vars, agent_triplets, hyper)
    return tape.add(e, tape.axpb(p, hyper.beta, 0.0)), e, p


def _loss_value(builder) -> float:
    tape = Tape()
    return builder(tape).t.item()


def expert_loss(model: ProgressModel, triplets, hyper: RewardHyper) -> float:
    def build(tape):
        lv = [(tape.const(w), tape.const(b)) for w, b in model.net.layers]
        return expert_loss_t(tape, lv, triplets, hyper)

    return _loss_value(build)


def push_loss(model: ProgressModel, triplets, hyper: RewardHyper) -> float:
    def build(tape):
        lv = [(tape.const(w), tape.const(b)) for w, b in model.net.layers]
        return push_loss_t(tape, lv, triplets, hyper)

    return _loss_value(build)


def reward_loss(model: ProgressModel, expert_triplets, agent_triplets,
                hyper: RewardHyper) -> float:
    def build(tape):
        lv = [(tape.const(w), tape.const(b)) for w, b in model.net.layers]
        total, _, _ = reward_loss_t(tape, lv, expert_triplets, agent_triplets, hyper)
        return total

    return _loss_value(build)


# -- update ------------------------------------------------------------------------

def update_reward_model(model: ProgressModel, adam_state: AdamState,
                        expert_triplets, agent_triplets, hyper: RewardHyper,
                        lr: float) -> tuple[ProgressModel, AdamState, dict]:
    """One Adam step on the joint reward loss.

    Returns (model', adam', metrics) with metrics carrying the total,
    expert, and push loss values. lr == 0 evaluates without updating.
    """
    if lr < 0:
        raise ConfigError(f"lr must be >= 0, got {lr}")
    flat = model.net.flatten()

    def build(tape, fv):
        lv, _ = mlp_segment_vars(tape, fv, model.net)
        total, e, p = reward_loss_t(tape, lv, expert_triplets, agent_triplets, hyper)
        return total, (e.t.item(), p.t.item() if p is not None else 0.0)

    value, grad_flat, (e_val, p_val) = value_and_grad_flat(build, flat)
    if not math.isfinite(value):
        raise NumericalError(f"reward loss is non-finite: {value}")
    metrics = {"reward_loss": value, "expert_loss": e_val, "push_loss": p_val}
    if lr == 0.0:
        return model, adam_state, metrics
    if not grad_flat.all_finite():
        raise NumericalError("reward-model gradient is non-finite")
    new_flat, new_state = adam_step(flat, grad_flat, adam_state, lr)
    return ProgressModel(mlp_from_flat(model.net, new_flat)), new_state, metrics
