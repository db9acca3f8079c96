"""Gaussian actor-critic with the clipped PPO surrogate and the unified
three-term objective (PPO + replay + synaptic-importance penalty)."""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass, field
from typing import Sequence

from .autodiff import Tape, Var, value_and_grad_flat
from .backend import K
from .errors import ConfigError, NumericalError
from .nets import MlpParams, init_mlp, mlp_forward, mlp_from_flat, mlp_segment_vars
from .optim import AdamState, adam_step
from .rng import RngKey, fold_in, normals, permutation, rng_split
from .tensor import Tensor, new_buf
from .tasks import ACT_DIM, OBS_DIM

LOG_2PI = math.log(2.0 * math.pi)
INIT_LOG_STD = math.log(0.5)


@dataclass
class PolicyParams:
    actor: MlpParams
    log_std: Tensor
    critic: MlpParams

    @property
    def n_params(self) -> int:
        return self.actor.n_params + self.log_std.size + self.critic.n_params

    def flatten(self) -> Tensor:
        buf = array("d", self.actor.flatten().data)
        buf.extend(self.log_std.data)
        buf.extend(self.critic.flatten().data)
        return Tensor((len(buf),), buf)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.actor.copy(), self.log_std.copy(), self.critic.copy())


def policy_from_flat(template: PolicyParams, flat: Tensor) -> PolicyParams:
    a_n = template.actor.n_params
    actor = mlp_from_flat(template.actor, flat, 0)
    log_std = Tensor(template.log_std.shape, flat.data[a_n : a_n + template.log_std.size])
    critic = mlp_from_flat(template.critic, flat, a_n + template.log_std.size)
    return PolicyParams(actor, log_std, critic)


def init_policy(key: RngKey, hidden: Sequence[int] = (32, 32)) -> PolicyParams:
    ka, kc = rng_split(key)
    actor = init_mlp(ka, [OBS_DIM, *hidden, ACT_DIM])
    critic = init_mlp(kc, [OBS_DIM, *hidden, 1])
    log_std = Tensor((ACT_DIM,), array("d", [INIT_LOG_STD] * ACT_DIM))
    return PolicyParams(actor, log_std, critic)


@dataclass
class PpoHyper:
    clip_eps: float = 0.2
    gae_lambda: float = 0.95
    gamma: float = 0.99
    epochs: int = 4
    minibatches: int = 4
    value_coef: float = 0.5
    entropy_coef: float = 0.03
    lambda1: float = 0.5
    lambda2: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ConfigError(f"clip_eps must be in (0,1), got {self.clip_eps}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError(f"gae_lambda must be in [0,1], got {self.gae_lambda}")


@dataclass
class RolloutBatch:
    """Aligned [n_envs, horizon] arrays plus per-episode anchors."""

    n_envs: int
    horizon: int
    obs: Tensor  # [n_envs, horizon, OBS_DIM]
    actions: Tensor  # [n_envs, horizon, ACT_DIM]
    log_probs: Tensor  # [n_envs, horizon]
    shaped_rewards: Tensor  # [n_envs, horizon]
    values: Tensor  # [n_envs, horizon]
    dones: Tensor  # [n_envs, horizon]
    successes: Tensor  # [n_envs, horizon] sticky flags as 0/1
    advantages: Tensor | None = None
    returns: Tensor | None = None
    obs_seqs: list = field(default_factory=list)  # per-env obs tuples, length horizon+1

    @property
    def n_transitions(self) -> int:
        return self.n_envs * self.horizon

    def obs_flat(self) -> Tensor:
        return self.obs.reshape((self.n_transitions, OBS_DIM))

    def actions_flat(self) -> Tensor:
        return self.actions.reshape((self.n_transitions, ACT_DIM))


# -- acting ------------------------------------------------------------------------

def act(theta: PolicyParams, obs: Tensor, key: RngKey) -> tuple[Tensor, Tensor]:
    """Sample actions and their log-densities for a [batch, OBS_DIM] input.

    The sample is unclamped; environments clamp internally. The density is
    of the unclamped sample.
    """
    n = obs.shape[0]
    mu = mlp_forward(theta.actor, obs)
    eps = normals(key, n * ACT_DIM)
    sigma = new_buf(ACT_DIM)
    K.exp_fwd(theta.log_std.data, sigma, ACT_DIM)
    scaled = new_buf(n * ACT_DIM)
    K.colwise_mul(eps.data, sigma, scaled, n, ACT_DIM)
    actions = new_buf(n * ACT_DIM)
    K.ew_add(mu.data, scaled, actions, n * ACT_DIM)
    acts = Tensor((n, ACT_DIM), actions)
    return acts, log_prob(theta, obs, acts, mu=mu)


def mean_action(theta: PolicyParams, obs: Tensor) -> Tensor:
    return mlp_forward(theta.actor, obs)


def log_prob(theta: PolicyParams, obs: Tensor, actions: Tensor,
             mu: Tensor | None = None) -> Tensor:
    """Diagonal-Gaussian log-density of actions under the policy."""
    n = obs.shape[0]
    if mu is None:
        mu = mlp_forward(theta.actor, obs)
    sigma = new_buf(ACT_DIM)
    K.exp_fwd(theta.log_std.data, sigma, ACT_DIM)
    diff = new_buf(n * ACT_DIM)
    K.ew_sub(actions.data, mu.data, diff, n * ACT_DIM)
    z = new_buf(n * ACT_DIM)
    K.colwise_div(diff, sigma, z, n, ACT_DIM)
    zsq = new_buf(n * ACT_DIM)
    K.ew_mul(z, z, zsq, n * ACT_DIM)
    rows = new_buf(n)
    K.row_sum(zsq, rows, n, ACT_DIM)
    const = -K.sum_all(theta.log_std.data, ACT_DIM) - 0.5 * ACT_DIM * LOG_2PI
    out = new_buf(n)
    K.axpb(rows, -0.5, const, out, n)
    return Tensor((n,), out)


# -- advantages ----------------------------------------------------------------------

def gae(rewards: Tensor, values: Tensor, dones: Tensor, bootstrap_value: Tensor,
        gamma: float, lam: float) -> tuple[Tensor, Tensor]:
    """GAE(lambda) over [n_envs, horizon] arrays with episode masking."""
    n_envs, horizon = rewards.shape
    adv = Tensor((n_envs, horizon))
    ret = Tensor((n_envs, horizon))
    r, v, d = rewards.data, values.data, dones.data
    for e in range(n_envs):
        base = e * horizon
        lastgae = 0.0
        nextvalue = bootstrap_value.data[e]
        for t in range(horizon - 1, -1, -1):
            i = base + t
            nonterminal = 1.0 - d[i]
            delta = r[i] + gamma * nextvalue * nonterminal - v[i]
            lastgae = delta + gamma * lam * nonterminal * lastgae
            adv.data[i] = lastgae
            ret.data[i] = lastgae + v[i]
            nextvalue = v[i]
    return adv, ret


def normalize_advantages(adv: Tensor) -> Tensor:
    n = adv.size
    mean = K.sum_all(adv.data, n) / n
    centered = new_buf(n)
    K.axpb(adv.data, 1.0, -mean, centered, n)
    sq = new_buf(n)
    K.ew_mul(centered, centered, sq, n)
    std = math.sqrt(K.sum_all(sq, n) / n + 1e-8)
    out = new_buf(n)
    K.axpb(centered, 1.0 / std, 0.0, out, n)
    return Tensor(adv.shape, out)


# -- losses -----------------------------------------------------------------------------

def _policy_segments(tape: Tape, flat_var: Var, template: PolicyParams):
    actor_vars, pos = mlp_segment_vars(tape, flat_var, template.actor, 0)
    log_std_var = tape.segment(flat_var, pos, template.log_std.shape)
    pos += template.log_std.size
    critic_vars, _ = mlp_segment_vars(tape, flat_var, template.critic, pos)
    return actor_vars, log_std_var, critic_vars


def _log_prob_t(tape: Tape, actor_vars, log_std_var, obs_c: Var, act_c: Var) -> Var:
    from .nets import mlp_apply

    n = obs_c.t.shape[0]
    mu = mlp_apply(tape, actor_vars, obs_c)
    sigma = tape.exp(log_std_var)
    z = tape.colwise_div(tape.sub(act_c, mu), sigma)
    rows = tape.row_sum(tape.square(z))
    half = tape.axpb(rows, -0.5, -0.5 * ACT_DIM * LOG_2PI)
    sum_ls = tape.axpb(tape.sum(log_std_var), -1.0, 0.0)
    return tape.vs_add(half, sum_ls)


def ppo_loss_t(tape: Tape, actor_vars, log_std_var, critic_vars, mb: dict,
               hyper: PpoHyper) -> Var:
    """Clipped surrogate + value loss - entropy bonus, as one scalar Var."""
    from .nets import mlp_apply

    obs_c = tape.const(mb["obs"])
    act_c = tape.const(mb["actions"])
    adv = mb["advantages"]
    logp_new = _log_prob_t(tape, actor_vars, log_std_var, obs_c, act_c)
    ratio = tape.exp(tape.sub(logp_new, tape.const(mb["log_probs"])))
    adv_c = tape.const(adv)
    surr1 = tape.mul(ratio, adv_c)
    surr2 = tape.mul(tape.clip(ratio, 1.0 - hyper.clip_eps, 1.0 + hyper.clip_eps), adv_c)
    policy_term = tape.axpb(tape.mean(tape.minimum(surr1, surr2)), -1.0, 0.0)

    v = tape.column(mlp_apply(tape, critic_vars, obs_c), 0)
    verr = tape.sub(v, tape.const(mb["returns"]))
    value_term = tape.axpb(tape.mean(tape.square(verr)), hyper.value_coef, 0.0)

    # diagonal-Gaussian entropy = sum(log_std) + ACT_DIM/2 * log(2*pi*e)
    ent = tape.axpb(tape.sum(log_std_var), 1.0, 0.5 * ACT_DIM * (LOG_2PI + 1.0))
    entropy_term = tape.axpb(ent, -hyper.entropy_coef, 0.0)

    return tape.add(tape.add(policy_term, value_term), entropy_term)


def replay_loss_t(tape: Tape, actor_vars, log_std_var, batch) -> Var | None:
    """Advantage-weighted negative log-likelihood on coreset entries."""
    if not batch:
        return None
    n = len(batch)
    obs = Tensor((n, OBS_DIM), array("d", (v for e in batch for v in e.obs)))
    acts = Tensor((n, ACT_DIM), array("d", (v for e in batch for v in e.action)))
    advs = Tensor((n,), array("d", (e.advantage for e in batch)))
    logp = _log_prob_t(tape, actor_vars, log_std_var, tape.const(obs), tape.const(acts))
    weighted = tape.mul(tape.axpb(logp, -1.0, 0.0), tape.const(advs))
    return tape.mean(weighted)


def si_loss_t(tape: Tape, flat_var: Var, regularizers) -> Var | None:
    """Sum over tasks of omega-weighted squared distance to the snapshot."""
    total = None
    for reg in regularizers:
        if reg.omega_cap.size != flat_var.t.size or reg.theta_star.size != flat_var.t.size:
            raise ConfigError("SI regularizer layout does not match the parameter vector")
        diff = tape.sub(flat_var, tape.const(reg.theta_star))
        term = tape.sum(tape.mul(tape.const(reg.omega_cap), tape.square(diff)))
        total = term if total is None else tape.add(total, term)
    return total


def total_policy_loss_t(tape: Tape, flat_var: Var, template: PolicyParams,
                        mb: dict, coreset_batch, regularizers,
                        hyper: PpoHyper) -> tuple[Var, dict]:
    """Unified objective; replay/SI terms are skipped entirely at weight 0,
    which makes the lambda1=lambda2=0 path bit-identical to plain PPO."""
    actor_vars, log_std_var, critic_vars = _policy_segments(tape, flat_var, template)
    ppo = ppo_loss_t(tape, actor_vars, log_std_var, critic_vars, mb, hyper)
    total = ppo
    parts = {"ppo_loss": ppo.t.item(), "replay_loss": 0.0, "si_loss": 0.0}
    if hyper.lambda1 != 0.0:
        rep = replay_loss_t(tape, actor_vars, log_std_var, coreset_batch)
        if rep is not None:
            parts["replay_loss"] = rep.t.item()
            total = tape.add(total, tape.axpb(rep, hyper.lambda1, 0.0))
    if hyper.lambda2 != 0.0:
        si = si_loss_t(tape, flat_var, regularizers)
        if si is not None:
            parts["si_loss"] = si.t.item()
            total = tape.add(total, tape.axpb(si, hyper.lambda2, 0.0))
    return total, parts


# -- float-value wrappers (shared tape builders underneath) ---------------------------

def _mb_from_rollout(rollout: RolloutBatch) -> dict:
    return {
        "obs": rollout.obs_flat(),
        "actions": rollout.actions_flat(),
        "log_probs": rollout.log_probs.reshape((rollout.n_transitions,)),
        "advantages": rollout.advantages.reshape((rollout.n_transitions,)),
        "returns": rollout.returns.reshape((rollout.n_transitions,)),
    }


def ppo_loss(theta: PolicyParams, rollout: RolloutBatch, hyper: PpoHyper) -> float:
    tape = Tape()
    fv = tape.const(theta.flatten())
    a, ls, c = _policy_segments(tape, fv, theta)
    return ppo_loss_t(tape, a, ls, c, _mb_from_rollout(rollout), hyper).t.item()


def replay_loss(theta: PolicyParams, coreset_batch) -> float:
    if not coreset_batch:
        return 0.0
    tape = Tape()
    fv = tape.const(theta.flatten())
    a, ls, _ = _policy_segments(tape, fv, theta)
    return replay_loss_t(tape, a, ls, coreset_batch).t.item()


def si_loss(theta: PolicyParams, regularizers) -> float:
    if not regularizers:
        return 0.0
    tape = Tape()
    fv = tape.const(theta.flatten())
    term = si_loss_t(tape, fv, regularizers)
    return term.t.item()


def total_policy_loss(theta: PolicyParams, rollout: RolloutBatch, coreset_batch,
                      regularizers, hyper: PpoHyper) -> float:
    tape = Tape()
    fv = tape.const(theta.flatten())
    total, _ = total_policy_loss_t(tape, fv, theta, _mb_from_rollout(rollout),
                                   coreset_batch, regularizers, hyper)
    return total.t.item()


# -- update --------------------------------------------------------------------------

@dataclass
class PolicyUpdateResult:
    theta: PolicyParams
    adam_state: AdamState
    metrics: dict
    last_grad: Tensor


def policy_update(theta: PolicyParams, adam_state: AdamState, rollout: RolloutBatch,
                  coreset, regularizers, hyper: PpoHyper, lr: float, key: RngKey,
                  replay_batch: int = 256) -> PolicyUpdateResult:
    """Epochs x minibatches of Adam on the unified objective.

    Minibatch shuffling and per-minibatch coreset sampling are driven by
    the key; equal inputs give bit-identical outputs.
    """
    from .continual import sample_coreset

    if lr < 0:
        raise ConfigError(f"lr must be >= 0, got {lr}")
    n = rollout.n_transitions
    if rollout.advantages is None or rollout.returns is None:
        raise ConfigError("rollout lacks advantages/returns; run gae first")
    mb_count = max(1, min(hyper.minibatches, n))
    mb_size = n // mb_count
    full = _mb_from_rollout(rollout)
    flat = theta.flatten()
    n_flat = flat.size
    sums: dict[str, float] = {"ppo_loss": 0.0, "replay_loss": 0.0, "si_loss": 0.0,
                              "total_loss": 0.0}
    steps = 0
    last_grad = Tensor((n_flat,))
    for epoch in range(hyper.epochs):
        ekey = fold_in(key, epoch)
        perm = permutation(fold_in(ekey, 0), n)
        for m in range(mb_count):
            idx = perm[m * mb_size : (m + 1) * mb_size]
            mb = _take_mb(full, idx)
            mkey = fold_in(ekey, m + 1)
            cs_batch = sample_coreset(coreset, mkey, replay_batch) \
                if (hyper.lambda1 != 0.0 and coreset is not None) else []

            def build(tape, fv):
                return total_policy_loss_t(tape, fv, theta, mb, cs_batch,
                                           regularizers, hyper)

            value, grad_flat, parts = value_and_grad_flat(build, flat)
            if not math.isfinite(value):
                bad = [k for k, v in parts.items() if not math.isfinite(v)]
                raise NumericalError(
                    f"policy loss non-finite (offending terms: {bad or ['total']})")
            if lr > 0.0:
                flat, adam_state = adam_step(flat, grad_flat, adam_state, lr)
            last_grad = grad_flat
            for k, v in parts.items():
                sums[k] += v
            sums["total_loss"] += value
            steps += 1
    metrics = {k: v / steps for k, v in sums.items()}
    return PolicyUpdateResult(policy_from_flat(theta, flat), adam_state, metrics, last_grad)


def _take_mb(full: dict, idx) -> dict:
    m = len(idx)
    out = {}
    for name, width in (("obs", OBS_DIM), ("actions", ACT_DIM), ("log_probs", 1),
                        ("advantages", 1), ("returns", 1)):
        src = full[name]
        buf = new_buf(m * width)
        K.take_rows(src.data, idx, buf, m, width)
        shape = (m, width) if width > 1 else (m,)
        out[name] = Tensor(shape, buf)
    return out
