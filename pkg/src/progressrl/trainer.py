"""End-to-end training: per-step rollout/reward/policy updates, the
per-task inner loop, and the task-sequence outer loop with coreset and
synaptic-importance bookkeeping."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from .continual import (
    Coreset,
    SiAccumulator,
    SiRegularizer,
    compute_si,
    si_accumulate,
    si_fresh,
    update_coreset,
)
from .errors import ConfigError, NumericalError
from .evaluation import (
    EvalReport,
    compute_ap,
    compute_regret,
    eval_policy,
    eval_shaped_return,
    expert_success_rate,
)
from .nets import mlp_forward
from .optim import AdamState, adam_init
from .policy import (
    PolicyParams,
    PpoHyper,
    RolloutBatch,
    act,
    gae,
    init_policy,
    normalize_advantages,
    policy_update,
)
from .progress import (
    ProgressModel,
    RewardHyper,
    init_progress_model,
    potential_batch,
    sample_agent_triplets,
    sample_expert_triplets,
    update_reward_model,
)
from .rng import RngKey, fold_in, randints, rng_split, seed_key
from .tasks import (
    ACT_DIM,
    OBS_DIM,
    TaskSpec,
    Trajectory,
    env_reset,
    env_step,
    generate_demos,
    observe,
)
from .tensor import Tensor, new_buf


@dataclass
class TrainConfig:
    tasks: list[TaskSpec]
    n_envs: int = 64
    steps_per_task: int = 300
    rollout_horizon: int = 100
    lr_policy: float = 3e-4
    lr_reward: float = 3e-3
    reward_hyper: RewardHyper = field(default_factory=RewardHyper)
    ppo_hyper: PpoHyper = field(default_factory=PpoHyper)
    demos_per_task: int = 50
    demo_noise: float = 0.1
    demo_keep_failures: float = 0.0
    seed: int = 0
    push_back_enabled: bool = True
    cl_regs_enabled: bool = True
    triplet_batch: int = 256
    reward_updates_per_step: int = 1
    replay_batch: int = 256
    capacity_per_task: int = 256
    n_keep: int = 10
    si_xi: float = 0.1
    eval_every: int = 50
    eval_episodes: int = 30
    policy_hidden: tuple[int, ...] = (32, 32)
    reward_hidden: tuple[int, ...] = (64, 64, 64, 64)

    def __post_init__(self):
        if not self.tasks:
            raise ConfigError("at least one task is required")
        for name in ("n_envs", "steps_per_task", "rollout_horizon", "demos_per_task",
                     "triplet_batch", "reward_updates_per_step", "replay_batch",
                     "capacity_per_task", "n_keep", "eval_every", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr_policy <= 0 or self.lr_reward <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.si_xi <= 0:
            raise ConfigError(f"si_xi must be > 0, got {self.si_xi}")


@dataclass
class AgentState:
    theta: PolicyParams
    phi: ProgressModel
    adam_theta: AdamState
    adam_phi: AdamState
    si_acc: SiAccumulator
    step: int
    key: RngKey


@dataclass
class StepMetrics:
    step: int
    task_id: str
    reward_loss: float
    expert_loss: float
    push_loss: float
    ppo_loss: float
    replay_loss: float
    si_loss: float
    mean_shaped_reward: float
    rollout_success_rate: float

    FIELDS = ("reward_loss", "expert_loss", "push_loss", "ppo_loss", "replay_loss",
              "si_loss", "mean_shaped_reward", "rollout_success_rate")

    def values(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in self.FIELDS}


def init_agent(config: TrainConfig) -> AgentState:
    master = seed_key(config.seed)
    theta = init_policy(fold_in(master, 1), config.policy_hidden)
    phi = init_progress_model(fold_in(master, 2), config.reward_hidden)
    flat = theta.flatten()
    return AgentState(
        theta=theta,
        phi=phi,
        adam_theta=adam_init(flat.size),
        adam_phi=adam_init(phi.net.n_params, beta2=0.99),
        si_acc=si_fresh(flat),
        step=0,
        key=fold_in(master, 3),
    )


# -- rollout collection ------------------------------------------------------------

def collect_rollouts(state: AgentState, task: TaskSpec, demos: Sequence[Trajectory],
                     n_envs: int, horizon: int, key: RngKey,
                     gamma: float = 0.99) -> RolloutBatch:
    """n_envs fresh episodes under the current policy, rewarded by the
    current progress model (the one from before this step's reward update).

    Per-episode anchors: the first observation of the episode itself and
    the final observation of a randomly chosen successful demonstration.
    """
    goals_pool = [d.observations[-1] for d in demos if d.success]
    if not goals_pool:
        raise ConfigError("demos contain no successful trajectory for goal anchoring")
    horizon = min(horizon, task.horizon)
    k_reset, k_rest = rng_split(key)
    k_goal, k_act = rng_split(k_rest)

    states = env_reset(task, k_reset, n_envs)
    goal_idx = randints(k_goal, n_envs, len(goals_pool))
    goals = [goals_pool[i] for i in goal_idx]
    seqs: list[list[tuple[float, ...]]] = [[observe(task, s)] for s in states]

    n_tr = n_envs * horizon
    obs_buf = new_buf(n_tr * OBS_DIM)
    act_buf = new_buf(n_tr * ACT_DIM)
    logp_buf = new_buf(n_tr)
    done_buf = new_buf(n_tr)
    succ_buf = new_buf(n_tr)
    sticky = [False] * n_envs

    for t in range(horizon):
        cur_obs = [seq[-1] for seq in seqs]
        obs_m = Tensor((n_envs, OBS_DIM))
        pos = 0
        for row in cur_obs:
            for v in row:
                obs_m.data[pos] = v
                pos += 1
        actions_t, logps_t = act(state.theta, obs_m, fold_in(k_act, t))
        action_pairs = [(actions_t.data[2 * i], actions_t.data[2 * i + 1])
                        for i in range(n_envs)]
        states, next_obs, flags = env_step(task, states, action_pairs)
        for e in range(n_envs):
            i = e * horizon + t
            base = i * OBS_DIM
            for d, v in enumerate(cur_obs[e]):
                obs_buf[base + d] = v
            act_buf[i * ACT_DIM] = action_pairs[e][0]
            act_buf[i * ACT_DIM + 1] = action_pairs[e][1]
            logp_buf[i] = logps_t.data[e]
            sticky[e] = sticky[e] or flags[e]
            succ_buf[i] = 1.0 if sticky[e] else 0.0
            done_buf[i] = 1.0 if t == horizon - 1 else 0.0
            seqs[e].append(next_obs[e])

    # potentials over all (horizon+1) observations per env, one batched pass
    anchors = []
    currents = []
    goal_rows = []
    for e in range(n_envs):
        for o in seqs[e]:
            anchors.append(seqs[e][0])
            currents.append(o)
            goal_rows.append(goals[e])
    phi_vals = potential_batch(state.phi, anchors, currents, goal_rows)

    rew_buf = new_buf(n_tr)
    stride = horizon + 1
    for e in range(n_envs):
        base = e * stride
        for t in range(horizon):
            rew_buf[e * horizon + t] = (gamma * phi_vals.data[base + t + 1]
                                        - phi_vals.data[base + t])

    obs_flat = Tensor((n_tr, OBS_DIM), obs_buf)
    values_flat = mlp_forward(state.theta.critic, obs_flat)
    val_buf = new_buf(n_tr)
    from .backend import K

    K.col_get(values_flat.data, 0, val_buf, n_tr, 1)

    rollout = RolloutBatch(
        n_envs=n_envs,
        horizon=horizon,
        obs=Tensor((n_envs, horizon, OBS_DIM), obs_buf),
        actions=Tensor((n_envs, horizon, ACT_DIM), act_buf),
        log_probs=Tensor((n_envs, horizon), logp_buf),
        shaped_rewards=Tensor((n_envs, horizon), rew_buf),
        values=Tensor((n_envs, horizon), val_buf),
        dones=Tensor((n_envs, horizon), done_buf),
        successes=Tensor((n_envs, horizon), succ_buf),
        obs_seqs=seqs,
    )
    return rollout


# -- one training step ----------------------------------------------------------------

def train_step(state: AgentState, task: TaskSpec, coreset: Coreset,
               regularizers: Sequence[SiRegularizer], demos: Sequence[Trajectory],
               config: TrainConfig, key: RngKey
               ) -> tuple[AgentState, RolloutBatch, StepMetrics]:
    """Rollout with the pre-update reward model, then reward-model and
    policy updates, then the importance-path accumulation."""
    k_roll, k_rest = rng_split(key)
    k_expert, k_rest2 = rng_split(k_rest)
    k_agent, k_policy = rng_split(k_rest2)

    rollout = collect_rollouts(state, task, demos, config.n_envs,
                               config.rollout_horizon, k_roll,
                               config.reward_hyper.gamma)
    adv_raw, returns = gae(rollout.shaped_rewards, rollout.values, rollout.dones,
                           Tensor((rollout.n_envs,)), config.reward_hyper.gamma,
                           config.ppo_hyper.gae_lambda)
    rollout.advantages = normalize_advantages(adv_raw)
    rollout.returns = returns

    hyper = config.reward_hyper
    if not config.push_back_enabled:
        hyper = replace(hyper, beta=0.0)
    demo_goals = [d.observations[-1] for d in demos if d.success]
    # push-back targets non-expert behavior: triplets come from episodes
    # that did not reach success, so pressure fades as the policy masters
    # the task instead of fighting the expert signal on mastered states
    failed_seqs = [rollout.obs_seqs[e] for e in range(rollout.n_envs)
                   if rollout.successes.data[e * rollout.horizon + rollout.horizon - 1] == 0.0]
    phi_new, adam_phi_new = state.phi, state.adam_phi
    reward_metrics = {}
    for u in range(config.reward_updates_per_step):
        expert_triplets = sample_expert_triplets(demos, fold_in(k_expert, u),
                                                 config.triplet_batch)
        agent_triplets = (sample_agent_triplets(failed_seqs, fold_in(k_agent, u),
                                                config.triplet_batch,
                                                goal_pool=demo_goals)
                          if hyper.beta != 0.0 and failed_seqs else [])
        phi_new, adam_phi_new, reward_metrics = update_reward_model(
            phi_new, adam_phi_new, expert_triplets, agent_triplets, hyper,
            config.lr_reward)

    ppo_hyper = config.ppo_hyper
    if not config.cl_regs_enabled:
        ppo_hyper = replace(ppo_hyper, lambda1=0.0, lambda2=0.0)
    upd = policy_update(state.theta, state.adam_theta, rollout, coreset,
                        list(regularizers), ppo_hyper, config.lr_policy, k_policy,
                        config.replay_batch)

    si_acc = si_accumulate(state.si_acc, upd.last_grad, upd.theta.flatten())

    n_tr = rollout.n_transitions
    from .backend import K

    mean_shaped = K.sum_all(rollout.shaped_rewards.data, n_tr) / n_tr
    succ_rate = sum(
        rollout.successes.data[e * rollout.horizon + rollout.horizon - 1]
        for e in range(rollout.n_envs)) / rollout.n_envs

    metrics = StepMetrics(
        step=state.step + 1,
        task_id=task.task_id,
        reward_loss=reward_metrics["reward_loss"],
        expert_loss=reward_metrics["expert_loss"],
        push_loss=reward_metrics["push_loss"],
        ppo_loss=upd.metrics["ppo_loss"],
        replay_loss=upd.metrics["replay_loss"],
        si_loss=upd.metrics["si_loss"],
        mean_shaped_reward=mean_shaped,
        rollout_success_rate=succ_rate,
    )
    for name, value in metrics.values().items():
        if not math.isfinite(value):
            raise NumericalError(f"metric {name} is non-finite at step {metrics.step}")

    new_state = AgentState(
        theta=upd.theta,
        phi=phi_new,
        adam_theta=upd.adam_state,
        adam_phi=adam_phi_new,
        si_acc=si_acc,
        step=state.step + 1,
        key=state.key,
    )
    return new_state, rollout, metrics


# -- per-task loop -----------------------------------------------------------------------

def train_task(state: AgentState, task: TaskSpec, coreset: Coreset,
               regularizers: Sequence[SiRegularizer], demos: Sequence[Trajectory],
               config: TrainConfig,
               on_step: Callable[[AgentState, StepMetrics], None] | None = None,
               n_steps: int | None = None,
               ) -> tuple[AgentState, list[StepMetrics], list[RolloutBatch]]:
    """n_steps training steps with per-step key splitting; the importance
    accumulator is reset at task start. Returns the final n_keep rollout
    batches for coreset construction."""
    n_steps = config.steps_per_task if n_steps is None else n_steps
    state = replace(state, si_acc=si_fresh(state.theta.flatten()))
    metrics_list: list[StepMetrics] = []
    tail: deque[RolloutBatch] = deque(maxlen=config.n_keep)
    for _ in range(n_steps):
        new_key, step_key = rng_split(state.key)
        state = replace(state, key=new_key)
        state, rollout, metrics = train_step(state, task, coreset, regularizers,
                                             demos, config, step_key)
        metrics_list.append(metrics)
        tail.append(rollout)
        if on_step is not None:
            on_step(state, metrics)
    return state, metrics_list, list(tail)


# -- sequence loop ------------------------------------------------------------------------

@dataclass
class RunResult:
    final_state: AgentState
    coreset: Coreset
    regularizers: list[SiRegularizer]
    step_metrics: list[StepMetrics]
    boundary_reports: list[EvalReport]
    oracle: dict[str, float]
    demos: dict[str, list[Trajectory]]
    metric_rows: list[tuple[int, str, str, float]]
    per_task_checkpoints: dict[str, list[tuple[int, float]]]

    def final_ap(self) -> float:
        return self.boundary_reports[-1].ap

    def final_regret(self) -> float:
        return self.boundary_reports[-1].regret

    def summary_rows(self) -> list[tuple[str, float, float, float]]:
        last = self.boundary_reports[-1]
        return [(tid, last.per_task_success[tid], last.ap, last.regret)
                for tid in last.per_task_success]


def train_sequence(config: TrainConfig,
                   on_step: Callable[[AgentState, StepMetrics], None] | None = None
                   ) -> RunResult:
    """The full continual loop over config.tasks.

    Per task: generate demos, run the inner loop (evaluating the current
    task every eval_every steps), then, when continual regularizers are
    enabled, refresh the coreset and append one importance regularizer.
    After each task boundary every seen task is evaluated.
    """
    master = seed_key(config.seed)
    state = init_agent(config)
    coreset = Coreset(config.capacity_per_task)
    regularizers: list[SiRegularizer] = []
    all_metrics: list[StepMetrics] = []
    boundary_reports: list[EvalReport] = []
    metric_rows: list[tuple[int, str, str, float]] = []
    demos_by_task: dict[str, list[Trajectory]] = {}
    oracle: dict[str, float] = {}
    checkpoints: dict[str, list[tuple[int, float]]] = {t.task_id: [] for t in config.tasks}

    for ti, task in enumerate(config.tasks):
        demos = generate_demos(task, config.demos_per_task, fold_in(master, 1000 + ti),
                               config.demo_noise, config.demo_keep_failures)
        demos_by_task[task.task_id] = demos
        oracle[task.task_id] = expert_success_rate(
            task, config.eval_episodes, fold_in(master, 2000 + ti))

        def hook(st: AgentState, sm: StepMetrics, _task=task):
            for name, value in sm.values().items():
                metric_rows.append((sm.step, sm.task_id, name, value))
            if on_step is not None:
                on_step(st, sm)
            if sm.step % config.eval_every == 0:
                succ, _ = eval_policy(st.theta, _task, config.eval_episodes,
                                      fold_in(master, 3_000_000 + sm.step))
                checkpoints[_task.task_id].append((sm.step, succ))
                metric_rows.append((sm.step, _task.task_id, "eval_success", succ))

        state, task_metrics, tail = train_task(state, task, coreset, regularizers,
                                               demos, config, on_step=hook)
        all_metrics.extend(task_metrics)

        if config.cl_regs_enabled:
            coreset = update_coreset(coreset, tail, task.task_id)
            regularizers = list(regularizers)
            regularizers.append(compute_si(state.si_acc, state.theta.flatten(),
                                           config.si_xi))

        report = _boundary_report(state, config, master, config.tasks[: ti + 1],
                                  demos_by_task, oracle, checkpoints)
        boundary_reports.append(report)
        for tid, succ in report.per_task_success.items():
            metric_rows.append((report.checkpoint_step, tid, "boundary_success", succ))
        metric_rows.append((report.checkpoint_step, task.task_id, "ap", report.ap))
        metric_rows.append((report.checkpoint_step, task.task_id, "regret", report.regret))
        metric_rows.append((report.checkpoint_step, task.task_id, "eval_reward",
                            report.eval_reward))

    return RunResult(state, coreset, regularizers, all_metrics, boundary_reports,
                     oracle, demos_by_task, metric_rows, checkpoints)


def _boundary_report(state: AgentState, config: TrainConfig, master: RngKey,
                     seen_tasks: Sequence[TaskSpec],
                     demos_by_task: dict[str, list[Trajectory]],
                     oracle: dict[str, float],
                     checkpoints: dict[str, list[tuple[int, float]]]) -> EvalReport:
    per_task: dict[str, float] = {}
    shaped_total = 0.0
    for task in seen_tasks:
        ekey = fold_in(master, 4_000_000 + state.step * 10 + _task_index(seen_tasks, task))
        succ, _ = eval_policy(state.theta, task, config.eval_episodes, ekey)
        per_task[task.task_id] = succ
        checkpoints[task.task_id].append((state.step, succ))
        shaped_total += eval_shaped_return(state.theta, state.phi, task,
                                           demos_by_task[task.task_id],
                                           config.eval_episodes, fold_in(ekey, 1),
                                           config.reward_hyper)
    regrets = []
    for task in seen_tasks:
        cps = [s for _, s in checkpoints[task.task_id]]
        regrets.append(compute_regret(oracle[task.task_id], cps))
    return EvalReport(
        per_task_success=per_task,
        eval_reward=shaped_total / len(seen_tasks),
        ap=compute_ap(per_task),
        regret=sum(regrets) / len(regrets),
        checkpoint_step=state.step,
    )


def _task_index(tasks: Sequence[TaskSpec], task: TaskSpec) -> int:
    for i, t in enumerate(tasks):
        if t.task_id == task.task_id:
            return i
    raise ConfigError(f"task {task.task_id} not in sequence")
