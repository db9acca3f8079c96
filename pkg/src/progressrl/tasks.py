"""Point-mass manipulation tasks with shared observation/action spaces.

Three tasks ("press", "open", "close") share an 8-dimensional observation
and a 2-dimensional action box. A point-mass agent moves under
semi-implicit Euler dynamics; while it is within a contact radius of a
task-specific button position, the component of its action directed at
the button drives a scalar object coordinate through a per-task coupling.
The tasks differ in coupling sign, button placement, and object
start/target, so the same observation layout demands different contact
behavior per task.

A scripted PD expert solves each task and generates unlabeled
demonstration trajectories (observations only), stored as JSON lines.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .errors import ConfigError, DemoGenerationError, EpisodeExhaustedError
from .rng import RngKey, fold_in, normals, rng_split, uniform_range

OBS_DIM = 8
ACT_DIM = 2

# articulation travel stops shared by all tasks (object coordinates are
# normalized so start/target always lie in [0, 1]). The stops sit just
# inside the success tolerance of the endpoints, so driving the mechanism
# to its end stop completes the motion.
OBJ_MIN = -0.04
OBJ_MAX = 1.04


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    coupling: float
    friction: float
    contact_radius: float
    object_start: float
    object_target: float
    button_pos: tuple[float, float]
    horizon: int = 100
    success_tol: float = 0.05
    dt: float = 0.05

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.dt <= 0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        if self.success_tol <= 0:
            raise ConfigError(f"success_tol must be > 0, got {self.success_tol}")
        if not 0.0 <= self.friction < 1.0:
            raise ConfigError(f"friction must be in [0,1), got {self.friction}")


def default_tasks() -> dict[str, TaskSpec]:
    return {
        "press": TaskSpec("press", coupling=1.0, friction=0.1, contact_radius=0.2,
                          object_start=0.0, object_target=1.0, button_pos=(0.0, 0.0)),
        "open": TaskSpec("open", coupling=-1.4, friction=0.1, contact_radius=0.35,
                         object_start=0.0, object_target=1.0, button_pos=(0.4, 0.0)),
        "close": TaskSpec("close", coupling=1.4, friction=0.1, contact_radius=0.35,
                          object_start=1.0, object_target=0.0, button_pos=(-0.4, 0.0)),
    }


def get_task(task_id: str) -> TaskSpec:
    tasks = default_tasks()
    if task_id not in tasks:
        raise ConfigError(f"unknown task {task_id!r}; expected one of {sorted(tasks)}")
    return tasks[task_id]


@dataclass
class EnvState:
    agent_pos: tuple[float, float]
    agent_vel: tuple[float, float]
    obj_q: float
    t: int


@dataclass
class Trajectory:
    """Observation-only record of one episode (no actions stored)."""

    observations: list[tuple[float, ...]]
    success: bool
    task_id: str


@dataclass
class Transition:
    obs: tuple[float, ...]
    action: tuple[float, float]
    next_obs: tuple[float, ...]
    done: bool
    success: bool


def observe(task: TaskSpec, s: EnvState) -> tuple[float, ...]:
    return (s.agent_pos[0], s.agent_pos[1], s.agent_vel[0], s.agent_vel[1],
            s.obj_q, task.button_pos[0], task.button_pos[1], task.object_target)


def env_reset(task: TaskSpec, key: RngKey, batch: int) -> list[EnvState]:
    """Fresh episodes: positions uniform in [-1,1]^2, zero velocity."""
    if batch < 1:
        raise ConfigError(f"batch must be >= 1, got {batch}")
    pos = uniform_range(key, 2 * batch, -1.0, 1.0)
    return [
        EnvState((pos.data[2 * i], pos.data[2 * i + 1]), (0.0, 0.0), task.object_start, 0)
        for i in range(batch)
    ]


def _clamp(v: float) -> float:
    return -1.0 if v < -1.0 else (1.0 if v > 1.0 else v)


def env_step(task: TaskSpec, states: Sequence[EnvState],
             actions: Sequence[tuple[float, float]]
             ) -> tuple[list[EnvState], list[tuple[float, ...]], list[bool]]:
    """Advance a batch one step; rows are independent.

    Returns (next states, next observations, instant success flags).
    Success stickiness is an episode-level convention applied by rollout
    drivers, not stored in EnvState.
    """
    out_states: list[EnvState] = []
    out_obs: list[tuple[float, ...]] = []
    out_success: list[bool] = []
    bx, by = task.button_pos
    keep = 1.0 - task.friction
    dt = task.dt
    for s, a in zip(states, actions):
        if s.t >= task.horizon:
            raise EpisodeExhaustedError(
                f"episode already at horizon {task.horizon} for task {task.task_id}")
        ax = _clamp(a[0])
        ay = _clamp(a[1])
        vx = keep * s.agent_vel[0] + dt * ax
        vy = keep * s.agent_vel[1] + dt * ay
        px = s.agent_pos[0] + dt * vx
        py = s.agent_pos[1] + dt * vy
        dx = bx - px
        dy = by - py
        dist = math.sqrt(dx * dx + dy * dy)
        obj = s.obj_q
        if dist < task.contact_radius and dist > 1e-12:
            proj = (ax * dx + ay * dy) / dist
            obj = obj + dt * task.coupling * proj
            if obj < OBJ_MIN:
                obj = OBJ_MIN
            elif obj > OBJ_MAX:
                obj = OBJ_MAX
        ns = EnvState((px, py), (vx, vy), obj, s.t + 1)
        out_states.append(ns)
        out_obs.append(observe(task, ns))
        out_success.append(abs(obj - task.object_target) < task.success_tol)
    return out_states, out_obs, out_success


def scripted_expert(task: TaskSpec, state: EnvState, key: RngKey,
                    noise: float) -> tuple[float, float]:
    """PD controller: drive to the button, then push the object to target.

    When the required object motion needs a push toward the button
    (need * coupling > 0) the expert thrusts at the button while in
    contact; otherwise it thrusts away, which both brakes the approach
    and drives the object the right way.
    """
    if noise < 0:
        raise ConfigError(f"noise must be >= 0, got {noise}")
    kp, kd = 4.0, 1.0
    px, py = state.agent_pos
    vx, vy = state.agent_vel
    bx, by = task.button_pos
    dx = bx - px
    dy = by - py
    dist = math.sqrt(dx * dx + dy * dy)
    need = task.object_target - state.obj_q

    if abs(need) < task.success_tol:
        ax, ay = -kd * vx, -kd * vy
    elif dist < task.contact_radius and dist > 1e-9:
        # partial thrust stretches the contact phase over more steps, which
        # spreads demonstrated progress across the manipulation itself
        sign = 0.55 if need * task.coupling > 0 else -0.55
        ax, ay = sign * dx / dist, sign * dy / dist
    else:
        ax, ay = kp * dx - kd * vx, kp * dy - kd * vy

    if noise > 0.0:
        z = normals(key, 2)
        ax += noise * z.data[0]
        ay += noise * z.data[1]
    return _clamp(ax), _clamp(ay)


def rollout_policy(task: TaskSpec, policy: Callable[[EnvState, RngKey], tuple[float, float]],
                   key: RngKey, truncate_at_success: bool = False) -> Trajectory:
    """Single-env rollout driver with sticky success."""
    reset_key, step_key = rng_split(key)
    state = env_reset(task, reset_key, 1)[0]
    obs_list = [observe(task, state)]
    success = False
    for t in range(task.horizon):
        act_key = fold_in(step_key, t)
        action = policy(state, act_key)
        states, obs, flags = env_step(task, [state], [action])
        state = states[0]
        obs_list.append(obs[0])
        success = success or flags[0]
        if success and truncate_at_success:
            break
    return Trajectory(obs_list, success, task.task_id)


def generate_demos(task: TaskSpec, n: int, key: RngKey, noise: float,
                   keep_failures: float) -> list[Trajectory]:
    """Roll out the scripted expert until n trajectories are assembled.

    Failed rollouts are retained up to round(n * keep_failures); remaining
    slots are filled with successes. Raises if the mix cannot be assembled
    within 10n attempts.
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if not 0.0 <= keep_failures <= 1.0:
        raise ConfigError(f"keep_failures must be in [0,1], got {keep_failures}")
    failure_cap = round(n * keep_failures)
    successes: list[Trajectory] = []
    failures: list[Trajectory] = []
    for attempt in range(10 * n):
        akey = fold_in(key, attempt)

        def expert(state, k):
            return scripted_expert(task, state, k, noise)

        traj = rollout_policy(task, expert, akey, truncate_at_success=True)
        if traj.success:
            if len(successes) < n:
                successes.append(traj)
        elif len(failures) < failure_cap:
            failures.append(traj)
        kept_failures = min(failure_cap, len(failures))
        if kept_failures + min(len(successes), n - kept_failures) >= n:
            break
    kept_failures = min(failure_cap, len(failures))
    needed_successes = n - kept_failures
    if len(successes) < needed_successes:
        raise DemoGenerationError(
            f"could not assemble {n} demos ({failure_cap} failures requested) "
            f"within {10 * n} attempts: got {len(successes)} successes, "
            f"{len(failures)} failures")
    return failures[:kept_failures] + successes[:needed_successes]


# -- demo file format ----------------------------------------------------------

def save_demos(demos: Sequence[Trajectory], path: str) -> None:
    """One trajectory per line: {"task_id", "success", "obs": [[f64 x 8], ...]}."""
    with open(path, "w", encoding="utf-8") as fh:
        for d in demos:
            fh.write(json.dumps({
                "task_id": d.task_id,
                "success": d.success,
                "obs": [list(o) for o in d.observations],
            }) + "\n")


def load_demos(path: str) -> list[Trajectory]:
    demos = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                obs = [tuple(float(v) for v in row) for row in rec["obs"]]
                demos.append(Trajectory(obs, bool(rec["success"]), str(rec["task_id"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"{path}:{line_no}: malformed demo record: {exc}") from exc
    for d in demos:
        if len(d.observations) < 2:
            raise ConfigError(f"{path}: trajectory shorter than 2 observations")
        if any(len(o) != OBS_DIM for o in d.observations):
            raise ConfigError(f"{path}: observation width != {OBS_DIM}")
    return demos
