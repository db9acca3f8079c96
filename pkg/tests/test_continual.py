"""Coreset selection/sampling and the synaptic-importance path integral."""

from array import array

import pytest

from progressrl.continual import (
    Coreset,
    CoresetEntry,
    compute_si,
    sample_coreset,
    si_accumulate,
    si_fresh,
    update_coreset,
)
from progressrl.errors import ConfigError
from progressrl.policy import RolloutBatch
from progressrl.rng import normals, seed_key
from progressrl.tensor import Tensor, vector


def rollout_with_advantages(advs, task_obs_mark=0.0):
    """1-env rollout whose flattened advantages equal advs."""
    h = len(advs)
    obs = Tensor((1, h, 8))
    for t in range(h):
        obs.data[t * 8] = task_obs_mark + t
    actions = Tensor((1, h, 2))
    for t in range(h):
        actions.data[2 * t] = 0.1 * t
    rb = RolloutBatch(
        n_envs=1, horizon=h, obs=obs, actions=actions,
        log_probs=Tensor((1, h)), shaped_rewards=Tensor((1, h)),
        values=Tensor((1, h)), dones=Tensor((1, h)), successes=Tensor((1, h)),
        advantages=Tensor((1, h), array("d", advs)), returns=Tensor((1, h)))
    return rb


# -- si_accumulate ---------------------------------------------------------------

def test_si_zero_gradients_leave_omega():
    acc = si_fresh(vector([1.0, 2.0]))
    acc2 = si_accumulate(acc, Tensor((2,)), vector([3.0, 4.0]))
    assert list(acc2.omega.data) == [0.0, 0.0]
    assert list(acc2.theta_prev.data) == [3.0, 4.0]


def test_si_hand_evaluated_increment():
    # grad = [1], theta 0 -> -0.1: contribution (-1)(-0.1) = 0.1
    acc = si_fresh(vector([0.0]))
    acc2 = si_accumulate(acc, vector([1.0]), vector([-0.1]))
    assert abs(acc2.omega.data[0] - 0.1) < 1e-15


def test_si_descent_on_quadratic_accumulates_positive_omega():
    theta = 1.0
    acc = si_fresh(vector([theta]))
    for _ in range(50):
        g = theta  # gradient of 0.5 theta^2
        theta = theta - 0.05 * g
        acc = si_accumulate(acc, vector([g]), vector([theta]))
    assert acc.omega.data[0] > 0.0


def test_si_quadratic_path_integral_matches_loss_drop():
    # descending 0.5 theta^2 from 1 to ~0 accumulates omega ~ 0.5 (within 5%)
    theta = 1.0
    acc = si_fresh(vector([theta]))
    for _ in range(2000):
        g = theta
        theta = theta - 0.01 * g
        acc = si_accumulate(acc, vector([g]), vector([theta]))
    assert abs(acc.omega.data[0] - 0.5) < 0.025


def test_si_layout_mismatch_is_config_error():
    acc = si_fresh(vector([0.0, 0.0]))
    with pytest.raises(ConfigError):
        si_accumulate(acc, vector([1.0]), vector([0.0, 0.0]))


# -- compute_si -----------------------------------------------------------------------

def test_compute_si_zero_omega_gives_zero():
    acc = si_fresh(vector([0.3, -0.2]))
    reg = compute_si(acc, vector([1.0, 1.0]), 0.1)
    assert list(reg.omega_cap.data) == [0.0, 0.0]
    assert list(reg.theta_star.data) == [1.0, 1.0]


def test_compute_si_hand_value():
    # omega 1, displacement 1, xi 0.1 -> 1/(1+0.1)
    acc = si_fresh(vector([0.0]))
    acc.omega = vector([1.0])
    reg = compute_si(acc, vector([1.0]), 0.1)
    assert abs(reg.omega_cap.data[0] - 1.0 / 1.1) < 1e-12


def test_compute_si_clamps_negative_omega():
    acc = si_fresh(vector([0.0]))
    acc.omega = vector([-3.0])
    reg = compute_si(acc, vector([0.5]), 0.1)
    assert reg.omega_cap.data[0] == 0.0


def test_compute_si_nonnegative_for_mixed_omega():
    acc = si_fresh(vector([0.0, 0.0, 0.0]))
    acc.omega = vector([-1.0, 0.0, 2.5])
    reg = compute_si(acc, vector([0.1, -0.2, 0.3]), 0.1)
    assert all(v >= 0.0 for v in reg.omega_cap.data)


# -- update_coreset ---------------------------------------------------------------------

def test_coreset_keeps_top_positive_advantages():
    rb = rollout_with_advantages([3.0, 1.0, 2.0, -1.0])
    cs = update_coreset(Coreset(2), [rb], "press")
    advs = sorted((e.advantage for e in cs.entries), reverse=True)
    assert advs == [3.0, 2.0]


def test_coreset_negative_advantages_never_stored():
    rb = rollout_with_advantages([-3.0, -1.0, 0.0])
    cs = update_coreset(Coreset(4), [rb], "press")
    assert len(cs.entries) == 0


def test_coreset_update_is_idempotent_per_task():
    rb = rollout_with_advantages([3.0, 1.0, 2.0])
    cs = update_coreset(Coreset(2), [rb], "press")
    cs2 = update_coreset(cs, [rb], "press")
    assert len(cs2.entries) == 2
    assert sorted(e.advantage for e in cs2.entries) == sorted(
        e.advantage for e in cs.entries)


def test_coreset_preserves_other_tasks():
    rb1 = rollout_with_advantages([3.0, 1.0], task_obs_mark=0.0)
    rb2 = rollout_with_advantages([5.0, 4.0], task_obs_mark=100.0)
    cs = update_coreset(Coreset(2), [rb1], "press")
    cs = update_coreset(cs, [rb2], "open")
    assert {e.task_id for e in cs.entries} == {"press", "open"}
    cs = update_coreset(cs, [rb2], "open")  # refresh one task only
    assert sum(1 for e in cs.entries if e.task_id == "press") == 2


def test_coreset_capacity_bound_exhaustive():
    # after K=3 tasks at capacity C=16, |M| <= min(candidates, C) * K
    per_task_counts = {}
    cs = Coreset(16)
    for k, tid in enumerate(["press", "open", "close"]):
        advs = [float(i % 7) - 1.0 for i in range(40 + k)]
        rb = rollout_with_advantages(advs, task_obs_mark=k * 50.0)
        positives = sum(1 for a in advs if a > 0)
        per_task_counts[tid] = min(positives, 16)
        cs = update_coreset(cs, [rb], tid)
        for t, want in per_task_counts.items():
            assert sum(1 for e in cs.entries if e.task_id == t) == want
    assert len(cs.entries) == sum(per_task_counts.values())
    assert len(cs.entries) <= 16 * 3


def test_coreset_ties_keep_earlier_transitions():
    rb = rollout_with_advantages([2.0, 2.0, 2.0, 2.0])
    cs = update_coreset(Coreset(2), [rb], "press")
    # obs mark encodes collection time t; earlier ones must win
    marks = sorted(e.obs[0] for e in cs.entries)
    assert marks == [0.0, 1.0]


def test_coreset_empty_rollouts_is_config_error():
    with pytest.raises(ConfigError):
        update_coreset(Coreset(2), [], "press")


# -- sample_coreset -------------------------------------------------------------------------

def build_coreset(tasks_counts, cap=64):
    cs = Coreset(cap)
    for tid, cnt in tasks_counts.items():
        for i in range(cnt):
            cs.entries.append(CoresetEntry((float(i),) * 8, (0.0, 0.0), 1.0 + i, tid))
    return cs


def test_sample_empty_coreset_gives_empty_batch():
    assert sample_coreset(Coreset(4), seed_key(1), 8) == []
    assert sample_coreset(None, seed_key(1), 8) == []


def test_sample_stratified_equally():
    cs = build_coreset({"a": 20, "b": 3})
    batch = sample_coreset(cs, seed_key(2), 10)
    assert sum(1 for e in batch if e.task_id == "a") == 5
    assert sum(1 for e in batch if e.task_id == "b") == 5


def test_sample_deterministic_in_key():
    cs = build_coreset({"a": 7, "b": 9})
    b1 = sample_coreset(cs, seed_key(3), 12)
    b2 = sample_coreset(cs, seed_key(3), 12)
    assert b1 == b2


def test_sample_with_replacement_within_task():
    cs = build_coreset({"a": 2})
    batch = sample_coreset(cs, seed_key(4), 16)
    assert len(batch) == 16
    assert {e.task_id for e in batch} == {"a"}
