from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from physmo.errors import ContractViolation
from physmo.motion import Condition, MotionSequence, SpatialControl, TaskCondition
from physmo.rewards import (EmbeddingModel, FEATURE_NAMES, RewardVector,
                            SlideThresholds, default_embedding_model,
                            embed_motion, masked_mse, r_control, r_slide,
                            r_task, r_track, raw_motion_features, reward_set,
                            score)
from physmo.tracking import RealizedTrajectory


def make_traj(frames, heights=None, speeds=None, contacts=None, fell=False,
              dt=1 / 30):
    frames = np.asarray(frames, dtype=np.float64)
    F = frames.shape[0]
    if heights is None:
        heights = np.full((F, 2), 0.1)
    if speeds is None:
        speeds = np.zeros((F, 2))
    if contacts is None:
        contacts = np.ones((F, 2), dtype=bool)
    return RealizedTrajectory(frames, np.asarray(heights, dtype=np.float64),
                              np.asarray(speeds, dtype=np.float64),
                              np.asarray(contacts, dtype=bool), fell, dt)


def test_r_track_single_entry_is_negative_squared_error():
    ref = MotionSequence(np.zeros((2, 1)), 1 / 30)
    realized = make_traj(np.array([[0.0], [0.3]]),
                         heights=np.full((2, 2), 0.1))
    assert r_track(ref, realized) == pytest.approx(-0.09, rel=1e-12)


def test_r_track_sums_over_all_entries():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((6, 4))
    b = rng.standard_normal((6, 4))
    ref = MotionSequence(a, 1 / 30)
    realized = make_traj(b)
    assert r_track(ref, realized) == pytest.approx(-np.sum((a - b) ** 2))


def test_r_slide_hand_counted_fraction():
    """3 of 5 frames violate: low foot moving fast counts, per-foot OR."""
    F = 5
    heights = np.full((F, 2), 1.0)
    speeds = np.zeros((F, 2))
    heights[0, 0], speeds[0, 0] = 0.01, 0.9      # violation (left)
    heights[1, 1], speeds[1, 1] = 0.02, 0.6      # violation (right)
    heights[2, 0], speeds[2, 0] = 0.01, 0.1      # slow: no violation
    heights[3, 0], speeds[3, 0] = 0.2, 2.0       # high: no violation
    heights[4, 0], speeds[4, 0] = 0.04, 0.51     # violation (left)
    heights[4, 1], speeds[4, 1] = 0.04, 0.52     # same frame counts once
    traj = make_traj(np.zeros((F, 3)), heights=heights, speeds=speeds)
    assert r_slide(traj) == pytest.approx(-3 / 5)


def test_r_slide_threshold_boundary_is_strict():
    heights = np.array([[0.05, 1.0]])
    speeds = np.array([[0.50, 0.0]])
    traj = make_traj(np.zeros((2, 3))[:1].repeat(2, axis=0) * 0,
                     heights=heights.repeat(2, axis=0),
                     speeds=speeds.repeat(2, axis=0))
    # h = h0 and v = v0 sit exactly on the thresholds: not a violation
    assert r_slide(traj) == 0.0
    tight = SlideThresholds(h0=0.06, v0=0.49)
    assert r_slide(traj, tight) == -1.0


@settings(max_examples=25)
@given(st.integers(0, 2**31 - 1))
def test_r_control_is_negative_masked_mse(seed):
    rng = np.random.default_rng(seed)
    F, D = 8, 5
    frames = rng.standard_normal((F, D))
    targets = rng.standard_normal((F, D))
    mask = (rng.uniform(size=(F, D)) < 0.4).astype(float)
    mask[0, 0] = 1.0
    cs = SpatialControl(targets, mask)
    traj = make_traj(frames)
    expect = np.sum(mask * (frames - targets) ** 2) / mask.sum()
    assert r_control(traj, cs) == pytest.approx(-expect, rel=1e-12)
    assert masked_mse(frames, targets, mask) == pytest.approx(expect)


def test_masked_mse_rejects_empty_mask():
    with pytest.raises(ContractViolation):
        masked_mse(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))


def test_reward_set_depends_on_spatial():
    task = TaskCondition("stand_still", 0.0)
    assert reward_set(Condition(task)) == ("track", "slide", "task")
    cs = SpatialControl(np.zeros((4, 2)), np.eye(4)[:, :2])
    assert reward_set(Condition(task, cs)) == ("track", "slide", "task",
                                               "control")


def test_reward_vector_guards_and_lookup():
    rv = RewardVector(track=-1.0, slide=-0.5, task=0.2)
    assert rv.value("track") == -1.0
    with pytest.raises(ContractViolation):
        rv.value("control")              # absent reward is an error, not None
    with pytest.raises(ContractViolation):
        RewardVector(track=0.1, slide=0.0, task=0.0)    # track must be <= 0
    with pytest.raises(ContractViolation):
        RewardVector(track=0.0, slide=0.5, task=0.0)    # slide in [-1, 0]


def test_features_require_enough_frames(model):
    traj = make_traj(np.zeros((4, 7)))
    with pytest.raises(ContractViolation):
        raw_motion_features(traj)


def test_feature_vector_reads_motion_quantities(model):
    F, dt = 30, 1 / 30
    frames = np.zeros((F, 7))
    frames[:, 0] = np.linspace(0.0, 1.0, F)        # steady 1.034 m/s drift
    frames[:, 1] = 0.8
    contacts = np.zeros((F, 2), dtype=bool)
    contacts[:, 0] = True                          # left always down
    contacts[::2, 1] = True                        # right half duty
    traj = make_traj(frames, contacts=contacts, dt=dt)
    raw = raw_motion_features(traj)
    named = dict(zip(FEATURE_NAMES, raw))
    assert named["root_vx_mean"] == pytest.approx(1.0 / ((F - 1) * dt))
    assert named["root_height_mean"] == pytest.approx(0.8)
    assert named["root_height_std"] == pytest.approx(0.0)
    assert named["duty_left"] == pytest.approx(1.0)
    assert named["duty_right"] == pytest.approx(0.5)
    assert named["joint_amp"] == pytest.approx(0.0)


def test_joint_frequency_feature_finds_oscillation():
    F, dt = 60, 1 / 30
    tt = np.arange(F) * dt
    frames = np.zeros((F, 7))
    frames[:, 3] = 0.4 * np.sin(2 * np.pi * 2.0 * tt)    # 2 Hz joint wave
    traj = make_traj(frames, dt=dt)
    named = dict(zip(FEATURE_NAMES, raw_motion_features(traj)))
    assert named["joint_freq"] == pytest.approx(2.0, abs=0.26)


def test_frequency_gated_to_zero_for_still_pose():
    traj = make_traj(np.zeros((30, 7)))
    named = dict(zip(FEATURE_NAMES, raw_motion_features(traj)))
    assert named["joint_freq"] == 0.0


def test_embedding_time_reversal_flips_velocity_only(model):
    em = default_embedding_model(model)
    rng = np.random.default_rng(8)
    frames = rng.standard_normal((20, 7)) * 0.1
    frames[:, 0] += np.linspace(0, 0.5, 20)
    frames[:, 1] += 0.75
    contacts = rng.uniform(size=(20, 2)) < 0.7
    traj = make_traj(frames, contacts=contacts)
    rev = make_traj(frames[::-1].copy(), contacts=contacts[::-1].copy())
    e_fwd = embed_motion(traj, em)
    e_rev = embed_motion(rev, em)
    i_vx = FEATURE_NAMES.index("root_vx_mean")
    assert e_rev[i_vx] == pytest.approx(-e_fwd[i_vx], abs=1e-12)
    keep = [i for i in range(len(FEATURE_NAMES)) if i != i_vx]
    np.testing.assert_allclose(e_rev[keep], e_fwd[keep], atol=1e-12)


def test_r_task_prefers_own_family_template(model):
    em = default_embedding_model(model)
    h = model.standing_height()
    F, dt = 60, 1 / 30
    frames = np.zeros((F, 7))
    frames[:, 1] = h - 0.004
    traj = make_traj(frames, dt=dt,
                     contacts=np.ones((F, 2), dtype=bool))
    stand = r_task(traj, TaskCondition("stand_still", 0.0), em)
    walk = r_task(traj, TaskCondition("walk_forward", 0.8), em)
    assert stand > walk
    assert stand > 0.9


def test_r_task_zero_embedding_is_an_error(model):
    em = EmbeddingModel(standing_height=model.standing_height(),
                        lo=np.full(8, -1.0), hi=np.full(8, 1.0))
    # a trajectory whose raw features equal the range midpoint normalizes to 0
    frames = np.zeros((30, 7))
    traj = make_traj(frames, heights=np.zeros((30, 2)),
                     contacts=np.zeros((30, 2), dtype=bool))
    with pytest.raises(ContractViolation):
        r_task(traj, TaskCondition("stand_still", 0.0), em)


def test_score_includes_control_only_when_spatial(model):
    em = default_embedding_model(model)
    rng = np.random.default_rng(1)
    frames = rng.standard_normal((30, 7)) * 0.05
    frames[:, 1] += model.standing_height()
    seq = MotionSequence(frames, 1 / 30)
    traj = make_traj(frames + 0.01)
    plain = score(seq, traj, Condition(TaskCondition("stand_still", 0.0)), em)
    assert plain.control is None

    mask = np.zeros_like(frames)
    mask[0, 1] = 1.0
    cond = Condition(TaskCondition("stand_still", 0.0),
                     SpatialControl(frames, mask))
    spatial = score(seq, traj, cond, em)
    assert spatial.control == pytest.approx(-0.0001, rel=1e-9)
