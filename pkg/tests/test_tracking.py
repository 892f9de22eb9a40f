from __future__ import annotations

import numpy as np
import pytest

from physmo.embodiment import ROOT_DOF, default_biped
from physmo.errors import ContractViolation
from physmo.experts import crouch_reference, hop_reference, stand_reference
from physmo.motion import MotionSequence
from physmo.rewards import tracking_distortion
from physmo.tracking import (kinematic_realized, save_trajectory_csv,
                             settle_standing, track, track_many,
                             trajectory_csv, trajectory_from_rows)


@pytest.fixture(scope="module")
def biped():
    return default_biped()


@pytest.fixture(scope="module")
def stand_run(biped):
    ref = stand_reference(biped, 60, 30.0)
    return ref, track(biped, ref)


def test_standing_reference_is_statically_feasible(stand_run):
    ref, out = stand_run
    assert not out.fell
    assert out.frames.shape == ref.frames.shape
    assert out.dt == ref.dt
    # after the brief initial transient both feet stay loaded
    assert np.all(out.contact_flags[5:])
    assert tracking_distortion(ref, out) < 0.05


def test_self_consistent_retrack(biped, stand_run):
    """Re-tracking a recorded rollout reproduces it almost exactly: the
    recording is a physics fixed point, so the second pass can only lose
    the initial-velocity estimate, not the whole motion."""
    refs = [stand_run[0],
            crouch_reference(biped, 0.8, 60, 30.0),
            hop_reference(biped, 1.2, 60, 30.0)]
    first = track_many(biped, refs)
    deltas = [tracking_distortion(r, out) for r, out in zip(refs, first)]
    replay = [MotionSequence(out.frames.copy(), out.dt) for out in first]
    second = track_many(biped, replay)
    for ref2, out2, d1 in zip(replay, second, deltas):
        assert not out2.fell
        assert tracking_distortion(ref2, out2) <= 10.0 * max(d1, 1e-12)


def test_floating_reference_out_distorts_recordings(biped, stand_run):
    from physmo.dataset import floating_reference

    ref, out = stand_run
    recorded = MotionSequence(out.frames.copy(), out.dt)
    d_self = tracking_distortion(recorded, track(biped, recorded))
    floating = floating_reference(biped)
    d_float = tracking_distortion(floating, track(biped, floating))
    assert d_float > 100.0 * d_self


def test_noise_does_not_reduce_distortion(biped, stand_run):
    # corrupting the joint channels of a feasible recording cannot make it
    # easier to reproduce
    _, out = stand_run
    base_ref = MotionSequence(out.frames.copy(), out.dt)
    base = tracking_distortion(base_ref, track(biped, base_ref))
    rng = np.random.default_rng(0)
    noisy_refs = []
    for _ in range(20):
        frames = base_ref.frames.copy()
        frames[:, ROOT_DOF:] += rng.normal(0.0, 0.2, frames[:, ROOT_DOF:].shape)
        noisy_refs.append(MotionSequence(frames, base_ref.dt))
    outs = track_many(biped, noisy_refs)
    med = np.median([tracking_distortion(r, o) for r, o in zip(noisy_refs, outs)])
    assert med >= base


def test_fall_keeps_recording_to_the_end(biped):
    # both legs swung horizontal: nothing supports the torso, so it drops
    # below the fall line, and the frames keep recording after the fall
    q = settle_standing(biped).q.copy()
    q[ROOT_DOF:] = [np.pi / 2, 0.0, -np.pi / 2, 0.0]
    ref = MotionSequence(np.tile(q, (45, 1)), 1.0 / 30.0)
    out = track(biped, ref)
    assert out.fell
    assert out.frames.shape == (45, biped.dof)
    assert np.all(np.isfinite(out.frames))


def test_track_many_validates_shapes(biped):
    ref = stand_reference(biped, 20, 30.0)
    short = MotionSequence(ref.frames[:10].copy(), ref.dt)
    with pytest.raises(ContractViolation):
        track_many(biped, [ref, short])
    bad_width = MotionSequence(np.zeros((20, biped.dof + 1)), ref.dt)
    with pytest.raises(ContractViolation):
        track_many(biped, [bad_width])
    assert track_many(biped, []) == []


def test_tracking_is_deterministic(biped):
    ref = hop_reference(biped, 1.5, 40, 30.0)
    a = track(biped, ref)
    b = track(biped, ref)
    assert np.array_equal(a.frames, b.frames)
    assert np.array_equal(a.foot_heights, b.foot_heights)
    assert np.array_equal(a.contact_flags, b.contact_flags)
    assert a.fell == b.fell


def test_batched_tracking_matches_singletons(biped):
    refs = [stand_reference(biped, 30, 30.0),
            crouch_reference(biped, 0.75, 30, 30.0)]
    batch = track_many(biped, refs)
    for ref, out in zip(refs, batch):
        alone = track(biped, ref)
        np.testing.assert_allclose(out.frames, alone.frames, atol=1e-9)


def test_kinematic_realized_wraps_frames_without_physics(biped):
    ref = crouch_reference(biped, 0.8, 30, 30.0)
    out = kinematic_realized(biped, ref)
    np.testing.assert_array_equal(out.frames, ref.frames)
    assert not out.fell
    assert out.foot_heights.shape == (30, 2)


def test_trajectory_csv_round_trip(biped, tmp_path, stand_run):
    _, out = stand_run
    text = trajectory_csv(out)
    lines = text.strip().split("\n")
    assert lines[0].split(",")[:3] == ["frame", "time", "q0"]
    assert len(lines) == out.frame_count + 1

    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    back = trajectory_from_rows(header, rows)
    np.testing.assert_array_equal(back.frames, out.frames)
    np.testing.assert_array_equal(back.foot_heights, out.foot_heights)
    np.testing.assert_array_equal(back.foot_speeds_xy, out.foot_speeds_xy)
    np.testing.assert_array_equal(back.contact_flags, out.contact_flags)
    assert back.fell == out.fell
    assert back.dt == pytest.approx(out.dt)

    path = tmp_path / "traj.csv"
    save_trajectory_csv(out, path)
    assert path.read_text() == text


def test_trajectory_from_rows_needs_two_rows_for_dt(biped, stand_run):
    _, out = stand_run
    lines = trajectory_csv(out).strip().split("\n")
    header = lines[0].split(",")
    with pytest.raises(ContractViolation):
        trajectory_from_rows(header, [lines[1].split(",")])
