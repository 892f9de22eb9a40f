"""Scripted experts that realize each task family.

Stand, crouch and hop experts build reference :class:`MotionSequence` targets
from closed-form foot and root trajectories plus two-link leg IK.  Walking is
different: an unactuated-pitch biped has no statically stable gait at the
commanded speeds, so the walk expert runs a balance controller (stance-hip
pitch servo plus speed-regulating foot placement) inside the simulator and
emits windows of the realized motion that pass quality gates.  Either way the
output is the ground-truth motion vocabulary that seeds the generator's
training set.

The walking gait law (cycle frequency, duty factor, stride) lives here and is
shared with the task-embedding templates so that both sides describe the same
motion vocabulary.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np

from .embodiment import ROOT_DOF, EmbodimentModel
from .errors import ContractViolation, ExpertFailure
from .motion import MotionSequence, TaskCondition
from .simulator import DEFAULT_SETTINGS, _directions, foot_points, link_angles, step_many
from .tracking import settle_standing


@dataclass
class ExpertContext:
    """Per-model constants the experts key off: the settled stance."""

    settled_q: np.ndarray
    settled_feet: np.ndarray      # (n_feet, 2) world positions at rest
    standing_height: float

    @property
    def stance_half_width(self) -> float:
        return float(np.abs(self.settled_feet[:, 0]).mean())


_context_cache: "weakref.WeakKeyDictionary[EmbodimentModel, ExpertContext]" = \
    weakref.WeakKeyDictionary()


def expert_context(model: EmbodimentModel) -> ExpertContext:
    ctx = _context_cache.get(model)
    if ctx is None:
        state = settle_standing(model)
        ctx = ExpertContext(settled_q=state.q.copy(),
                            settled_feet=foot_points(model, state.q),
                            standing_height=model.standing_height())
        _context_cache[model] = ctx
    return ctx


# -- two-link leg IK -----------------------------------------------------------------


def leg_ik(model: EmbodimentModel, target: np.ndarray, bend: float) -> tuple[float, float]:
    """Hip and knee angles placing the foot at ``target`` relative to the root.

    ``bend`` is +1 or -1 and picks the knee bending direction.  Targets out of
    reach are pulled to the closest reachable radius, so the caller gets the
    best feasible pose instead of an error mid-gait.
    """
    l1, l2 = model.lengths[1], model.lengths[2]
    dx, dy = float(target[0]), float(target[1])
    r = math.hypot(dx, dy)
    r = min(max(r, abs(l1 - l2) + 1e-6), l1 + l2 - 1e-6)
    phi = math.atan2(dx, -dy)
    cos_knee = (r * r - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    knee_mag = math.acos(min(1.0, max(-1.0, cos_knee)))
    knee = bend * knee_mag
    gamma = math.atan2(l2 * math.sin(knee_mag), l1 + l2 * math.cos(knee_mag))
    hip = phi - bend * gamma
    return hip, knee


def _pose_from_feet(model: EmbodimentModel, root_x: float, root_y: float,
                    feet_world: np.ndarray,
                    bends: tuple[float, float] = (-1.0, +1.0)) -> np.ndarray:
    """Full q for a zero-pitch pose with feet at given world positions."""
    q = np.zeros(model.dof)
    q[0], q[1] = root_x, root_y
    root = np.array([root_x, root_y])
    hip_l, knee_l = leg_ik(model, feet_world[0] - root, bend=bends[0])
    hip_r, knee_r = leg_ik(model, feet_world[1] - root, bend=bends[1])
    q[ROOT_DOF:] = [hip_l, knee_l, hip_r, knee_r]
    return q


# -- gait law (shared with embedding templates) ----------------------------------------


def walk_cycle(speed: float) -> tuple[float, float, float]:
    """Leg-cycle frequency (Hz), stance duty factor, stride length (m)."""
    step_freq = 1.4 + 0.8 * speed      # steps per second
    leg_freq = 0.5 * step_freq         # each leg cycles once per two steps
    duty = WALK_DUTY
    stride = speed / leg_freq
    return leg_freq, duty, stride


WALK_ROOT_DROP = 0.03        # walk with slightly flexed legs for IK reach
SWING_HEIGHT = 0.05
HOP_DEPTH = 0.10             # peak-to-trough root excursion fraction

# Balance-controller gains for the walk expert.  The pitch servo turns stance
# hips against torso lean; foot placement follows the estimated speed so the
# next stance brakes or extends the vault (placement frozen targets caused
# irrecoverable backward topples, hence the continuous retargeting below).
WALK_DUTY = 0.58
WALK_PLACE_GAIN = 0.6        # touchdown shift per m/s of speed error
WALK_VEL_TAU = 0.08          # s, EMA constant of the speed estimate
WALK_PITCH_KP = 1.5
WALK_PITCH_KD = 0.6
WALK_CORR_MAX = 0.6          # rad, stance-hip correction clamp
WALK_WARMUP_FRAMES = 12      # contact/settling transient dropped before windows
WALK_SPEED_TOL = (0.12, 0.30)   # absolute / relative realized-speed gate
_SCAN_STEP = 3               # frames between candidate window starts
_SCAN_EXTRA = 90             # rollout frames held in reserve for the scan


def _swing_ease(u: np.ndarray) -> np.ndarray:
    """Monotone 0->1 with zero endpoint slope (no touchdown slip kick)."""
    return u - np.sin(2.0 * np.pi * u) / (2.0 * np.pi)


def _leg_ik_many(model: EmbodimentModel, dx: np.ndarray, dy: np.ndarray,
                 bend: float = -1.0) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized two-link IK; out-of-reach targets clamp to the reach limit."""
    l1, l2 = model.lengths[1], model.lengths[2]
    r = np.hypot(dx, dy)
    r = np.clip(r, abs(l1 - l2) + 1e-6, l1 + l2 - 1e-6)
    phi = np.arctan2(dx, -dy)
    cos_knee = (r * r - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    knee_mag = np.arccos(np.clip(cos_knee, -1.0, 1.0))
    gamma = np.arctan2(l2 * np.sin(knee_mag), l1 + l2 * np.cos(knee_mag))
    return phi - bend * gamma, bend * knee_mag


def _feet_x_many(model: EmbodimentModel, Q: np.ndarray) -> np.ndarray:
    U, _ = _directions(link_angles(model, Q))
    coeff = model.distal_coeff[list(model.foot_links)]
    return (Q[:, None, :2] + np.matmul(coeff[None], U))[:, :, 0]


def _torso_mid_height(model: EmbodimentModel, Q: np.ndarray) -> np.ndarray:
    U, _ = _directions(link_angles(model, Q))
    return Q[:, 1] + np.einsum("k,bky->b", model.com_coeff[0], U)


def _walk_rollout(model: EmbodimentModel, speeds: np.ndarray, total_frames: int,
                  fps: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop balance walk for a batch of commanded speeds.

    Returns the realized frames (B, total_frames, dof) and a per-frame fallen
    flag (torso midpoint below the fall threshold).  All walkers start from
    the same canonical double-support pose; callers carve windows out of the
    rollout, so gait phase diversity costs nothing extra here.
    """
    ctx = expert_context(model)
    speeds = np.asarray(speeds, dtype=float)
    B = speeds.shape[0]
    dt = 1.0 / fps
    substeps = max(1, math.ceil(dt / 1e-3))
    h = dt / substeps

    leg_freq = np.array([walk_cycle(s)[0] for s in speeds])
    stride = speeds / leg_freq
    T_swing = (1.0 - WALK_DUTY) / leg_freq
    T_stance = WALK_DUTY / leg_freq
    phase0 = np.stack([np.zeros(B), np.full(B, 0.5)], axis=1)
    root_y = ctx.settled_q[1] - WALK_ROOT_DROP

    lead = 0.5 * T_stance * speeds
    plant = lead[:, None] - stride[:, None] * phase0
    in_swing = phase0 >= WALK_DUTY
    # start with both feet statically loaded so the first frames do not bounce
    pen = model.total_mass * model.gravity / (2.0 * DEFAULT_SETTINGS.contact_stiffness)
    hip, knee = _leg_ik_many(model, plant, 0.0 - root_y)
    Q = np.zeros((B, model.dof))
    Q[:, 1] = root_y - pen
    Q[:, 3], Q[:, 4] = hip[:, 0], knee[:, 0]
    Q[:, 5], Q[:, 6] = hip[:, 1], knee[:, 1]
    Qd = np.zeros((B, model.dof))
    Qd[:, 0] = speeds

    v_est = speeds.copy()
    swing_from = plant.copy()
    frames = np.empty((B, total_frames, model.dof))
    fallen = np.zeros((B, total_frames), dtype=bool)
    fall_h = 0.3 * ctx.standing_height
    alive = np.ones(B, dtype=bool)
    alpha = h / WALK_VEL_TAU
    kp = model.kp
    kd = model.kd

    for k in range(total_frames):
        frames[:, k] = Q
        fallen[:, k] = (_torso_mid_height(model, Q) < fall_h) | ~alive
        if k == total_frames - 1:
            break
        for si in range(substeps):
            t = k * dt + si * h
            ph = t * leg_freq[:, None] + phase0
            u = ph - np.floor(ph)
            sw = u >= WALK_DUTY
            lift = sw & ~in_swing
            land = ~sw & in_swing
            if lift.any() or land.any():
                fx_now = _feet_x_many(model, Q)
                swing_from[lift] = fx_now[lift]
                plant[land] = fx_now[land]
            in_swing = sw
            s = np.clip((u - WALK_DUTY) / (1.0 - WALK_DUTY), 0.0, 1.0)
            ease = _swing_ease(s)
            t_rem = (1.0 - s) * T_swing[:, None]
            x_td = (Q[:, 0, None] + v_est[:, None] * (t_rem + 0.5 * T_stance[:, None])
                    + (WALK_PLACE_GAIN * (v_est - speeds))[:, None])
            fx = np.where(sw, swing_from + (x_td - swing_from) * ease, plant)
            fy = np.where(sw, SWING_HEIGHT * np.sin(np.pi * s) ** 2, 0.0)
            hip, knee = _leg_ik_many(model, fx - Q[:, 0, None], fy - root_y)
            targets = np.stack([hip[:, 0], knee[:, 0], hip[:, 1], knee[:, 1]], axis=1)
            corr = np.clip(WALK_PITCH_KP * Q[:, 2] + WALK_PITCH_KD * Qd[:, 2],
                           -WALK_CORR_MAX, WALK_CORR_MAX)
            targets[:, 0] += corr * ~sw[:, 0]
            targets[:, 2] += corr * ~sw[:, 1]
            tau = kp * (targets - Q[:, ROOT_DOF:]) - kd * Qd[:, ROOT_DOF:]
            Q, Qd, ok = step_many(model, Q, Qd, tau, h, active=alive)
            alive &= ok
            v_est = (1.0 - alpha) * v_est + alpha * Qd[:, 0]
    return frames, fallen


def _accept_window(window: np.ndarray, fallen: np.ndarray, speed: float,
                   duration: float) -> bool:
    if fallen.any():
        return False
    realized = (window[-1, 0] - window[0, 0]) / duration
    tol = max(WALK_SPEED_TOL[0], WALK_SPEED_TOL[1] * speed)
    return abs(realized - speed) <= tol


def walk_reference_batch(model: EmbodimentModel, speeds, phases,
                         frame_count: int = 60, fps: float = 30.0,
                         ) -> list[MotionSequence | None]:
    """Realized walk references for a batch of (speed, phase) requests.

    ``phase`` selects the preferred window offset inside the rollout (in gait
    cycles).  Each emitted window is fall-free with realized speed inside the
    tolerance band; requests with no acceptable window yield None.
    """
    speeds = np.asarray(speeds, dtype=float)
    phases = np.asarray(phases, dtype=float) % 1.0
    leg_freq = np.array([walk_cycle(s)[0] for s in speeds])
    pref = WALK_WARMUP_FRAMES + np.rint(phases / leg_freq * fps).astype(int)
    duration = (frame_count - 1) / fps
    out: list[MotionSequence | None] = [None] * speeds.shape[0]
    pending = np.arange(speeds.shape[0])
    # Retries nudge the commanded speed: the gait is chaotic enough that a few
    # cm/s of set-point shift yields a fresh trajectory when the nominal one
    # falls before producing an acceptable window.  The acceptance gate always
    # grades against the requested speed.  The last attempts drop the phase
    # preference and scan from the warmup boundary.
    for extra, jitter, honor_phase in ((_SCAN_EXTRA, 0.0, True),
                                       (_SCAN_EXTRA + 330, +0.03, True),
                                       (_SCAN_EXTRA + 810, -0.04, False),
                                       (_SCAN_EXTRA + 810, +0.06, False)):
        total = int(pref[pending].max()) + frame_count + extra
        cmd = np.clip(speeds[pending] + jitter, 0.05, None)
        frames, fallen = _walk_rollout(model, cmd, total, fps)
        still = []
        for row, b in enumerate(pending):
            first = int(pref[b]) if honor_phase else WALK_WARMUP_FRAMES
            chosen = None
            for s0 in range(first, total - frame_count + 1, _SCAN_STEP):
                win = frames[row, s0:s0 + frame_count]
                if _accept_window(win, fallen[row, s0:s0 + frame_count],
                                  float(speeds[b]), duration):
                    chosen = win.copy()
                    break
            if chosen is None:
                still.append(b)
                continue
            chosen[:, 0] -= chosen[0, 0]
            out[b] = MotionSequence(chosen, 1.0 / fps)
        if not still:
            break
        pending = np.asarray(still)
    return out


def walk_reference(model: EmbodimentModel, speed: float, frame_count: int,
                   fps: float, phase: float = 0.0) -> MotionSequence:
    seqs = walk_reference_batch(model, [speed], [phase], frame_count, fps)
    if seqs[0] is None:
        raise ExpertFailure("walk_forward",
                            f"no stable window at speed {speed:.3f}, phase {phase:.3f}")
    return seqs[0]


def stand_reference(model: EmbodimentModel, frame_count: int, fps: float) -> MotionSequence:
    ctx = expert_context(model)
    frames = np.tile(ctx.settled_q, (frame_count, 1))
    return MotionSequence(frames, 1.0 / fps)


def crouch_reference(model: EmbodimentModel, height_frac: float, frame_count: int,
                     fps: float) -> MotionSequence:
    ctx = expert_context(model)
    root_y = height_frac * ctx.standing_height
    q = _pose_from_feet(model, float(ctx.settled_q[0]), root_y, ctx.settled_feet)
    return MotionSequence(np.tile(q, (frame_count, 1)), 1.0 / fps)


def hop_reference(model: EmbodimentModel, freq: float, frame_count: int,
                  fps: float, phase: float = 0.0) -> MotionSequence:
    ctx = expert_context(model)
    dt = 1.0 / fps
    t = np.arange(frame_count) * dt
    top = ctx.settled_q[1]
    depth = HOP_DEPTH * ctx.standing_height
    root_y = top - 0.5 * depth * (1.0 - np.cos(2.0 * np.pi * (freq * t + phase)))
    frames = np.empty((frame_count, model.dof))
    for k in range(frame_count):
        frames[k] = _pose_from_feet(model, float(ctx.settled_q[0]), float(root_y[k]),
                                    ctx.settled_feet)
    return MotionSequence(frames, dt)


def expert_reference(model: EmbodimentModel, task: TaskCondition, frame_count: int = 60,
                     fps: float = 30.0, phase: float = 0.0) -> MotionSequence:
    """Reference motion for a task family at its parameter value."""
    if frame_count < 2:
        raise ContractViolation("need at least two frames")
    if task.family == "walk_forward":
        return walk_reference(model, task.param, frame_count, fps, phase)
    if task.family == "stand_still":
        return stand_reference(model, frame_count, fps)
    if task.family == "crouch_hold":
        return crouch_reference(model, task.param, frame_count, fps)
    if task.family == "hop_in_place":
        return hop_reference(model, task.param, frame_count, fps, phase)
    raise ExpertFailure(task.family, "no scripted expert for this family")
