"""PD trajectory tracking through the simulator.

``track`` replays a kinematic reference through physics: joints are servoed
toward the reference joint angles with torque-limited PD control while the
root stays unactuated, so root motion must be earned through contact forces.
The realized rollout is returned together with per-foot ground interaction
summaries used by the reward layer.

``track_many`` advances a whole batch of equal-length references in lockstep
through the vectorized simulator; ``track`` is its B = 1 case.  Candidate
scoring and evaluation loops lean on the batched path heavily.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embodiment import ROOT_DOF, EmbodimentModel
from .errors import ContractViolation
from .motion import MotionSequence
from .simulator import (DEFAULT_SETTINGS, SimSettings, SimState, _directions,
                        link_angles, normal_forces_many, step, step_many)


@dataclass
class TrackerSettings:
    substep_length: float = 1.0e-3   # nominal; actual length divides dt exactly
    contact_height: float = 0.05     # m, foot counted near ground below this
    contact_force_min: float = 1.0   # N, normal force for a contact flag
    fall_height_frac: float = 0.3    # of standing height, torso midpoint
    fall_frames: int = 3             # consecutive frames below the line
    guard_coord: float = 1.0e3       # |q| beyond this counts as divergence
    guard_rate: float = 1.0e4        # |qdot| beyond this counts as divergence


DEFAULT_TRACKER = TrackerSettings()


@dataclass
class RealizedTrajectory:
    """Physics rollout aligned frame-for-frame with its reference.

    ``foot_speeds_xy`` is the absolute ground-plane (horizontal) speed of each
    foot point, from central differences at the frame rate; endpoints use
    one-sided differences.  ``contact_flags`` marks frames where a foot is
    both near the ground and actually loaded.  On divergence the remaining
    frames repeat the last finite state and ``fell`` is set.
    """

    frames: np.ndarray          # (F, D)
    foot_heights: np.ndarray    # (F, n_feet)
    foot_speeds_xy: np.ndarray  # (F, n_feet)
    contact_flags: np.ndarray   # (F, n_feet) bool
    fell: bool
    dt: float

    @property
    def frame_count(self) -> int:
        return int(self.frames.shape[0])

    def as_motion(self) -> MotionSequence:
        return MotionSequence(self.frames.copy(), self.dt)


def _horizontal_speed(x: np.ndarray, dt: float) -> np.ndarray:
    """|dx/dt| along axis 0: central differences inside, one-sided at ends."""
    v = np.empty_like(x)
    v[1:-1] = (x[2:] - x[:-2]) / (2.0 * dt)
    v[0] = (x[1] - x[0]) / dt
    v[-1] = (x[-1] - x[-2]) / dt
    return np.abs(v)


def _foot_positions_many(model: EmbodimentModel, Q: np.ndarray) -> np.ndarray:
    """(B, n_feet, 2) foot points for a batch of configurations."""
    U, _ = _directions(link_angles(model, Q))
    return Q[:, None, :2] + np.matmul(model.distal_coeff[list(model.foot_links)][None], U)


def track_many(model: EmbodimentModel, references: list[MotionSequence],
               tracker: TrackerSettings = DEFAULT_TRACKER,
               sim: SimSettings = DEFAULT_SETTINGS) -> list[RealizedTrajectory]:
    """Track several same-shape references in one batched rollout."""
    if not references:
        return []
    F = references[0].frame_count
    dt = references[0].dt
    for r in references:
        if r.coord_count != model.dof:
            raise ContractViolation(
                f"reference has {r.coord_count} coords, model wants {model.dof}")
        if r.frame_count != F or r.dt != dt:
            raise ContractViolation("batched references must share length and dt")
    refs = np.stack([r.frames for r in references])      # (B, F, D)
    B = refs.shape[0]
    substeps = max(1, math.ceil(dt / tracker.substep_length))
    h = dt / substeps

    Q = refs[:, 0].copy()
    Qd = (refs[:, 1] - refs[:, 0]) / dt
    active = np.ones(B, dtype=bool)

    n_feet = len(model.foot_links)
    frames = np.empty((B, F, model.dof))
    foot_pos = np.empty((B, F, n_feet, 2))
    normal = np.empty((B, F, n_feet))

    frames[:, 0] = Q
    foot_pos[:, 0] = _foot_positions_many(model, Q)
    normal[:, 0] = normal_forces_many(model, Q, Qd, sim)

    for k in range(1, F):
        if active.any():
            target = refs[:, k, ROOT_DOF:]
            for _ in range(substeps):
                tau = model.kp * (target - Q[:, ROOT_DOF:]) - model.kd * Qd[:, ROOT_DOF:]
                Q, Qd, ok = step_many(model, Q, Qd, tau, h, sim, active=active)
                active &= ok
            guard = (np.abs(Q).max(axis=1) > tracker.guard_coord) | \
                (np.abs(Qd).max(axis=1) > tracker.guard_rate)
            active &= ~guard
        frames[:, k] = np.where(active[:, None], Q, frames[:, k - 1])
        Q = frames[:, k].copy()
        Qd[~active] = 0.0
        foot_pos[:, k] = _foot_positions_many(model, Q)
        normal[:, k] = normal_forces_many(model, Q, Qd, sim)

    heights = foot_pos[..., 1]                            # (B, F, nf)
    speeds = np.abs(np.empty_like(foot_pos[..., 0]))
    for b in range(B):
        for f in range(n_feet):
            speeds[b, :, f] = _horizontal_speed(foot_pos[b, :, f, 0], dt)
    contact = (heights < tracker.contact_height) & (normal > tracker.contact_force_min)
    fell = ~active | _fell_many(model, frames, tracker)

    return [RealizedTrajectory(frames=frames[b], foot_heights=heights[b],
                               foot_speeds_xy=speeds[b], contact_flags=contact[b],
                               fell=bool(fell[b]), dt=dt)
            for b in range(B)]


def track(model: EmbodimentModel, reference: MotionSequence,
          tracker: TrackerSettings = DEFAULT_TRACKER,
          sim: SimSettings = DEFAULT_SETTINGS) -> RealizedTrajectory:
    """Track one reference motion with PD control.

    The initial state copies reference frame 0 with velocities from a forward
    difference of the first two frames.  If the integrator diverges the state
    freezes at the last finite frame and the rollout is flagged as fallen;
    the call itself never raises for divergence.
    """
    return track_many(model, [reference], tracker, sim)[0]


def _fell_many(model: EmbodimentModel, frames: np.ndarray,
               tracker: TrackerSettings) -> np.ndarray:
    """Torso midpoint below a fraction of standing height for several
    consecutive frames, per batch row."""
    coeff = model.com_coeff[0]
    alpha = frames @ model.angle_matrix.T + model.angle_offsets  # (B, F, L)
    torso_y = frames[..., 1] - (np.cos(alpha) * coeff).sum(axis=-1)
    below = torso_y < tracker.fall_height_frac * model.standing_height()
    B, F = below.shape
    run = np.zeros(B, dtype=int)
    fell = np.zeros(B, dtype=bool)
    for k in range(F):
        run = (run + 1) * below[:, k]
        fell |= run >= tracker.fall_frames
    return fell


def kinematic_realized(model: EmbodimentModel, seq: MotionSequence,
                       contact_height: float = 0.02) -> RealizedTrajectory:
    """Adapt a recorded motion into trajectory form without re-simulating.

    Foot channels are reconstructed from the frames alone; with no force
    data, a foot counts as in contact purely by clearance, so the threshold
    is tighter than the tracker's loaded-contact test.
    """
    frames = seq.frames
    foot_pos = np.stack([_foot_positions_many(model, frames[k:k + 1])[0]
                         for k in range(seq.frame_count)])
    heights = foot_pos[..., 1]
    speeds = np.empty_like(heights)
    for f in range(heights.shape[1]):
        speeds[:, f] = _horizontal_speed(foot_pos[:, f, 0], seq.dt)
    return RealizedTrajectory(frames=frames.copy(), foot_heights=heights,
                              foot_speeds_xy=speeds,
                              contact_flags=heights < contact_height,
                              fell=False, dt=seq.dt)


def settle_standing(model: EmbodimentModel, duration: float = 2.0,
                    substep_length: float = 1.0e-3,
                    sim: SimSettings = DEFAULT_SETTINGS) -> SimState:
    """Simulate PD-holding the nominal pose until the stance reaches static
    equilibrium (feet loaded, joints sagged against gravity).

    The returned state is the canonical "standing at rest" configuration used
    by stationary references; starting rollouts from it avoids the impact
    transient of dropping an unloaded model onto the penalty ground.
    """
    q0 = model.nominal_state()
    q0[1] -= model.total_mass * model.gravity / \
        (len(model.foot_links) * sim.contact_stiffness)
    state = SimState(q0, np.zeros(model.dof))
    steps = int(round(duration / substep_length))
    for _ in range(steps):
        tau = model.kp * (model.nominal_pose - state.q[ROOT_DOF:]) \
            - model.kd * state.qdot[ROOT_DOF:]
        state = step(model, state, tau, substep_length, sim)
    state.t = 0.0
    return state


# -- CSV export ---------------------------------------------------------------------


def _foot_labels(n_feet: int) -> list[str]:
    if n_feet == 2:
        return ["footL", "footR"]
    return [f"foot{i}" for i in range(n_feet)]


def trajectory_csv(traj: RealizedTrajectory) -> str:
    """Render the rollout as CSV with a fixed, documented column order."""
    F, D = traj.frames.shape
    n_feet = traj.foot_heights.shape[1]
    labels = _foot_labels(n_feet)
    cols = ["frame", "time"] + [f"q{i}" for i in range(D)]
    for lab in labels:
        cols += [f"{lab}_h", f"{lab}_vxy"]
    cols += [f"contact{lab[-1]}" if n_feet == 2 else f"contact{i}"
             for i, lab in enumerate(labels)]
    cols.append("fell")
    lines = [",".join(cols)]
    for k in range(F):
        row = [str(k), repr(float(k * traj.dt))]
        row += [repr(float(v)) for v in traj.frames[k]]
        for f in range(n_feet):
            row += [repr(float(traj.foot_heights[k, f])),
                    repr(float(traj.foot_speeds_xy[k, f]))]
        row += [str(int(traj.contact_flags[k, f])) for f in range(n_feet)]
        row.append(str(int(traj.fell)))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def save_trajectory_csv(traj: RealizedTrajectory, path) -> None:
    from pathlib import Path

    Path(path).write_text(trajectory_csv(traj))


def trajectory_from_rows(header: list[str], rows: list[list[str]],
                         dt: float | None = None) -> RealizedTrajectory:
    """Rebuild a rollout from parsed CSV cells (the inverse of trajectory_csv).

    The column order is inferred from the header, so files with extra leading
    columns stripped off beforehand parse unchanged.  dt defaults to the
    spacing of the time column.
    """
    col = {name: i for i, name in enumerate(header)}
    if dt is None:
        if len(rows) < 2:
            raise ContractViolation("cannot infer dt from a single row")
        dt = float(rows[1][col["time"]]) - float(rows[0][col["time"]])
    D = sum(name.startswith("q") and name[1:].isdigit() for name in header)
    feet = sorted(name[:-2] for name in header if name.endswith("_h"))
    if D == 0 or not feet:
        raise ContractViolation("trajectory CSV is missing q or foot columns")
    grab = lambda names: np.array([[float(r[col[n]]) for n in names]
                                   for r in rows])
    frames = grab([f"q{i}" for i in range(D)])
    heights = grab([f"{lab}_h" for lab in feet])
    speeds = grab([f"{lab}_vxy" for lab in feet])
    contact_names = [n for n in header if n.startswith("contact")]
    contacts = grab(contact_names).astype(bool)
    fell = bool(float(rows[-1][col["fell"]]))
    return RealizedTrajectory(frames, heights, speeds, contacts, fell, dt)
