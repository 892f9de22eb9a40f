"""Physics and task rewards on realized trajectories.

All rewards read the post-tracking trajectory X' (never the kinematic
candidate alone): tracking error against the candidate, foot micro-sliding,
task adherence via a deterministic motion embedding, and masked
spatial-control error.  Larger is always better; track/slide/control are
penalties with maximum 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embodiment import ROOT_DOF, EmbodimentModel
from .errors import ContractViolation
from .motion import Condition, MotionSequence, SpatialControl, TaskCondition
from .tracking import RealizedTrajectory

REWARD_NAMES = ("track", "slide", "task", "control")


@dataclass(frozen=True)
class SlideThresholds:
    """A foot below h0 moving faster than v0 horizontally counts as sliding."""

    h0: float = 0.05   # m
    v0: float = 0.50   # m/s


DEFAULT_THRESHOLDS = SlideThresholds()


@dataclass(frozen=True)
class RewardVector:
    """One candidate's scores; ``control`` present iff the condition carried
    a spatial constraint."""

    track: float
    slide: float
    task: float
    control: float | None = None

    def __post_init__(self) -> None:
        if not (self.track <= 0.0 and np.isfinite(self.track)):
            raise ContractViolation("track reward must be finite and <= 0")
        if not (-1.0 <= self.slide <= 0.0):
            raise ContractViolation("slide reward must lie in [-1, 0]")
        if not (-1.0 - 1e-9 <= self.task <= 1.0 + 1e-9):
            raise ContractViolation("task reward must lie in [-1, 1]")
        object.__setattr__(self, "task", float(np.clip(self.task, -1.0, 1.0)))
        if self.control is not None and not (self.control <= 0.0
                                             and np.isfinite(self.control)):
            raise ContractViolation("control reward must be finite and <= 0")

    def value(self, name: str) -> float:
        if name not in REWARD_NAMES:
            raise ContractViolation(f"unknown reward {name!r}")
        v = getattr(self, name)
        if v is None:
            raise ContractViolation(f"reward {name!r} absent from this vector")
        return float(v)

    def values(self, names: tuple[str, ...]) -> np.ndarray:
        return np.array([self.value(n) for n in names])


def reward_set(condition: Condition) -> tuple[str, ...]:
    """Which rewards apply: control joins the set only under spatial control."""
    return REWARD_NAMES if condition.has_spatial else REWARD_NAMES[:3]


def r_track(reference: MotionSequence, realized: RealizedTrajectory) -> float:
    """Negated tracking distortion: -sum of squared entry differences."""
    if realized.frames.shape != reference.frames.shape:
        raise ContractViolation("realized and reference shapes differ")
    diff = realized.frames - reference.frames
    return -float(np.sum(diff * diff))


def tracking_distortion(reference: MotionSequence,
                        realized: RealizedTrajectory) -> float:
    """The raw distortion Delta = ||X' - X||^2 (non-negative)."""
    return -r_track(reference, realized)


def r_slide(realized: RealizedTrajectory,
            thresholds: SlideThresholds = DEFAULT_THRESHOLDS) -> float:
    """Fraction of frames where any foot is both near the ground and moving.

    Per-frame indicator is the OR over feet; the value times -F is an integer.
    """
    sliding = (realized.foot_heights < thresholds.h0) & \
        (realized.foot_speeds_xy > thresholds.v0)
    return -float(np.mean(np.any(sliding, axis=1)))


# -- motion embedding ---------------------------------------------------------------

FEATURE_NAMES = ("root_vx_mean", "root_height_mean", "root_height_std",
                 "joint_freq", "joint_amp", "duty_left", "duty_right",
                 "root_pitch_mean")

# Oscillations smaller than this (radians) do not define a meaningful
# dominant frequency; the feature reports 0 instead of a noise-peak bin.
_FREQ_AMP_GATE = 0.01


def raw_motion_features(realized: RealizedTrajectory) -> np.ndarray:
    """The eight features in physical units, before any normalization."""
    if realized.frame_count < 8:
        raise ContractViolation("embedding needs at least 8 frames")
    q = realized.frames
    f = realized.frame_count
    span = (f - 1) * realized.dt
    vx = (q[-1, 0] - q[0, 0]) / span

    joints = q[:, ROOT_DOF:]
    amp = float(np.mean((joints.max(axis=0) - joints.min(axis=0)) / 2.0))
    if amp < _FREQ_AMP_GATE:
        freq = 0.0
    else:
        mags = np.abs(np.fft.rfft(joints - joints.mean(axis=0), axis=0)).sum(axis=1)
        peak = 1 + int(np.argmax(mags[1:]))
        freq = peak / (f * realized.dt)

    duty = realized.contact_flags.mean(axis=0)
    return np.array([vx, q[:, 1].mean(), q[:, 1].std(), freq, amp,
                     duty[0], duty[1], q[:, 2].mean()])


@dataclass(frozen=True)
class EmbeddingModel:
    """Deterministic 8-dim motion/condition embedding space.

    ``lo``/``hi`` map each raw feature affinely onto [-1, 1]; symmetric
    ranges (lo = -hi) keep sign-symmetric features odd under time reversal.
    Templates are the expected raw features of each task family, pushed
    through the same normalization.
    """

    standing_height: float
    lo: np.ndarray = field(default=None)
    hi: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        h = self.standing_height
        if self.lo is None:
            object.__setattr__(self, "lo", np.array(
                [-1.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.6]))
        if self.hi is None:
            object.__setattr__(self, "hi", np.array(
                [1.5, 1.2 * h, 0.08, 3.0, 0.8, 1.0, 1.0, 0.6]))
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != (len(FEATURE_NAMES),) or hi.shape != lo.shape:
            raise ContractViolation("one (lo, hi) pair per feature required")
        if np.any(hi <= lo):
            raise ContractViolation("feature ranges must have hi > lo")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        return 2.0 * (raw - self.lo) / (self.hi - self.lo) - 1.0

    def template(self, task: TaskCondition) -> np.ndarray:
        """Expected raw features of the family, in normalized space.

        The laws are calibrated against tracked rollouts of the scripted
        experts (hops keep the feet loaded, so their duty factors stay 1).
        """
        h = self.standing_height
        if task.family == "walk_forward":
            v = task.param
            raw = [v, h - 0.042, 0.012, 0.5 * (1.4 + 0.8 * v),
                   0.15 + 0.35 * v, 0.82, 0.82, 0.035]
        elif task.family == "stand_still":
            raw = [0.0, h - 0.004, 0.0005, 0.0, 0.002, 1.0, 1.0, 0.0]
        elif task.family == "hop_in_place":
            raw = [0.0, h - 0.043, 0.027, task.param, 0.30, 1.0, 1.0, 0.0]
        elif task.family == "crouch_hold":
            raw = [0.0, task.param * h - 0.01, 0.0015, 0.5, 0.013, 1.0, 1.0, 0.0]
        else:
            raise ContractViolation(f"no template for family {task.family!r}")
        return self.normalize(np.array(raw))


def default_embedding_model(model: EmbodimentModel) -> EmbeddingModel:
    return EmbeddingModel(standing_height=model.standing_height())


def embed_motion(realized: RealizedTrajectory, em: EmbeddingModel) -> np.ndarray:
    return em.normalize(raw_motion_features(realized))


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ContractViolation("cosine undefined for a zero-norm embedding")
    return float(np.dot(a, b) / (na * nb))


def r_task(realized: RealizedTrajectory, task: TaskCondition,
           em: EmbeddingModel) -> float:
    return _cosine(em.template(task), embed_motion(realized, em))


def masked_mse(frames: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> float:
    """||W (x - c)||^2 / ||W||_1; the shared control-error kernel."""
    if frames.shape != targets.shape or frames.shape != mask.shape:
        raise ContractViolation("frames, targets, and mask shapes differ")
    total = float(mask.sum())
    if total == 0.0:
        raise ContractViolation("control error needs a non-empty mask")
    diff = np.where(mask == 1.0, frames - targets, 0.0)
    return float(np.sum(diff * diff)) / total


def r_control(realized: RealizedTrajectory, cs: SpatialControl) -> float:
    return -masked_mse(realized.frames, cs.targets, cs.mask)


def score(reference: MotionSequence, realized: RealizedTrajectory,
          condition: Condition, em: EmbeddingModel,
          thresholds: SlideThresholds = DEFAULT_THRESHOLDS) -> RewardVector:
    """Assemble the applicable rewards for one candidate."""
    control = r_control(realized, condition.spatial) \
        if condition.has_spatial else None
    return RewardVector(track=r_track(reference, realized),
                        slide=r_slide(realized, thresholds),
                        task=r_task(realized, condition.task, em),
                        control=control)
