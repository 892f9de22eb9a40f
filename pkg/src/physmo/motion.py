"""Motion sequences and conditioning signals.

A motion is a fixed-rate sequence of generalized-coordinate frames.  A
condition is a task label (family plus one scalar parameter) with an optional
spatial constraint: per-entry targets and a 0/1 mask selecting which entries
of which frames must be matched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

# family name -> (param_lo, param_hi, param meaning)
FAMILIES: dict[str, tuple[float, float, str]] = {
    "walk_forward": (0.2, 1.0, "target speed, m/s"),
    "stand_still": (0.0, 0.0, "unused"),
    "hop_in_place": (1.0, 2.0, "hop frequency, Hz"),
    "crouch_hold": (0.6, 0.9, "height fraction of standing"),
}
FAMILY_ORDER = tuple(FAMILIES)


@dataclass
class MotionSequence:
    """(F, D) float64 frames at a fixed frame interval dt (seconds).

    ``normalized`` marks frames living in the generator's z-scored space
    rather than raw simulator units.
    """

    frames: np.ndarray
    dt: float
    normalized: bool = False

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 2:
            raise ContractViolation("frames must be (F, D) with F >= 2")
        if not np.all(np.isfinite(self.frames)):
            raise ContractViolation("frames must be finite")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ContractViolation("dt must be positive and finite")

    @property
    def frame_count(self) -> int:
        return int(self.frames.shape[0])

    @property
    def coord_count(self) -> int:
        return int(self.frames.shape[1])

    @property
    def duration(self) -> float:
        return (self.frame_count - 1) * self.dt

    def copy(self) -> "MotionSequence":
        return MotionSequence(self.frames.copy(), self.dt, self.normalized)


@dataclass(frozen=True)
class TaskCondition:
    family: str
    param: float = 0.0

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ContractViolation(f"unknown task family {self.family!r}")
        lo, hi, _ = FAMILIES[self.family]
        if not (lo <= self.param <= hi):
            raise ContractViolation(
                f"{self.family} parameter {self.param} outside [{lo}, {hi}]")


@dataclass
class SpatialControl:
    """Hard per-entry targets.  ``mask`` is 0/1 with 1 marking constrained
    entries; ``targets`` holds raw (unnormalized) coordinate values and is
    only read where the mask is set."""

    targets: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.targets.shape != self.mask.shape or self.targets.ndim != 2:
            raise ContractViolation("targets and mask must be equal-shape (F, D)")
        if not np.all((self.mask == 0.0) | (self.mask == 1.0)):
            raise ContractViolation("mask entries must be 0 or 1")
        if not self.mask.any():
            raise ContractViolation("mask must select at least one entry")
        if not np.all(np.isfinite(self.targets[self.mask == 1.0])):
            raise ContractViolation("masked targets must be finite")

    @property
    def active_count(self) -> int:
        return int(self.mask.sum())


@dataclass
class Condition:
    task: TaskCondition
    spatial: SpatialControl | None = None

    @property
    def has_spatial(self) -> bool:
        return self.spatial is not None


def condition_vector(cond: Condition | TaskCondition) -> np.ndarray:
    """Dense conditioning input: one-hot family plus min-max scaled parameter."""
    task = cond.task if isinstance(cond, Condition) else cond
    vec = np.zeros(len(FAMILY_ORDER) + 1)
    idx = FAMILY_ORDER.index(task.family)
    vec[idx] = 1.0
    lo, hi, _ = FAMILIES[task.family]
    vec[-1] = 0.0 if hi == lo else (task.param - lo) / (hi - lo)
    return vec


CONDITION_DIM = len(FAMILY_ORDER) + 1


def sample_task(family: str, rng: np.random.Generator) -> TaskCondition:
    lo, hi, _ = FAMILIES[family]
    param = lo if hi == lo else float(rng.uniform(lo, hi))
    return TaskCondition(family, param)
