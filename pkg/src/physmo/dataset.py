"""Synthetic training corpus: expert references run through the simulator.

Every emitted motion is a *recording of a physics rollout* — stationary
families are tracked expert targets, walking is the balance controller's own
stable windows — so the corpus is feasible by construction.  A re-tracking
feasibility filter with per-family distortion ceilings guards the property;
spatial-control variants mask random coordinates/frames of emitted motions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .embodiment import ROOT_DOF, EmbodimentModel
from .errors import ContractViolation, ExpertFailure
from .experts import expert_reference, walk_reference_batch
from .motion import (FAMILIES, FAMILY_ORDER, Condition, MotionSequence,
                     SpatialControl, TaskCondition, sample_task)
from .records import (condition_fields, condition_from_fields, read_records,
                      write_records)
from .tracking import track_many

# Re-track distortion ceilings.  Stationary families reproduce themselves
# almost exactly; dynamic recordings are bounded loosely — their guarantee of
# feasibility is that they are simulator output in the first place.
DEFAULT_CEILINGS: dict[str, float] = {
    "stand_still": 0.05,
    "crouch_hold": 0.6,
    "hop_in_place": 2.2,
    "walk_forward": 2000.0,
}

_DATA_MAGIC = b"PMDATA01"


@dataclass
class SynthRecord:
    motion: MotionSequence
    condition: Condition
    retrack_delta: float


def synthesize_family(model: EmbodimentModel, family: str, n: int,
                      rng: np.random.Generator, frame_count: int = 60,
                      fps: float = 30.0, ceiling: float | None = None,
                      batch_cap: int = 64) -> list[SynthRecord]:
    """n feasible recordings of one family; raises ExpertFailure if the
    expert cannot fill the quota."""
    if family not in FAMILIES:
        raise ContractViolation(f"unknown family {family!r}")
    if ceiling is None:
        ceiling = DEFAULT_CEILINGS[family]
    records: list[SynthRecord] = []
    attempted = 0
    while len(records) < n:
        need = min(batch_cap, n - len(records))
        attempted += need
        if attempted > 6 * n + 64:
            raise ExpertFailure(family, f"only {len(records)} of {n} draws "
                                        f"passed feasibility")
        if family == "walk_forward":
            lo, hi, _ = FAMILIES[family]
            speeds = rng.uniform(lo, hi, need)
            phases = rng.uniform(0.0, 1.0, need)
            refs = walk_reference_batch(model, speeds, phases, frame_count, fps)
            emitted = [(m, TaskCondition(family, float(s)))
                       for m, s in zip(refs, speeds) if m is not None]
        else:
            tasks = [sample_task(family, rng) for _ in range(need)]
            refs = [expert_reference(model, t, frame_count, fps) for t in tasks]
            rolled = track_many(model, refs)
            emitted = [(MotionSequence(r.frames.copy(), 1.0 / fps), t)
                       for r, t in zip(rolled, tasks) if not r.fell]
        if not emitted:
            continue
        re_rolled = track_many(model, [m for m, _ in emitted])
        for (motion, task), again in zip(emitted, re_rolled):
            delta = float(np.sum((again.frames - motion.frames) ** 2))
            if delta <= ceiling and len(records) < n:
                records.append(SynthRecord(motion, Condition(task), delta))
    return records


def synthesize_dataset(model: EmbodimentModel, n_per_family: int = 200,
                       seed: int = 0, frame_count: int = 60, fps: float = 30.0,
                       ceilings: Mapping[str, float] = DEFAULT_CEILINGS,
                       families: Sequence[str] = FAMILY_ORDER,
                       ) -> list[SynthRecord]:
    """The full corpus, family-ordered, deterministic in the seed."""
    rng = np.random.default_rng(seed)
    records: list[SynthRecord] = []
    for family in families:
        records.extend(synthesize_family(
            model, family, n_per_family, rng, frame_count, fps,
            ceilings.get(family, DEFAULT_CEILINGS[family])))
    return records


def floating_reference(model: EmbodimentModel, frame_count: int = 60,
                       fps: float = 30.0) -> MotionSequence:
    """An infeasible diagnostic motion: root held one meter above the ground
    with the legs dangling in the nominal pose.  Physics cannot reproduce
    the hover, so its tracking distortion exceeds any recorded rollout's."""
    q = np.zeros(model.dof)
    q[1] = 1.0
    q[ROOT_DOF:] = model.nominal_pose
    return MotionSequence(np.tile(q, (frame_count, 1)), 1.0 / fps)


def random_spatial_condition(motion: MotionSequence, task: TaskCondition,
                             rng: np.random.Generator) -> Condition:
    """Mask a uniform number of coordinates on a uniform number of frames of
    a ground-truth motion (the cross-control protocol)."""
    f, d = motion.frames.shape
    n_coords = int(rng.integers(1, d + 1))
    n_frames = int(rng.integers(1, f + 1))
    coords = rng.choice(d, size=n_coords, replace=False)
    frames = rng.choice(f, size=n_frames, replace=False)
    mask = np.zeros((f, d))
    mask[np.ix_(frames, coords)] = 1.0
    return Condition(task, SpatialControl(motion.frames.copy(), mask))


def save_dataset(path, records: Sequence[SynthRecord]) -> None:
    rows = []
    for rec in records:
        header, arrays = condition_fields(rec.condition)
        header.update(dt=rec.motion.dt, retrack_delta=rec.retrack_delta)
        rows.append((header, [rec.motion.frames, *arrays]))
    write_records(path, _DATA_MAGIC, rows)


def load_dataset(path) -> list[SynthRecord]:
    records = []
    for header, arrays in read_records(path, _DATA_MAGIC):
        motion = MotionSequence(arrays[0], header["dt"])
        condition = condition_from_fields(header, arrays[1:])
        records.append(SynthRecord(motion, condition, header["retrack_delta"]))
    return records


def as_training_set(records: Sequence[SynthRecord],
                    ) -> list[tuple[MotionSequence, Condition]]:
    return [(rec.motion, rec.condition) for rec in records]
