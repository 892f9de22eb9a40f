from __future__ import annotations

import numpy as np
import pytest

from physmo.denoiser import ArchSpec, init_theta
from physmo.embodiment import default_biped
from physmo.generator import (DenoiserParams, NormStats, compute_norm_stats,
                              normalize_motion)
from physmo.motion import Condition, FAMILIES, FAMILY_ORDER, MotionSequence, TaskCondition


@pytest.fixture(scope="session")
def model():
    return default_biped()


def make_task(i: int, rng: np.random.Generator) -> TaskCondition:
    family = FAMILY_ORDER[i % len(FAMILY_ORDER)]
    lo, hi, _ = FAMILIES[family]
    param = lo if hi == lo else float(rng.uniform(lo, hi))
    return TaskCondition(family, param)


def toy_dataset(n: int = 120, frames: int = 12, coords: int = 7,
                seed: int = 0) -> list[tuple[MotionSequence, Condition]]:
    """Synthetic raw-unit sequences spanning all families; no physics."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        base = rng.standard_normal(coords) * 0.2
        wiggle = 0.1 * np.sin(np.linspace(0, 2 * np.pi, frames))[:, None]
        frames_arr = base + wiggle * rng.standard_normal(coords)
        out.append((MotionSequence(frames_arr, 1.0 / 30.0),
                    Condition(make_task(i, rng))))
    return out


@pytest.fixture(scope="session")
def tiny_arch():
    return ArchSpec(frames=12, coords=7, time_embed=8, cond_embed=4,
                    hidden=(24, 24))


@pytest.fixture(scope="session")
def tiny_setup(tiny_arch):
    """(params, normalized dataset) for a small random-weight denoiser."""
    data = toy_dataset(frames=tiny_arch.frames, coords=tiny_arch.coords)
    norm = compute_norm_stats(data)
    rng = np.random.default_rng(7)
    params = DenoiserParams(init_theta(tiny_arch, rng), tiny_arch, norm)
    normalized = [(normalize_motion(m, norm), c) for m, c in data]
    return params, normalized


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory):
    """(config, run_dir, config_path): one small but complete experiment,
    shared by the pipeline, CLI, and export tests."""
    from physmo.config import ExperimentConfig
    from physmo.dpo import TrainHyper
    from physmo.generator import GenTrainHyper
    from physmo.pipeline import run_experiment

    root = tmp_path_factory.mktemp("pipeline")
    cfg = ExperimentConfig(
        families=("stand_still", "crouch_hold"),
        n_per_family=50, frame_count=30,
        gen=GenTrainHyper(steps=300, warmup_steps=30),
        k=8, train_conditions=6, eval_conditions=10,
        train=TrainHyper(steps=60, warmup_steps=10, batch_size=8, rounds=1),
        output_dir=str(root / "run"), master_seed=123)
    cfg_path = root / "config.json"
    cfg.save(cfg_path)
    run_dir = run_experiment(cfg, with_sft=False)
    return cfg, run_dir, cfg_path
