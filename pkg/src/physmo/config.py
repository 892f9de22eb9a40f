"""Experiment configuration: one JSON-serializable object that pins every
tunable the pipeline reads.  Serialization is lossless — floats survive via
repr-exact JSON — and the resolved config is echoed into each run directory.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .dataset import DEFAULT_CEILINGS
from .dpo import PROFILES, TrainHyper
from .embodiment import EmbodimentModel, load_embodiment
from .errors import ContractViolation
from .generator import GenTrainHyper
from .motion import FAMILIES, FAMILY_ORDER
from .rewards import EmbeddingModel, SlideThresholds, default_embedding_model


@dataclass
class ExperimentConfig:
    # embodiment + data
    embodiment_path: str | None = None          # None -> packaged biped5.cfg
    families: tuple[str, ...] = FAMILY_ORDER
    n_per_family: int = 200
    frame_count: int = 60
    fps: float = 30.0
    ceilings: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_CEILINGS))
    # diffusion + generator pre-training
    schedule_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    gen: GenTrainHyper = field(default_factory=GenTrainHyper)
    # rewards
    slide_h0: float = 0.05
    slide_v0: float = 0.50
    feature_lo: tuple[float, ...] | None = None  # None -> embodiment defaults
    feature_hi: tuple[float, ...] | None = None
    # preference building + post-training
    k: int = 12
    mode: str = "dominance"                      # dominance | fuse
    profile: str = "spatial"                     # text | spatial
    train: TrainHyper = field(default_factory=lambda: TrainHyper(**PROFILES["spatial"]))
    data_fraction: float = 1.0
    ref_mode: str = "refresh"                    # refresh | fixed
    spatial_fraction: float = 0.5
    train_conditions: int = 64
    # evaluation
    eval_conditions: int = 64
    fail_threshold: float = 0.5
    # orchestration
    output_dir: str = "runs/default"
    master_seed: int = 0

    def __post_init__(self) -> None:
        for fam in self.families:
            if fam not in FAMILIES:
                raise ContractViolation(f"unknown task family {fam!r}")
        if self.mode not in ("dominance", "fuse"):
            raise ContractViolation(f"unknown selection mode {self.mode!r}")
        if self.profile not in PROFILES:
            raise ContractViolation(f"unknown profile {self.profile!r}")
        if self.ref_mode not in ("refresh", "fixed"):
            raise ContractViolation(f"unknown ref_mode {self.ref_mode!r}")
        if not (0.0 < self.data_fraction <= 1.0):
            raise ContractViolation("data_fraction must be in (0, 1]")
        if not (0.0 <= self.spatial_fraction <= 1.0):
            raise ContractViolation("spatial_fraction must be in [0, 1]")
        if self.k < 2:
            raise ContractViolation("K must be at least 2")
        if self.embodiment_path is not None and \
                not Path(self.embodiment_path).exists():
            raise ContractViolation(
                f"embodiment file {self.embodiment_path!r} does not exist")
        self.families = tuple(self.families)

    # -- derived objects ------------------------------------------------------------

    def load_model(self) -> EmbodimentModel:
        if self.embodiment_path is not None:
            return load_embodiment(self.embodiment_path)
        ref = resources.files("physmo.data").joinpath("biped5.cfg")
        with resources.as_file(ref) as path:
            return load_embodiment(path)

    def thresholds(self) -> SlideThresholds:
        return SlideThresholds(h0=self.slide_h0, v0=self.slide_v0)

    def embedding_model(self, model: EmbodimentModel) -> EmbeddingModel:
        import numpy as np
        lo = None if self.feature_lo is None else np.array(self.feature_lo)
        hi = None if self.feature_hi is None else np.array(self.feature_hi)
        return EmbeddingModel(standing_height=model.standing_height(),
                              lo=lo, hi=hi)

    def schedule(self):
        from .diffusion import linear_schedule
        return linear_schedule(self.schedule_steps, self.beta_start,
                               self.beta_end)

    # -- serialization --------------------------------------------------------------

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["families"] = list(self.families)
        for key in ("feature_lo", "feature_hi"):
            if out[key] is not None:
                out[key] = list(out[key])
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ContractViolation(f"unknown config keys: {sorted(unknown)}")
        if "gen" in data and isinstance(data["gen"], dict):
            data["gen"] = GenTrainHyper(**data["gen"])
        if "train" in data and isinstance(data["train"], dict):
            data["train"] = TrainHyper(**data["train"])
        elif "train" not in data and data.get("profile") in PROFILES:
            # an explicit profile with no explicit hyper pins the profile's defaults
            data["train"] = TrainHyper(**PROFILES[data["profile"]])
        for key in ("families", "feature_lo", "feature_hi"):
            if key in data and data[key] is not None:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())
