"""Physically grounded motion generation on a planar biped.

A conditional diffusion model proposes short motions, a PD-tracking
simulator realizes them, automatic rewards rank realized candidates into
preference pairs, and preference optimization folds the physics signal back
into the generator.  `physmo.pipeline.run_experiment` is the top-level
entry; the `physmo` console script wraps it.
"""

from .config import ExperimentConfig
from .dataset import (floating_reference, load_dataset, random_spatial_condition,
                      save_dataset, synthesize_dataset)
from .diffusion import DiffusionSchedule, forward_diffuse, linear_schedule
from .dpo import (PROFILES, RoundReport, TrainHyper, dpo_loss, finetune_round,
                  iterate, profile_hyper, total_loss)
from .embodiment import (EmbodimentModel, default_biped, load_embodiment,
                         save_embodiment)
from .errors import (ContractViolation, ExpertFailure, PhysmoError,
                     SimulationDiverged, TrainingDiverged)
from .generator import (DenoiserParams, GenTrainHyper, denoise_loss,
                        load_checkpoint, sample, sample_candidates,
                        save_checkpoint, train_denoiser)
from .metrics import (MetricReport, control_err, fid_like, jerk,
                      retrieval_metrics, traj_fail_rate)
from .motion import (Condition, FAMILIES, FAMILY_ORDER, MotionSequence,
                     SpatialControl, TaskCondition, condition_vector,
                     sample_task)
from .pipeline import run_experiment
from .preferences import (PreferencePair, ScoredCandidate, build_dataset,
                          dominates, fuse_select, select_pair)
from .rewards import (EmbeddingModel, RewardVector, SlideThresholds,
                      default_embedding_model, embed_motion, r_control,
                      r_slide, r_task, r_track, reward_set, score)
from .tracking import (RealizedTrajectory, TrackerSettings, settle_standing,
                       track, track_many)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
