"""Conditional diffusion generator over motion windows.

Ties together the schedule, the noise-prediction net, per-coordinate
normalization, training, ancestral sampling with spatial inpainting, and a
byte-stable checkpoint container.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .denoiser import (AdamW, ArchSpec, backward, forward, init_theta,
                       param_count)
from .diffusion import DiffusionSchedule, forward_diffuse, linear_schedule
from .errors import ContractViolation, PhysmoError, TrainingDiverged
from .motion import Condition, MotionSequence, TaskCondition, condition_vector

DEFAULT_SCHEDULE = linear_schedule()

# Coordinates with no variation in the data (e.g. stand-still roots) get this
# floor so normalization stays invertible.
STD_FLOOR = 1e-3


@dataclass(frozen=True)
class NormStats:
    """Per-coordinate mean/std of the training motions."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.ndim != 1 or mean.shape != std.shape:
            raise ContractViolation("mean and std must be equal-length vectors")
        if not np.all(std > 0.0):
            raise ContractViolation("std entries must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)


def compute_norm_stats(dataset: list[tuple[MotionSequence, Condition]]) -> NormStats:
    stacked = np.concatenate([seq.frames for seq, _ in dataset], axis=0)
    return NormStats(stacked.mean(axis=0),
                     np.maximum(stacked.std(axis=0), STD_FLOOR))


def normalize_frames(frames: np.ndarray, norm: NormStats) -> np.ndarray:
    return (frames - norm.mean) / norm.std


def denormalize_frames(frames: np.ndarray, norm: NormStats) -> np.ndarray:
    return frames * norm.std + norm.mean


def normalize_motion(seq: MotionSequence, norm: NormStats) -> MotionSequence:
    if seq.normalized:
        raise ContractViolation("sequence is already normalized")
    return MotionSequence(normalize_frames(seq.frames, norm), seq.dt, True)


def denormalize_motion(seq: MotionSequence, norm: NormStats) -> MotionSequence:
    if not seq.normalized:
        raise ContractViolation("sequence is not normalized")
    return MotionSequence(denormalize_frames(seq.frames, norm), seq.dt, False)


@dataclass
class DenoiserParams:
    """Flat parameter vector + architecture + data normalization."""

    theta: np.ndarray
    arch: ArchSpec
    norm: NormStats
    frame_dt: float = 1.0 / 30.0

    def __post_init__(self) -> None:
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (param_count(self.arch),):
            raise ContractViolation("parameter count does not match architecture")
        if self.norm.mean.size != self.arch.coords:
            raise ContractViolation("normalization stats must have one entry "
                                    "per coordinate")

    def copy(self) -> "DenoiserParams":
        return replace(self, theta=self.theta.copy())


@dataclass(frozen=True)
class GenTrainHyper:
    steps: int = 20_000
    learning_rate: float = 3e-4
    batch_size: int = 32
    seed: int = 0
    warmup_steps: int = 500
    weight_decay: float = 1e-4
    # -1 anneals the learning rate to zero over the post-warmup steps;
    # 0 keeps it constant.
    decay_steps: int = -1

    def __post_init__(self) -> None:
        if self.steps < 1 or self.batch_size < 1:
            raise ContractViolation("steps and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ContractViolation("learning_rate must be positive")
        if self.decay_steps < -1:
            raise ContractViolation("decay_steps must be >= -1")


def _as_batch(batch: list[tuple[MotionSequence, Condition]],
              arch: ArchSpec) -> tuple[np.ndarray, np.ndarray]:
    xs, cs = [], []
    for seq, cond in batch:
        if not seq.normalized:
            raise ContractViolation("denoise_loss expects normalized sequences")
        if seq.frames.shape != (arch.frames, arch.coords):
            raise ContractViolation("sequence shape does not match architecture")
        xs.append(seq.frames.reshape(-1))
        cs.append(condition_vector(cond))
    return np.array(xs), np.array(cs)


def prediction_errors(params: DenoiserParams, x0: np.ndarray, conds: np.ndarray,
                      t: np.ndarray, eps: np.ndarray,
                      schedule: DiffusionSchedule) -> tuple[np.ndarray, np.ndarray, dict]:
    """Per-sample squared noise-prediction error e_i = ||eps - eps_theta||^2.

    Returns (e, residual, cache); feed the residual and d loss/d e back into
    prediction_errors_grad for the exact parameter gradient.
    """
    t = np.asarray(t, dtype=np.int64).reshape(-1)
    abar = schedule.alpha_bars[t][:, None]
    sigma = np.sqrt(1.0 - abar)
    x_t = np.sqrt(abar) * x0 + sigma * eps
    pred, cache = forward(params.theta, params.arch, x_t, t, conds,
                          sigma.reshape(-1))
    resid = pred - eps
    return np.sum(resid * resid, axis=1), resid, cache


def prediction_errors_grad(arch: ArchSpec, cache: dict, resid: np.ndarray,
                           d_e: np.ndarray) -> np.ndarray:
    """Gradient of sum_i d_e[i] * e_i with respect to the flat parameters."""
    return backward(arch, cache, 2.0 * d_e[:, None] * resid)


def denoise_loss(params: DenoiserParams,
                 batch: list[tuple[MotionSequence, Condition]],
                 schedule: DiffusionSchedule,
                 rng: np.random.Generator | None = None,
                 draws: tuple[np.ndarray, np.ndarray] | None = None,
                 ) -> tuple[float, np.ndarray]:
    """Mean over the batch of ||eps - eps_theta(x_t, t, C)||^2 and its gradient.

    (t, eps) are drawn from rng unless explicit draws are supplied, which
    pins the stochastic terms for identity tests and the DPO coupling.
    """
    if not batch:
        raise ContractViolation("batch must be non-empty")
    x0, conds = _as_batch(batch, params.arch)
    n = len(batch)
    if draws is not None:
        t, eps = draws
    else:
        if rng is None:
            raise ContractViolation("either rng or draws is required")
        t = rng.integers(0, schedule.steps, size=n)
        eps = rng.standard_normal((n, params.arch.flat_dim))
    e, resid, cache = prediction_errors(params, x0, conds, t, eps, schedule)
    if not np.all(np.isfinite(e)):
        bad = int(np.flatnonzero(~np.isfinite(e))[0])
        raise TrainingDiverged(f"non-finite loss for batch sample {bad}")
    grad = prediction_errors_grad(params.arch, cache, resid,
                                  np.full(n, 1.0 / n))
    return float(e.mean()), grad


def train_denoiser(dataset: list[tuple[MotionSequence, Condition]],
                   schedule: DiffusionSchedule = DEFAULT_SCHEDULE,
                   hyper: GenTrainHyper = GenTrainHyper(),
                   arch: ArchSpec | None = None,
                   loss_out: list | None = None) -> DenoiserParams:
    """Noise-prediction pre-training; deterministic given hyper.seed."""
    if len(dataset) < 100:
        raise ContractViolation("training needs at least 100 sequences")
    first = dataset[0][0]
    if arch is None:
        arch = ArchSpec(frames=first.frame_count, coords=first.coord_count)
    norm = compute_norm_stats(dataset)
    x0 = np.array([normalize_frames(seq.frames, norm).reshape(-1)
                   for seq, _ in dataset])
    conds = np.array([condition_vector(cond) for _, cond in dataset])

    rng = np.random.default_rng(hyper.seed)
    theta = init_theta(arch, rng)
    decay = hyper.decay_steps
    if decay < 0:
        decay = max(hyper.steps - hyper.warmup_steps, 0)
    opt = AdamW(lr=hyper.learning_rate, weight_decay=hyper.weight_decay,
                warmup=hyper.warmup_steps, decay=decay)
    params = DenoiserParams(theta, arch, norm, frame_dt=first.dt)
    for step in range(hyper.steps):
        idx = rng.integers(0, len(dataset), size=hyper.batch_size)
        t = rng.integers(0, schedule.steps, size=hyper.batch_size)
        eps = rng.standard_normal((hyper.batch_size, arch.flat_dim))
        e, resid, cache = prediction_errors(params, x0[idx], conds[idx],
                                            t, eps, schedule)
        # Weight each sample by sigma_t^2 so the regression is uniform in the
        # motion space rather than amplified 1/sigma^2 at small t; this is the
        # clean-signal weighting and keeps high-noise steps in the gradient.
        sig2 = 1.0 - schedule.alpha_bars[t]
        loss = float(np.mean(e * sig2))
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss diverged at step {step}", step=step)
        if loss_out is not None:
            loss_out.append(loss)
        grad = prediction_errors_grad(arch, cache, resid,
                                      sig2 / len(idx))
        params.theta = opt.step(params.theta, grad)
    return params


def sample(params: DenoiserParams, condition: Condition | TaskCondition,
           seed: int, schedule: DiffusionSchedule = DEFAULT_SCHEDULE,
           ) -> MotionSequence:
    """Full reverse chain from Gaussian noise; output in raw units.

    With a spatial constraint the masked entries of each intermediate are
    replaced by forward-diffused targets at the matching noise level, and the
    final step performs hard replacement.
    """
    arch = params.arch
    cond = condition if isinstance(condition, Condition) else Condition(condition)
    cvec = condition_vector(cond)[None, :]
    rng = np.random.default_rng(seed)

    tgt_flat = mask_flat = None
    if cond.has_spatial:
        cs = cond.spatial
        if cs.targets.shape != (arch.frames, arch.coords):
            raise ContractViolation("spatial control shape does not match "
                                    "the generator window")
        mask_flat = cs.mask.reshape(-1) == 1.0
        raw = np.where(cs.mask == 1.0, cs.targets, 0.0)
        tgt_flat = normalize_frames(raw, params.norm).reshape(-1)

    x = rng.standard_normal(arch.flat_dim)
    for t in range(schedule.steps - 1, -1, -1):
        beta = schedule.betas[t]
        abar = schedule.alpha_bars[t]
        pred, _ = forward(params.theta, arch, x[None, :], np.array([t]), cvec,
                          np.sqrt([1.0 - abar]))
        mean = (x - beta / np.sqrt(1.0 - abar) * pred[0]) / np.sqrt(1.0 - beta)
        if t > 0:
            abar_prev = schedule.alpha_bars[t - 1]
            var = (1.0 - abar_prev) / (1.0 - abar) * beta
            x = mean + np.sqrt(var) * rng.standard_normal(arch.flat_dim)
            if mask_flat is not None:
                noised = forward_diffuse(tgt_flat, t - 1,
                                         rng.standard_normal(arch.flat_dim),
                                         schedule)
                x[mask_flat] = noised[mask_flat]
        else:
            x = mean
            if mask_flat is not None:
                x[mask_flat] = tgt_flat[mask_flat]
        if not np.all(np.isfinite(x)):
            raise TrainingDiverged(f"non-finite sample at step {t}", step=t)

    frames = denormalize_frames(x.reshape(arch.frames, arch.coords), params.norm)
    return MotionSequence(frames, params.frame_dt)


def sample_candidates(params: DenoiserParams, condition: Condition | TaskCondition,
                      k: int, base_seed: int,
                      schedule: DiffusionSchedule = DEFAULT_SCHEDULE,
                      ) -> list[MotionSequence]:
    """K seeded samples, seeds base_seed .. base_seed + K - 1."""
    if k < 2:
        raise ContractViolation("need at least two candidates")
    out = []
    for i in range(k):
        try:
            out.append(sample(params, condition, base_seed + i, schedule))
        except PhysmoError as exc:
            raise PhysmoError(f"candidate {i}: {exc}") from exc
    return out


# --- checkpoint container ----------------------------------------------------
#
# Layout: 8-byte magic, little-endian u32 header length, UTF-8 JSON header
# (sorted keys), then float64 little-endian arrays in fixed order:
# theta, norm mean, norm std, betas.

_MAGIC = b"PMCKPT01"


def save_checkpoint(path, params: DenoiserParams,
                    schedule: DiffusionSchedule = DEFAULT_SCHEDULE) -> None:
    arch = params.arch
    header = {
        "arch": {"frames": arch.frames, "coords": arch.coords,
                 "cond_dim": arch.cond_dim, "time_embed": arch.time_embed,
                 "cond_embed": arch.cond_embed, "hidden": list(arch.hidden),
                 "skip": arch.skip},
        "frame_dt": params.frame_dt,
        "theta_len": int(params.theta.size),
        "schedule_steps": schedule.steps,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.uint32(len(blob)).astype("<u4").tobytes())
        fh.write(blob)
        for arr in (params.theta, params.norm.mean, params.norm.std,
                    schedule.betas):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[DenoiserParams, DiffusionSchedule]:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ContractViolation(f"{path}: not a checkpoint file")
        (hlen,) = np.frombuffer(fh.read(4), dtype="<u4")
        header = json.loads(fh.read(int(hlen)).decode())
        arch = ArchSpec(frames=header["arch"]["frames"],
                        coords=header["arch"]["coords"],
                        cond_dim=header["arch"]["cond_dim"],
                        time_embed=header["arch"]["time_embed"],
                        cond_embed=header["arch"]["cond_embed"],
                        hidden=tuple(header["arch"]["hidden"]),
                        skip=bool(header["arch"].get("skip", False)))
        d = arch.coords

        def read(n: int) -> np.ndarray:
            data = np.frombuffer(fh.read(8 * n), dtype="<f8")
            if data.size != n:
                raise ContractViolation(f"{path}: truncated checkpoint")
            return data.astype(np.float64)

        theta = read(header["theta_len"])
        norm = NormStats(read(d), read(d))
        schedule = DiffusionSchedule(read(header["schedule_steps"]))
    params = DenoiserParams(theta, arch, norm, frame_dt=header["frame_dt"])
    return params, schedule
