"""Preference post-training of the generator.

The per-step surrogate compares denoising errors of the live and frozen
reference networks on the win/lose pair, with one shared (t, noise) draw per
pair per step:

    L = -log sigmoid(-beta [(e_w - e_w_ref) - (e_l - e_l_ref)]) + lambda_sft e_w

where e = sigma_t^2 ||eps - eps_net(x_t, t, C)||^2 is the per-draw error
measured in motion space.  With the sigma-scaled prediction head the raw
eps-error spans orders of magnitude across timesteps; the sigma_t^2 weight
puts every draw on the same scale, which is what keeps a single constant
beta meaningful.  The SFT term reuses the same draw on the winning motion,
so a zero weight reduces the total exactly to the preference loss.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .denoiser import AdamW
from .diffusion import DiffusionSchedule
from .errors import ContractViolation, PhysmoError, TrainingDiverged
from .generator import (DEFAULT_SCHEDULE, DenoiserParams, normalize_frames,
                        prediction_errors, prediction_errors_grad)
from .motion import condition_vector
from .preferences import PreferencePair

# Hyperparameter profiles: plain task conditioning vs spatial control.
PROFILES: dict[str, dict[str, float]] = {
    "text": {"lambda_sft": 1.0, "beta": 5.0},
    "spatial": {"lambda_sft": 2.0, "beta": 20.0},
}


@dataclass(frozen=True)
class TrainHyper:
    beta: float = 20.0
    lambda_sft: float = 2.0
    dpo_weight: float = 1.0     # 0 turns the objective into pure win-sample SFT
    steps: int = 2000
    batch_size: int = 16
    learning_rate: float = 1e-6
    warmup_steps: int = 100
    rounds: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.beta <= 0.0:
            raise ContractViolation("beta must be positive")
        if self.lambda_sft < 0.0 or self.dpo_weight < 0.0:
            raise ContractViolation(
                "lambda_sft and dpo_weight must be non-negative")
        if not (0 <= self.warmup_steps <= self.steps):
            raise ContractViolation("warmup_steps must not exceed steps")
        if self.rounds < 1 or self.batch_size < 1:
            raise ContractViolation("rounds and batch_size must be >= 1")


def profile_hyper(profile: str, **overrides) -> TrainHyper:
    if profile not in PROFILES:
        raise ContractViolation(f"unknown profile {profile!r}")
    return TrainHyper(**{**PROFILES[profile], **overrides})


@dataclass
class RoundReport:
    round_index: int
    mean_rewards_before: dict[str, float]
    mean_rewards_after: dict[str, float]
    acceptance_rate: float
    final_dpo_loss: float
    final_sft_loss: float
    final_total_loss: float
    wall_time: float = 0.0

    def __post_init__(self) -> None:
        if self.round_index < 1:
            raise ContractViolation("round index starts at 1")

    def lines(self) -> str:
        """Structured-text rendering; wall time deliberately left out so the
        persisted report is a pure function of the run's inputs."""
        out = [f"round = {self.round_index}",
               f"acceptance_rate = {self.acceptance_rate!r}",
               f"final_dpo_loss = {self.final_dpo_loss!r}",
               f"final_sft_loss = {self.final_sft_loss!r}",
               f"final_total_loss = {self.final_total_loss!r}"]
        for tag, avg in (("before", self.mean_rewards_before),
                         ("after", self.mean_rewards_after)):
            for name in sorted(avg):
                out.append(f"mean_{name}_{tag} = {avg[name]!r}")
        return "\n".join(out) + "\n"


def _pair_inputs(params: DenoiserParams,
                 pairs: Sequence[PreferencePair]) -> tuple[np.ndarray, np.ndarray]:
    """Stacked normalized (win..., lose...) flats and duplicated cond vecs."""
    def flat(seq):
        frames = seq.frames if seq.normalized \
            else normalize_frames(seq.frames, params.norm)
        return frames.reshape(-1)

    wins = np.array([flat(p.win) for p in pairs])
    loses = np.array([flat(p.lose) for p in pairs])
    conds = np.array([condition_vector(p.condition) for p in pairs])
    return np.concatenate([wins, loses]), np.concatenate([conds, conds])


def _losses_and_grad(params: DenoiserParams, ref_params: DenoiserParams,
                     pairs: Sequence[PreferencePair], t: np.ndarray,
                     noise: np.ndarray, beta: float, lambda_sft: float,
                     schedule: DiffusionSchedule, dpo_weight: float = 1.0,
                     ) -> tuple[float, float, float, np.ndarray]:
    """(mean dpo loss, mean sft loss, mean total, exact gradient).

    t is (B,) and noise (B, F*D); each pair's draw is shared between its win
    and lose branches and between the live and reference networks.
    """
    n = len(pairs)
    x0, conds = _pair_inputs(params, pairs)
    t2 = np.concatenate([t, t])
    eps2 = np.concatenate([noise, noise])

    e, resid, cache = prediction_errors(params, x0, conds, t2, eps2, schedule)
    e_ref, _, _ = prediction_errors(ref_params, x0, conds, t2, eps2, schedule)
    ew, el = e[:n], e[n:]
    # Both the preference and the SFT term measure per-draw error in motion
    # space (sigma_t^2-weighted eps-MSE, matching pre-training); without the
    # weight the 1/sigma^2 amplification of small-t draws saturates the
    # sigmoid and lets a few draws dominate the round's gradient mass.
    sig2 = 1.0 - schedule.alpha_bars[np.asarray(t, dtype=np.int64)]
    z = -beta * sig2 * ((ew - e_ref[:n]) - (el - e_ref[n:]))
    dpo_each = np.logaddexp(0.0, -z)          # -log sigmoid(z), stable
    if not np.all(np.isfinite(dpo_each)) or not np.all(np.isfinite(e)):
        raise TrainingDiverged("non-finite preference loss")

    # d(-log sig(z))/dz = -sig(-z); dz/dew = -beta sig2, dz/del = +beta sig2.
    sig = expit(-z)
    d_ew = (dpo_weight * beta * sig + lambda_sft) * sig2 / n
    d_el = -dpo_weight * beta * sig * sig2 / n
    grad = prediction_errors_grad(params.arch, cache, resid,
                                  np.concatenate([d_ew, d_el]))
    dpo = float(dpo_each.mean())
    sft = float((ew * sig2).mean())
    return dpo, sft, dpo_weight * dpo + lambda_sft * sft, grad


def dpo_loss(params: DenoiserParams, ref_params: DenoiserParams,
             pair: PreferencePair, t: int, shared_noise: np.ndarray,
             beta: float, schedule: DiffusionSchedule = DEFAULT_SCHEDULE,
             ) -> tuple[float, np.ndarray]:
    """Single-pair preference loss with explicit (t, noise) draw."""
    noise = np.asarray(shared_noise, dtype=np.float64).reshape(1, -1)
    dpo, _, _, grad = _losses_and_grad(params, ref_params, [pair],
                                       np.array([t]), noise, beta, 0.0,
                                       schedule)
    return dpo, grad


def total_loss(params: DenoiserParams, ref_params: DenoiserParams,
               pair: PreferencePair, hyper: TrainHyper,
               rng: np.random.Generator,
               schedule: DiffusionSchedule = DEFAULT_SCHEDULE,
               parts_out: dict | None = None) -> tuple[float, np.ndarray]:
    """Preference + weighted SFT loss on one pair, with rng-drawn (t, noise)."""
    t = rng.integers(0, schedule.steps, size=1)
    noise = rng.standard_normal((1, params.arch.flat_dim))
    dpo, sft, total, grad = _losses_and_grad(params, ref_params, [pair], t,
                                             noise, hyper.beta,
                                             hyper.lambda_sft, schedule,
                                             dpo_weight=hyper.dpo_weight)
    if parts_out is not None:
        parts_out.update(dpo=dpo, sft=sft)
    return total, grad


def _theta_digest(params: DenoiserParams) -> str:
    return hashlib.sha256(
        np.ascontiguousarray(params.theta, dtype="<f8").tobytes()).hexdigest()


def finetune_round(params: DenoiserParams,
                   pref_dataset: Sequence[PreferencePair],
                   hyper: TrainHyper,
                   schedule: DiffusionSchedule = DEFAULT_SCHEDULE,
                   ref_params: DenoiserParams | None = None,
                   round_index: int = 1,
                   acceptance: float = 1.0,
                   eval_fn: Callable[[DenoiserParams], Mapping[str, float]] | None = None,
                   ) -> tuple[DenoiserParams, RoundReport]:
    """One optimization round against a fixed preference dataset.

    The reference network defaults to a snapshot of the round-start
    parameters and is checksummed to guarantee it never moves within the
    round.  Deterministic given hyper.seed.
    """
    if not pref_dataset:
        raise ContractViolation("preference dataset must be non-empty")
    started = time.perf_counter()
    ref = params.copy() if ref_params is None else ref_params
    ref_digest = _theta_digest(ref)
    before = dict(eval_fn(params)) if eval_fn else {}

    rng = np.random.default_rng(hyper.seed)
    opt = AdamW(lr=hyper.learning_rate, weight_decay=0.0,
                warmup=hyper.warmup_steps)
    current = params.copy()
    dpo = sft = total = float("nan")
    for step in range(hyper.steps):
        idx = rng.integers(0, len(pref_dataset), size=hyper.batch_size)
        batch = [pref_dataset[i] for i in idx]
        t = rng.integers(0, schedule.steps, size=len(batch))
        noise = rng.standard_normal((len(batch), current.arch.flat_dim))
        try:
            dpo, sft, total, grad = _losses_and_grad(
                current, ref, batch, t, noise, hyper.beta, hyper.lambda_sft,
                schedule, dpo_weight=hyper.dpo_weight)
        except TrainingDiverged as exc:
            raise TrainingDiverged(f"step {step}: {exc}", step=step) from exc
        current.theta = opt.step(current.theta, grad)

    if _theta_digest(ref) != ref_digest:
        raise PhysmoError("reference parameters changed during the round")
    after = dict(eval_fn(current)) if eval_fn else {}
    report = RoundReport(round_index=round_index, mean_rewards_before=before,
                         mean_rewards_after=after, acceptance_rate=acceptance,
                         final_dpo_loss=dpo, final_sft_loss=sft,
                         final_total_loss=total,
                         wall_time=time.perf_counter() - started)
    return current, report


def iterate(params: DenoiserParams, rounds: int,
            builder: Callable[[DenoiserParams, int], tuple[list[PreferencePair], float]],
            hyper: TrainHyper,
            schedule: DiffusionSchedule = DEFAULT_SCHEDULE,
            ref_mode: str = "refresh",
            eval_fn: Callable[[DenoiserParams], Mapping[str, float]] | None = None,
            persist: Callable[[int, DenoiserParams, list[PreferencePair], RoundReport], None] | None = None,
            ) -> tuple[DenoiserParams, list[RoundReport]]:
    """Alternate dataset building and fine-tuning for the given round count.

    ``builder(params, round_index)`` returns (pairs, acceptance rate) using
    the current generator.  ``ref_mode`` picks whether the reference network
    refreshes to each round's start ("refresh") or stays at the params this
    call started from ("fixed").  ``persist`` is called after every round so
    partial results survive a later abort.
    """
    if rounds < 1:
        raise ContractViolation("rounds must be >= 1")
    if ref_mode not in ("refresh", "fixed"):
        raise ContractViolation(f"unknown ref_mode {ref_mode!r}")
    fixed_ref = params.copy() if ref_mode == "fixed" else None
    reports: list[RoundReport] = []
    current = params
    for r in range(1, rounds + 1):
        pairs, acceptance = builder(current, r)
        if not pairs:
            # Nothing to train on: record the round and keep the params.
            report = RoundReport(round_index=r, mean_rewards_before={},
                                 mean_rewards_after={},
                                 acceptance_rate=acceptance,
                                 final_dpo_loss=float("nan"),
                                 final_sft_loss=float("nan"),
                                 final_total_loss=float("nan"))
            reports.append(report)
            if persist is not None:
                persist(r, current, pairs, report)
            continue
        round_hyper = replace(hyper, seed=hyper.seed + r)
        current, report = finetune_round(
            current, pairs, round_hyper, schedule,
            ref_params=fixed_ref, round_index=r, acceptance=acceptance,
            eval_fn=eval_fn)
        reports.append(report)
        if persist is not None:
            persist(r, current, pairs, report)
    return current, reports
