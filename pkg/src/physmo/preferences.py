"""Preference-pair construction from scored candidate batches.

Dominance mode emits the most clearly separated strictly-dominating ordered
pair; fuse mode (the score-fusion ablation) ranks candidates by a weighted
sum of standardized rewards.  Absence of a usable pair is a value, not an
error: the condition is skipped for the round.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ContractViolation, PhysmoError
from .motion import Condition, MotionSequence
from .rewards import RewardVector, reward_set
from .tracking import RealizedTrajectory


@dataclass
class ScoredCandidate:
    """One candidate: kinematic motion, its physics rollout, its rewards."""

    index: int
    motion: MotionSequence
    realized: RealizedTrajectory
    rewards: RewardVector


@dataclass
class PreferencePair:
    """A (win, lose) pair from one candidate batch.

    ``mode`` records the selection rule and ``names`` the rewards it
    consulted (None means the condition's full set).  Dominance selection
    stores the rewards that actually varied within its batch, and the pair
    re-checks the dominance relation over them at construction.
    """

    condition: Condition
    win: MotionSequence
    lose: MotionSequence
    win_rewards: RewardVector
    lose_rewards: RewardVector
    mode: str = "dominance"
    names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.names is not None:
            self.names = tuple(self.names)
        if self.mode == "dominance":
            names = self.names or reward_set(self.condition)
            if not dominates(self.win_rewards, self.lose_rewards, names):
                raise ContractViolation(
                    "dominance-mode pair whose winner does not dominate")


def dominates(a: RewardVector, b: RewardVector,
              names: Sequence[str]) -> bool:
    """True iff a beats b strictly on every reward in the set."""
    if not names:
        raise ContractViolation("reward set must be non-empty")
    return all(a.value(n) > b.value(n) for n in names)


def _standardized(candidates: Sequence[ScoredCandidate],
                  names: Sequence[str]) -> np.ndarray:
    """(K, S) per-reward z-scores; a constant reward standardizes to zero."""
    raw = np.array([c.rewards.values(tuple(names)) for c in candidates])
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    z = np.zeros_like(raw)
    live = std > 0.0
    z[:, live] = (raw[:, live] - mean[live]) / std[live]
    return z


def select_pair(candidates: Sequence[ScoredCandidate],
                condition: Condition,
                names: Sequence[str] | None = None,
                rng: np.random.Generator | None = None) -> PreferencePair | None:
    """Best strictly-dominating ordered pair, or None if none exists.

    A reward that is constant across the whole batch carries no information
    for this batch and is dropped from the consulted set (all constant ->
    no pair); over the remaining rewards the winner must beat the loser
    strictly on every one.  "Best" maximizes the minimum per-reward
    standardized margin.  Ties break on the lowest (win, lose) index pair,
    so the rng argument is accepted for interface stability but never
    consulted.
    """
    if len(candidates) < 2:
        raise ContractViolation("need at least two candidates")
    if names is None:
        names = reward_set(condition)
    raw = np.array([c.rewards.values(tuple(names)) for c in candidates])
    live = raw.std(axis=0) > 0.0
    if not live.any():
        return None
    names = tuple(n for n, keep in zip(names, live) if keep)
    raw = raw[:, live]
    z = _standardized(candidates, names)

    # dom[i, j]: candidate i strictly beats j on every consulted reward.
    dom = np.all(raw[:, None, :] > raw[None, :, :], axis=2)
    if not dom.any():
        return None
    margins = np.min(z[:, None, :] - z[None, :, :], axis=2)
    margins[~dom] = -np.inf
    flat = int(np.argmax(margins))        # first max in row-major order =
    i, j = divmod(flat, len(candidates))  # lowest (win, lose) index pair
    return PreferencePair(condition, candidates[i].motion, candidates[j].motion,
                          candidates[i].rewards, candidates[j].rewards,
                          mode="dominance", names=names)


def fuse_select(candidates: Sequence[ScoredCandidate],
                weights: Mapping[str, float],
                condition: Condition,
                rng: np.random.Generator | None = None) -> PreferencePair | None:
    """Score-fusion selection: weighted sum of standardized rewards.

    Win is the argmax, lose the argmin; None when the fused scores are all
    equal (max = min).
    """
    if len(candidates) < 2:
        raise ContractViolation("need at least two candidates")
    names = tuple(weights)
    w = np.array([weights[n] for n in names], dtype=np.float64)
    if not np.all(w > 0.0):
        raise ContractViolation("fuse weights must be positive")
    fused = _standardized(candidates, names) @ w
    i, j = int(np.argmax(fused)), int(np.argmin(fused))
    if fused[i] == fused[j]:
        return None
    return PreferencePair(condition, candidates[i].motion, candidates[j].motion,
                          candidates[i].rewards, candidates[j].rewards,
                          mode="fuse")


def build_dataset(conditions: Sequence[Condition],
                  sampler: Callable[[Condition, int, int], list[MotionSequence]],
                  tracker: Callable[[list[MotionSequence]], list[RealizedTrajectory]],
                  scorer: Callable[[MotionSequence, RealizedTrajectory, Condition], RewardVector],
                  k: int, round_seed: int, mode: str = "dominance",
                  weights: Mapping[str, float] | None = None,
                  names: Sequence[str] | None = None,
                  log_out: list | None = None) -> list[PreferencePair]:
    """One selection attempt per condition; fallen candidates stay eligible.

    ``sampler(condition, k, base_seed)`` draws the K candidates; base seeds
    are disjoint per condition.  ``names`` restricts the rewards consulted by
    selection (ablations); the default is each condition's full reward set.
    A condition whose sampling, tracking, or scoring raises is logged and
    skipped — the dataset build never aborts.
    """
    if k < 2:
        raise ContractViolation("K must be at least 2")
    if mode not in ("dominance", "fuse"):
        raise ContractViolation(f"unknown selection mode {mode!r}")
    pairs: list[PreferencePair] = []
    for idx, cond in enumerate(conditions):
        entry = {"condition": idx, "family": cond.task.family,
                 "accepted": False, "reason": ""}
        try:
            motions = sampler(cond, k, round_seed + idx * k)
            realized = tracker(motions)
            scored = [ScoredCandidate(i, m, x, scorer(m, x, cond))
                      for i, (m, x) in enumerate(zip(motions, realized))]
            used = tuple(names) if names is not None else reward_set(cond)
            if "control" in used and not cond.has_spatial:
                used = tuple(n for n in used if n != "control")
            if mode == "dominance":
                pair = select_pair(scored, cond, names=used)
            else:
                if weights is not None:
                    w = {n: v for n, v in weights.items()
                         if n != "control" or cond.has_spatial}
                else:
                    w = {n: 1.0 for n in used}
                pair = fuse_select(scored, w, cond)
            if pair is None:
                entry["reason"] = "no pair"
            else:
                pairs.append(pair)
                entry["accepted"] = True
        except PhysmoError as exc:
            entry["reason"] = str(exc)
        if log_out is not None:
            log_out.append(entry)
    return pairs


def acceptance_rate(log: Sequence[Mapping]) -> float:
    if not log:
        return 0.0
    return sum(bool(e["accepted"]) for e in log) / len(log)
