"""DDPM variance schedule and forward (noising) process."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step variances plus the derived products used everywhere else.

    betas must be non-decreasing inside (0, 1); the cumulative alpha
    products are then automatically in (0, 1) and strictly decreasing.
    """

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ContractViolation("betas must be a non-empty 1-D array")
        if not np.all((betas > 0.0) & (betas < 1.0)):
            raise ContractViolation("betas must lie strictly inside (0, 1)")
        if np.any(np.diff(betas) < 0.0):
            raise ContractViolation("betas must be non-decreasing")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    @property
    def steps(self) -> int:
        return int(self.betas.size)


def linear_schedule(steps: int = 100, beta_start: float = 1e-4,
                    beta_end: float = 0.02) -> DiffusionSchedule:
    """Linearly spaced betas; the usual small-model DDPM default."""
    if steps < 1:
        raise ContractViolation("steps must be >= 1")
    return DiffusionSchedule(np.linspace(beta_start, beta_end, steps))


def forward_diffuse(x0: np.ndarray, t: int, noise: np.ndarray,
                    schedule: DiffusionSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.

    x0 is expected in normalized (z-scored) generator space.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise ContractViolation(
            f"noise shape {noise.shape} != sample shape {x0.shape}")
    if not (0 <= t < schedule.steps):
        raise ContractViolation(f"step {t} outside [0, {schedule.steps})")
    abar = schedule.alpha_bars[t]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise
