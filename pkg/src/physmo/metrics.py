"""Quality and adherence metrics over realized trajectories.

Everything here consumes post-tracking trajectories (or embeddings computed
from them): smoothness via a third-difference jerk estimate, spatial-control
error, a Frechet distance between Gaussian fits of motion embeddings, and
retrieval analogs in the same embedding space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg

from .errors import ContractViolation
from .motion import Condition, SpatialControl
from .rewards import EmbeddingModel, embed_motion, masked_mse
from .tracking import RealizedTrajectory


@dataclass(frozen=True)
class MetricReport:
    jerk: float
    control_err: float
    fid_like: float
    mm_dist: float
    r_at_k: dict[int, float]
    n_samples: int

    def __post_init__(self) -> None:
        ks = sorted(self.r_at_k)
        vals = [self.r_at_k[k] for k in ks]
        if any(b < a for a, b in zip(vals, vals[1:])):
            raise ContractViolation("retrieval fractions must be "
                                    "non-decreasing in k")
        if np.isfinite(self.fid_like) and self.fid_like < 0.0:
            raise ContractViolation("distribution distance must be >= 0")

    def csv_row(self) -> tuple[str, str]:
        names = ["jerk", "control_err", "fid_like", "mm_dist"]
        vals = [self.jerk, self.control_err, self.fid_like, self.mm_dist]
        for k in sorted(self.r_at_k):
            names.append(f"r_at_{k}")
            vals.append(self.r_at_k[k])
        names.append("n_samples")
        return ",".join(names), ",".join(
            [repr(float(v)) for v in vals] + [str(self.n_samples)])


def jerk(realized: RealizedTrajectory) -> float:
    """Mean |third finite difference| / dt^3 over frames and coordinates.

    Central differences inside, one-sided at the two frames on each end;
    both variants are exact on cubics.
    """
    q = realized.frames
    f = q.shape[0]
    if f < 4:
        raise ContractViolation("jerk needs at least 4 frames")
    dt3 = realized.dt ** 3
    # One-sided stencil anchored at i covers frames i..i+3; the backward
    # stencil at frame i is the anchored one at i-3.
    anchored = (q[3:] - 3.0 * q[2:-1] + 3.0 * q[1:-2] - q[:-3]) / dt3
    d3 = np.empty_like(q)
    d3[0] = anchored[0]
    d3[1] = anchored[1 if f >= 5 else 0]
    if f >= 5:
        d3[2:-2] = (q[4:] - 2.0 * q[3:-1] + 2.0 * q[1:-3] - q[:-4]) / (2.0 * dt3)
        d3[-2] = anchored[-2]
    else:
        d3[-2] = anchored[0]
    d3[-1] = anchored[-1]
    return float(np.mean(np.abs(d3)))


def control_err(realized: RealizedTrajectory, cs: SpatialControl) -> float:
    """Masked mean squared error against the spatial targets (= -r_control)."""
    return masked_mse(realized.frames, cs.targets, cs.mask)


def traj_fail_rate(realized_set: Sequence[RealizedTrajectory],
                   cs_set: Sequence[SpatialControl],
                   threshold: float) -> float:
    """Fraction of sequences with any masked entry off by more than threshold."""
    if threshold <= 0.0:
        raise ContractViolation("threshold must be positive")
    if len(realized_set) != len(cs_set):
        raise ContractViolation("one spatial control per trajectory required")
    fails = 0
    for realized, cs in zip(realized_set, cs_set):
        err = np.abs(realized.frames - cs.targets)[cs.mask == 1.0]
        fails += bool(err.max() > threshold)
    return fails / len(realized_set)


def fid_like(features_a: np.ndarray, features_b: np.ndarray,
             epsilon: float = 1e-6) -> float:
    """Frechet distance between Gaussian fits of two embedding sets.

    ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with an epsilon
    ridge on both covariances before the matrix square root.
    """
    a = np.atleast_2d(np.asarray(features_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(features_b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ContractViolation("embedding dimensions differ")
    dim = a.shape[1]
    # Two rows give a covariance; the ridge keeps the square root defined
    # when the estimate is singular (fewer samples than dimensions).
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ContractViolation("each set needs at least 2 samples")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False) + epsilon * np.eye(dim)
    cov_b = np.cov(b, rowvar=False) + epsilon * np.eye(dim)
    sqrt_ab, _ = linalg.sqrtm(cov_a @ cov_b, disp=False)
    if np.iscomplexobj(sqrt_ab):
        if np.abs(sqrt_ab.imag).max() > 1e-6:
            raise ContractViolation("covariance product is not PSD "
                                    "after regularization")
        sqrt_ab = sqrt_ab.real
    gap = mu_a - mu_b
    value = float(gap @ gap + np.trace(cov_a) + np.trace(cov_b)
                  - 2.0 * np.trace(sqrt_ab))
    # The exact value is >= 0; numerical sqrtm noise may land barely below.
    if value < -1e-6:
        raise ContractViolation("negative distribution distance indicates "
                                "a non-PSD covariance")
    return max(value, 0.0)


def retrieval_metrics(batch: Sequence[tuple[RealizedTrajectory, Condition]],
                      em: EmbeddingModel,
                      ks: tuple[int, ...] = (1, 2, 3),
                      ) -> tuple[float, dict[int, float]]:
    """MM-Dist and R@k against the batch's own condition templates.

    The gallery is the batch: each motion's embedding is ranked against every
    template in the batch by Euclidean distance, counting strictly closer
    templates only, so ties never hurt.
    """
    conds = {(c.task.family, c.task.param) for _, c in batch}
    if len(conds) < 4:
        raise ContractViolation("retrieval needs at least 4 distinct conditions")
    emb = np.array([embed_motion(x, em) for x, _ in batch])
    tmpl = np.array([em.template(c.task) for _, c in batch])
    dists = np.linalg.norm(emb[:, None, :] - tmpl[None, :, :], axis=2)
    own = np.diagonal(dists)
    mm_dist = float(own.mean())
    rank = 1 + (dists < own[:, None]).sum(axis=1)
    r_at_k = {k: float(np.mean(rank <= k)) for k in ks}
    return mm_dist, r_at_k
