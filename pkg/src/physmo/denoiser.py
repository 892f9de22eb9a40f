"""Noise-prediction network: a flat-parameter MLP with hand-written backprop.

The network maps (flattened motion, sinusoidal timestep embedding, learned
condition embedding) -> predicted noise, all float64.  The head is divided by
the per-sample noise scale sigma_t = sqrt(1 - abar_t): exact noise prediction
needs an output gain growing like 1/sigma_t as t -> 0, and baking the known
scale into the head keeps the learned map O(1) at every noise level instead
of asking the hidden layers to supply a 100x gain on nearly-clean inputs.
Parameters live in one flat vector so optimizers, checkpoints, and
finite-difference checks stay trivial; ``unpack`` returns reshaped views into
that vector, and the backward pass writes into the matching views of a flat
gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ContractViolation
from .motion import CONDITION_DIM


@dataclass(frozen=True)
class ArchSpec:
    """Shape descriptor; the default matches the 60x7 motion window.

    ``skip`` adds a direct linear map from the flattened motion input to the
    output.  Noise prediction is dominated by a near-linear component in x_t,
    and routing it around the hidden layers frees them for the manifold
    correction."""

    frames: int = 60
    coords: int = 7
    cond_dim: int = CONDITION_DIM
    time_embed: int = 32
    cond_embed: int = 16
    hidden: tuple[int, ...] = (512, 512, 256)
    skip: bool = True

    def __post_init__(self) -> None:
        if self.frames < 2 or self.coords < 1:
            raise ContractViolation("frames >= 2 and coords >= 1 required")
        if self.time_embed < 2 or self.time_embed % 2:
            raise ContractViolation("time_embed must be even and >= 2")
        if self.cond_embed < 1 or self.cond_dim < 1 or not self.hidden:
            raise ContractViolation("embedding and hidden sizes must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def flat_dim(self) -> int:
        return self.frames * self.coords

    @property
    def input_dim(self) -> int:
        return self.flat_dim + self.time_embed + self.cond_embed

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.flat_dim)


def _segments(arch: ArchSpec):
    yield "cond_w", (arch.cond_dim, arch.cond_embed)
    yield "cond_b", (arch.cond_embed,)
    if arch.skip:
        yield "w_skip", (arch.flat_dim, arch.flat_dim)
    dims = arch.layer_dims
    for i in range(len(dims) - 1):
        yield f"w{i}", (dims[i], dims[i + 1])
        yield f"b{i}", (dims[i + 1],)


def param_count(arch: ArchSpec) -> int:
    return sum(int(np.prod(shape)) for _, shape in _segments(arch))


def unpack(theta: np.ndarray, arch: ArchSpec) -> dict[str, np.ndarray]:
    """Views into the flat vector, keyed by segment name."""
    theta = np.asarray(theta)
    if theta.shape != (param_count(arch),):
        raise ContractViolation(
            f"parameter vector has {theta.size} entries, "
            f"architecture needs {param_count(arch)}")
    out, at = {}, 0
    for name, shape in _segments(arch):
        n = int(np.prod(shape))
        out[name] = theta[at:at + n].reshape(shape)
        at += n
    return out


def init_theta(arch: ArchSpec, rng: np.random.Generator) -> np.ndarray:
    """1/sqrt(fan_in)-scaled normal weights, zero biases."""
    theta = np.zeros(param_count(arch))
    seg = unpack(theta, arch)
    for name, block in seg.items():
        if name.startswith(("w", "cond_w")):
            fan_in = block.shape[0]
            block[...] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), block.shape)
    return theta


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of raw step indices, (B,) -> (B, dim)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _silu(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sig = expit(a)
    return a * sig, sig * (1.0 + a * (1.0 - sig))


def forward(theta: np.ndarray, arch: ArchSpec, x: np.ndarray, t: np.ndarray,
            cond: np.ndarray, sigma: np.ndarray) -> tuple[np.ndarray, dict]:
    """Predicted noise (B, F*D) plus the cache the backward pass needs.

    ``sigma`` is the per-sample noise scale sqrt(1 - abar_t); the raw network
    output (skip included) is divided by it, so zeroing the output layer and
    skip still zeroes the prediction.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    if x.shape[1] != arch.flat_dim or cond.shape[1] != arch.cond_dim:
        raise ContractViolation("input width does not match architecture")
    if sigma.shape[0] != x.shape[0] or not np.all(sigma > 0):
        raise ContractViolation("sigma must be positive, one entry per sample")
    seg = unpack(theta, arch)
    cemb = cond @ seg["cond_w"] + seg["cond_b"]
    temb = timestep_embedding(t, arch.time_embed)
    z = np.concatenate([x, temb, cemb], axis=1)

    acts, derivs = [z], []
    h = z
    n_layers = len(arch.layer_dims) - 1
    for i in range(n_layers - 1):
        a = h @ seg[f"w{i}"] + seg[f"b{i}"]
        h, dh = _silu(a)
        acts.append(h)
        derivs.append(dh)
    eps = h @ seg[f"w{n_layers - 1}"] + seg[f"b{n_layers - 1}"]
    if arch.skip:
        eps = eps + x @ seg["w_skip"]
    eps = eps / sigma[:, None]
    cache = {"acts": acts, "derivs": derivs, "cond": cond, "seg": seg,
             "n_layers": n_layers, "sigma": sigma}
    return eps, cache


def backward(arch: ArchSpec, cache: dict, d_eps: np.ndarray) -> np.ndarray:
    """Flat gradient of sum(loss) given d loss / d eps, shape (B, F*D)."""
    grad = np.zeros(param_count(arch))
    gseg = unpack(grad, arch)
    seg, acts, derivs = cache["seg"], cache["acts"], cache["derivs"]
    n_layers = cache["n_layers"]

    d = np.atleast_2d(d_eps) / cache["sigma"][:, None]
    if arch.skip:
        gseg["w_skip"][...] = cache["acts"][0][:, :arch.flat_dim].T @ d
    for i in range(n_layers - 1, -1, -1):
        gseg[f"w{i}"][...] = acts[i].T @ d
        gseg[f"b{i}"][...] = d.sum(axis=0)
        d = d @ seg[f"w{i}"].T
        if i > 0:
            d = d * derivs[i - 1]
    # d is now the gradient at the concatenated input; only the learned
    # condition embedding owns parameters there.
    d_cemb = d[:, arch.flat_dim + arch.time_embed:]
    gseg["cond_w"][...] = cache["cond"].T @ d_cemb
    gseg["cond_b"][...] = d_cemb.sum(axis=0)
    return grad


@dataclass
class AdamW:
    """Decoupled-weight-decay adaptive optimizer with linear warm-up.

    ``decay`` > 0 turns on cosine annealing of the learning rate over that
    many post-warmup steps (held at the floor of zero afterwards)."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    warmup: int = 0
    decay: int = 0
    steps_done: int = field(default=0, repr=False)
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.steps_done += 1
        k = self.steps_done
        lr = self.lr * min(1.0, k / self.warmup) if self.warmup else self.lr
        if self.decay > 0:
            frac = min(1.0, max(0.0, (k - self.warmup) / self.decay))
            lr *= 0.5 * (1.0 + np.cos(np.pi * frac))
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** k)
        vhat = self.v / (1.0 - self.beta2 ** k)
        return theta - lr * (mhat / (np.sqrt(vhat) + self.eps)
                             + self.weight_decay * theta)
