"""DPSGD with per-example clipping and Gaussian noise.

With ``noise_multiplier=0`` and ``clip=inf`` a step is exactly minibatch SGD.
Batches and noise come from separate generators keyed on (seed, step), so
changing the noise level never changes which examples are drawn.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .models import ModelSpec, losses

BATCH_STREAM = 0
NOISE_STREAM = 1
SHUFFLE_STREAM = 2


@dataclass(frozen=True)
class PrivacyParams:
    noise_multiplier: float = 0.0
    clip: float = math.inf
    delta: float = 1e-5

    def __post_init__(self):
        if self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be >= 0")
        if not self.clip > 0:
            raise ValueError("clip must be > 0 (use inf to disable clipping)")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if math.isinf(self.clip) and self.noise_multiplier > 0:
            raise ValueError("noise scale sigma*C is undefined for infinite clip")

    @property
    def is_private(self) -> bool:
        return self.noise_multiplier > 0


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    steps: int
    batch: str = "poisson"  # "poisson" or "fixed_shuffle"
    sample_rate: float = 0.01
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch == "poisson":
            if not 0.0 < self.sample_rate <= 1.0:
                raise ValueError("sample_rate must lie in (0, 1]")
        elif self.batch == "fixed_shuffle":
            if self.batch_size < 1:
                raise ValueError("batch_size must be >= 1")
        else:
            raise ValueError(f"unknown batch scheme {self.batch!r}")

    def sampling_rate(self, n: int) -> float:
        """Per-step inclusion probability used for privacy accounting."""
        if self.batch == "poisson":
            return self.sample_rate
        return min(1.0, self.batch_size / n)


def steps_for_epochs(n: int, epochs: float, batch: str, sample_rate: float = 0.01, batch_size: int = 64) -> int:
    if batch == "poisson":
        return max(1, int(round(epochs / sample_rate)))
    return max(1, int(round(epochs * math.ceil(n / batch_size))))


@dataclass
class TrainTrace:
    mean_loss: list[float] = field(default_factory=list)
    dist_to_target: list[float] = field(default_factory=list)
    theta: np.ndarray | None = None
    steps: int = 0
    skipped_steps: int = 0

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "mean_loss", "dist_to_target"])
            for t, ml in enumerate(self.mean_loss):
                dist = repr(self.dist_to_target[t]) if self.dist_to_target else ""
                writer.writerow([t, repr(ml), dist])


def step_rng(seed: int, stream: int, t: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, t])


def clip_gradient(g, clip: float) -> np.ndarray:
    """Rescale `g` to norm at most `clip`, keeping its direction."""
    g = np.asarray(g, dtype=np.float64)
    if math.isinf(clip):
        return g.copy()
    norm = float(np.linalg.norm(g))
    if norm <= clip:
        return g.copy()
    factor = clip / norm
    out = g * factor
    # rounding can leave the norm an ulp above clip
    while np.linalg.norm(out) > clip:
        factor = np.nextafter(factor, 0.0)
        out = g * factor
    return out


def sample_batch(n: int, tc: TrainConfig, t: int) -> np.ndarray:
    """Indices used at step t; a pure function of (seed, t)."""
    if n < 1:
        raise ValueError("dataset is empty")
    if tc.batch == "poisson":
        if tc.sample_rate >= 1.0:
            return np.arange(n)
        return np.flatnonzero(step_rng(tc.seed, BATCH_STREAM, t).random(n) < tc.sample_rate)
    per_epoch = math.ceil(n / tc.batch_size)
    epoch, k = divmod(t, per_epoch)
    perm = np.random.default_rng([tc.seed, SHUFFLE_STREAM, epoch]).permutation(n)
    return perm[k * tc.batch_size: (k + 1) * tc.batch_size]


def dpsgd_step(theta, spec: ModelSpec, X, y, pp: PrivacyParams, lr: float, rng=None):
    """One DPSGD update on the batch (X, y).

    Returns the new parameters and the batch's mean loss at `theta`.
    """
    n = X.shape[0]
    if n == 0:
        raise ValueError("batch must be non-empty")
    total, max_norm, loss_sum = kernels.clipped_grad_sum(
        theta, X, y, spec.d_in, spec.hidden, spec.num_classes, pp.clip
    )
    assert max_norm <= pp.clip, f"clipped norm {max_norm} exceeds {pp.clip}"
    if pp.noise_multiplier > 0:
        if rng is None:
            raise ValueError("a noise generator is required when noise_multiplier > 0")
        total = total + rng.standard_normal(total.shape[0]) * (pp.noise_multiplier * pp.clip)
    return theta - lr * (total / n), loss_sum / n


def train(
    X,
    y,
    spec: ModelSpec,
    tc: TrainConfig,
    pp: PrivacyParams,
    theta0,
    target=None,
) -> TrainTrace:
    """Run `tc.steps` DPSGD steps from `theta0`.

    Empty Poisson batches still count as steps (the mechanism ran) but leave
    the parameters unchanged; their loss entry is NaN.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    theta = np.array(theta0, dtype=np.float64)
    if theta.shape != (spec.num_params,):
        raise ValueError("theta0 does not match the model spec")
    if X.shape[1] != spec.d_in:
        raise ValueError("feature length does not match the model spec")
    trace = TrainTrace()
    for t in range(tc.steps):
        idx = sample_batch(X.shape[0], tc, t)
        if idx.size == 0:
            trace.mean_loss.append(math.nan)
            trace.skipped_steps += 1
        else:
            theta, batch_loss = dpsgd_step(
                theta, spec, X[idx], y[idx], pp, tc.learning_rate, step_rng(tc.seed, NOISE_STREAM, t)
            )
            trace.mean_loss.append(batch_loss)
        if target is not None:
            trace.dist_to_target.append(float(np.linalg.norm(theta - target)))
    trace.theta = theta
    trace.steps = tc.steps
    return trace


def mean_loss(theta, spec: ModelSpec, X, y) -> float:
    return float(losses(theta, spec, X, y).mean())
