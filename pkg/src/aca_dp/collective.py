"""Signal planting by a collective: transforms, mixtures, success, critical mass."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, Example
from .models import ModelSpec, predict_batch
from .seeding import derive_seed


@dataclass(frozen=True)
class PatchSet:
    """Set a rectangular pixel patch (all channels) to a constant."""

    rows: int
    cols: int
    row0: int
    col0: int
    value: float
    height: int
    width: int
    channels: int = 1

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.row0 < 0 or self.col0 < 0:
            raise ValueError("patch extent must be positive and offsets non-negative")
        if self.row0 + self.rows > self.height or self.col0 + self.cols > self.width:
            raise ValueError("patch does not fit inside the image")

    @property
    def length(self) -> int:
        return self.height * self.width * self.channels

    def apply(self, X: np.ndarray) -> np.ndarray:
        img = X.reshape(-1, self.height, self.width, self.channels).copy()
        img[:, self.row0: self.row0 + self.rows, self.col0: self.col0 + self.cols, :] = self.value
        return img.reshape(X.shape)


@dataclass(frozen=True)
class GridPerturb:
    """Add `magnitude` to pixels at (row, col) with row % step == 0 and
    col % step == 0; a pixel that would pass `max_value` is lowered by
    `magnitude` instead."""

    step: int
    magnitude: float
    max_value: float
    height: int
    width: int
    channels: int = 1

    def __post_init__(self):
        if self.step < 1:
            raise ValueError("step must be >= 1")
        if not self.magnitude > 0:
            raise ValueError("magnitude must be > 0")

    @property
    def length(self) -> int:
        return self.height * self.width * self.channels

    def apply(self, X: np.ndarray) -> np.ndarray:
        img = X.reshape(-1, self.height, self.width, self.channels).copy()
        sites = img[:, :: self.step, :: self.step, :]
        raised = sites + self.magnitude
        img[:, :: self.step, :: self.step, :] = np.where(
            raised > self.max_value, sites - self.magnitude, raised
        )
        return img.reshape(X.shape)


@dataclass(frozen=True)
class FeatureOffset:
    index: int
    offset: float
    d_in: int | None = None

    def __post_init__(self):
        if self.index < 0 or (self.d_in is not None and self.index >= self.d_in):
            raise ValueError("feature index out of range")

    @property
    def length(self) -> int | None:
        return self.d_in

    def apply(self, X: np.ndarray) -> np.ndarray:
        if self.index >= X.shape[-1]:
            raise ValueError(f"feature index {self.index} out of range for length {X.shape[-1]}")
        out = np.array(X, dtype=np.float64, copy=True)
        out[..., self.index] += self.offset
        return out


SignalTransform = PatchSet | GridPerturb | FeatureOffset


@dataclass(frozen=True)
class Strategy:
    transform: SignalTransform | None
    target_label: int
    alpha: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.target_label < 0:
            raise ValueError("target_label must be a class index")


def apply_signal_batch(X, transform: SignalTransform | None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if transform is None:
        return X.copy()
    length = transform.length
    if length is not None and X.shape[-1] != length:
        raise ValueError(f"feature length {X.shape[-1]} does not match transform geometry {length}")
    return transform.apply(np.atleast_2d(X)).reshape(X.shape)


def apply_signal(x, transform: SignalTransform | None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("apply_signal expects one feature vector")
    return apply_signal_batch(x, transform)


def feature_label_strategy(z, strategy: Strategy) -> Example:
    x, _ = z
    return Example(apply_signal(x, strategy.transform), strategy.target_label)


def collective_size(alpha: float, n: int) -> int:
    # floor(alpha * n), tolerant of alpha*n landing an ulp below an integer
    return min(n, int(math.floor(alpha * n + 1e-9)))


def build_mixture(ds: Dataset, strategy: Strategy, seed: int) -> tuple[Dataset, np.ndarray]:
    """Replace floor(alpha * n) uniformly chosen examples with their
    strategy images. Returns the mixed dataset and the membership mask.

    Members are a prefix of one seeded permutation, so for a fixed seed the
    collective at a larger alpha contains the one at any smaller alpha.
    """
    if strategy.target_label >= ds.num_classes:
        raise ValueError("target label outside the dataset's classes")
    n = len(ds)
    m = collective_size(strategy.alpha, n)
    mask = np.zeros(n, dtype=bool)
    if m == 0:
        return ds, mask
    chosen = np.random.default_rng(seed).permutation(n)[:m]
    mask[chosen] = True
    X = ds.features.copy()
    y = ds.labels.copy()
    X[mask] = apply_signal_batch(X[mask], strategy.transform)
    y[mask] = strategy.target_label
    return ds.with_data(X, y), mask


def measure_success(theta, spec: ModelSpec, test: Dataset | np.ndarray, strategy: Strategy, transform_features=None) -> float:
    """Fraction of signal-planted test inputs classified as the target label.

    `transform_features`, if given, maps planted raw features into model
    input space (e.g. normalization) before prediction.
    """
    X = test.features if isinstance(test, Dataset) else np.asarray(test, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("test set is empty")
    planted = apply_signal_batch(X, strategy.transform)
    if transform_features is not None:
        planted = transform_features(planted)
    return float(np.mean(predict_batch(theta, spec, planted) == strategy.target_label))


def critical_mass(alphas: Sequence[float], successes: Sequence[float], target: float) -> float | None:
    """Smallest alpha whose success reaches `target`."""
    for a, s in zip(alphas, successes):
        if s >= target:
            return a
    return None


def critical_mass_search(
    alphas: Sequence[float],
    train_and_eval: Callable[[float, int], float],
    target: float,
    seed: int = 0,
) -> float | None:
    """Scan ascending alphas, training one model per alpha via
    ``train_and_eval(alpha, seed_for_alpha)``; stop at the first alpha whose
    measured success reaches `target`."""
    if any(b < a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alphas must be ascending")
    for a in alphas:
        if train_and_eval(a, derive_seed(seed, "alpha", float(a))) >= target:
            return a
    return None
