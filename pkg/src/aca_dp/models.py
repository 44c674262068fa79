"""Small classifiers with analytic per-example gradients.

Parameters live in one flat float64 vector so clipping, noise and
distances all act on a single array. See `_kernels_py` for the layout.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import kernels

ARCHITECTURES = ("logistic", "mlp")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    architecture: str
    d_in: int
    num_classes: int
    hidden_units: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}")
        if self.d_in < 1 or self.num_classes < 1:
            raise ValueError("dimensions must be positive")
        if self.architecture == "mlp" and self.hidden_units < 1:
            raise ValueError("mlp needs hidden_units >= 1")
        if self.architecture == "logistic" and self.hidden_units != 0:
            object.__setattr__(self, "hidden_units", 0)

    @property
    def hidden(self) -> int:
        return self.hidden_units if self.architecture == "mlp" else 0

    @property
    def num_params(self) -> int:
        K, d_in, H = self.num_classes, self.d_in, self.hidden
        if H == 0:
            return K * d_in + K
        return H * d_in + H + K * H + K

    def weight_mask(self) -> np.ndarray:
        """True for weight entries, False for biases."""
        K, d_in, H = self.num_classes, self.d_in, self.hidden
        if H == 0:
            return np.r_[np.ones(K * d_in, bool), np.zeros(K, bool)]
        return np.r_[
            np.ones(H * d_in, bool), np.zeros(H, bool), np.ones(K * H, bool), np.zeros(K, bool)
        ]


def _check_theta(theta, spec: ModelSpec) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.num_params,):
        raise ValueError(f"parameter vector has shape {theta.shape}, expected ({spec.num_params},)")
    return theta


def init_model(spec: ModelSpec, seed: int, scale: float = 0.01) -> np.ndarray:
    if scale < 0:
        raise ValueError("scale must be non-negative")
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(spec.num_params) * scale
    theta[~spec.weight_mask()] = 0.0
    return theta


def scores(theta, spec: ModelSpec, X) -> np.ndarray:
    """Class logits for a batch of feature rows."""
    theta = _check_theta(theta, spec)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != spec.d_in:
        raise ValueError(f"features have length {X.shape[1]}, expected {spec.d_in}")
    K, d_in, H = spec.num_classes, spec.d_in, spec.hidden
    if H == 0:
        return X @ theta[: K * d_in].reshape(K, d_in).T + theta[K * d_in:]
    o = H * d_in
    hid = np.maximum(X @ theta[:o].reshape(H, d_in).T + theta[o: o + H], 0.0)
    o += H
    return hid @ theta[o: o + K * H].reshape(K, H).T + theta[o + K * H:]


def softmax(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def predict_batch(theta, spec: ModelSpec, X) -> np.ndarray:
    # argmax returns the first maximum, i.e. ties go to the lowest class
    return scores(theta, spec, X).argmax(axis=1)


def predict(theta, spec: ModelSpec, x) -> int:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("predict expects a single feature vector")
    return int(predict_batch(theta, spec, x[None, :])[0])


def accuracy(theta, spec: ModelSpec, X, y) -> float:
    return float(np.mean(predict_batch(theta, spec, X) == np.asarray(y)))


def losses(theta, spec: ModelSpec, X, y) -> np.ndarray:
    s = scores(theta, spec, X)
    rows = np.arange(s.shape[0])
    r = s - s[rows, np.asarray(y)][:, None]
    m = r.max(axis=1)
    e = np.exp(r - m[:, None])
    e[rows, np.asarray(y)] = 0.0
    other = e.sum(axis=1)
    # log1p when y is the top class, so losses near 0 keep relative precision
    with np.errstate(divide="ignore"):
        general = m + np.log(np.exp(-m) + other)
    return np.where(m == 0, np.log1p(other), general)


def loss(theta, spec: ModelSpec, z) -> float:
    x, y = z
    return float(losses(theta, spec, np.asarray(x)[None, :], [int(y)])[0])


def batch_gradients(theta, spec: ModelSpec, X, y) -> np.ndarray:
    """Per-example gradient matrix, one row per example."""
    theta = _check_theta(theta, spec)
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.d_in:
        raise ValueError(f"expected feature rows of length {spec.d_in}")
    y = np.ascontiguousarray(y, dtype=np.int64)
    G, _ = kernels.example_grads(theta, X, y, spec.d_in, spec.hidden, spec.num_classes)
    return G


def per_example_gradient(theta, spec: ModelSpec, z) -> np.ndarray:
    x, y = z
    return batch_gradients(theta, spec, np.asarray(x, dtype=np.float64)[None, :], [int(y)])[0]


def _scores_extended(theta, spec: ModelSpec, x):
    """Class scores in extended precision (finite-difference oracle)."""
    t = np.asarray(theta, dtype=np.longdouble)
    x = np.asarray(x, dtype=np.longdouble)
    K, d_in, H = spec.num_classes, spec.d_in, spec.hidden
    if H == 0:
        return t[: K * d_in].reshape(K, d_in) @ x + t[K * d_in:]
    o = H * d_in
    hid = np.maximum(t[:o].reshape(H, d_in) @ x + t[o: o + H], 0)
    o += H
    return t[o: o + K * H].reshape(K, H) @ hid + t[o + K * H:]


def _loss_difference(s_up, s_down, y: int):
    """L(s_up) - L(s_down) for cross-entropy, evaluated from the score
    differences so the result keeps relative precision even when both
    losses are large and their difference is tiny."""
    delta = s_up - s_down
    w = np.exp(s_down - s_down.max())
    return np.log1p((w * np.expm1(delta)).sum() / w.sum()) - delta[y]


def gradient_check(theta, spec: ModelSpec, z, step: float = 1e-6) -> float:
    """Largest relative gap between the analytic gradient and central
    differences of the loss."""
    if not step > 0:
        raise ValueError("step must be positive")
    theta = _check_theta(theta, spec)
    x, y = z
    analytic = per_example_gradient(theta, spec, z)
    base = theta.astype(np.longdouble)
    h = np.longdouble(step)
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        up = base.copy()
        down = base.copy()
        up[i] += h
        down[i] -= h
        diff = _loss_difference(_scores_extended(up, spec, x), _scores_extended(down, spec, x), int(y))
        numeric[i] = float(diff / (2 * h))
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)))


def save_checkpoint(path, theta, spec: ModelSpec) -> None:
    theta = _check_theta(theta, spec)
    record = {
        "format": "aca_dp.checkpoint",
        "version": CHECKPOINT_VERSION,
        "spec": asdict(spec),
        # float.hex round-trips exactly
        "params": [float(v).hex() for v in theta],
    }
    Path(path).write_text(json.dumps(record), encoding="utf-8")


def load_checkpoint(path) -> tuple[np.ndarray, ModelSpec]:
    record = json.loads(Path(path).read_text(encoding="utf-8"))
    if record.get("format") != "aca_dp.checkpoint":
        raise ValueError(f"{path}: not a checkpoint file")
    if record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {record.get('version')}")
    spec = ModelSpec(**record["spec"])
    theta = np.array([float.fromhex(v) for v in record["params"]])
    return _check_theta(theta, spec), spec
