"""Lower bounds on collective success under clipped, noisy gradient descent,
and a Monte Carlo simulator of the idealized dynamics they describe.

The learner follows expected (clipped) gradients of a mixture in which a
fraction alpha redirects the base gradient toward a target model:

    theta <- theta - lr * (alpha*clip(g_coll) + (1-alpha)*clip(g_base) + N(0, (sigma C)^2 I))

Success after T steps is -||theta_T - theta*||, lower-bounded with
probability 1 - delta_conf by

    -(1 - lr*B)^T ||theta_0 - theta*|| - sigma*C * f1 * f2,
    B = alpha * xi_min,  f1 = (1 - (1 - lr*B)^T) / B,  f2 = sqrt(d) + sqrt(2 log(1/delta_conf)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels_py import clip_scales


@dataclass(frozen=True)
class BoundInputs:
    alpha: float
    sigma: float
    clip: float
    steps: int
    lr: float
    dim: int
    delta_conf: float
    dist0: float
    xi_min: float

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not self.clip > 0:
            raise ValueError("clip must be > 0")
        if self.steps < 1 or self.dim < 1:
            raise ValueError("steps and dim must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not 0.0 < self.delta_conf < 1.0:
            raise ValueError("delta_conf must lie in (0, 1)")
        if self.dist0 < 0:
            raise ValueError("dist0 must be >= 0")
        if not self.xi_min > 0:
            raise ValueError("xi_min must be > 0")


@dataclass(frozen=True)
class BoundResult:
    B: float
    f1: float
    f2: float
    lower_bound: float
    contraction_ok: bool


def tail_bound(dim: int, sigma_coord: float, delta: float) -> float:
    """High-probability (1 - delta) bound on the norm of a d-dimensional
    N(0, sigma_coord^2 I) vector."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if sigma_coord < 0:
        raise ValueError("sigma_coord must be >= 0")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    return sigma_coord * (math.sqrt(dim) + math.sqrt(2.0 * math.log(1.0 / delta)))


def compute_bound(inp: BoundInputs) -> BoundResult:
    if math.isinf(inp.clip) and inp.sigma > 0:
        raise ValueError("noise term sigma*C is undefined for infinite clip")
    B = inp.alpha * inp.xi_min
    rate = 1.0 - inp.lr * B
    contraction_ok = 0.0 < inp.lr * B < 1.0
    # |rate| keeps f1 >= 0 and the bound <= 0 when the step overshoots (flagged)
    r = abs(rate)
    decay = r ** inp.steps
    if r == 1.0:
        f1 = inp.lr * inp.steps
    elif contraction_ok:
        f1 = (1.0 - decay) / B
    else:
        f1 = inp.lr * (1.0 - decay) / (1.0 - r)
    f2 = math.sqrt(inp.dim) + math.sqrt(2.0 * math.log(1.0 / inp.delta_conf))
    noise_term = 0.0 if inp.sigma == 0 else inp.sigma * inp.clip * f1 * f2
    return BoundResult(B, f1, f2, -decay * inp.dist0 - noise_term, contraction_ok)


def redirect_gradient(g_base, alpha: float, xi: float, theta, target) -> np.ndarray:
    """Collective gradient whose alpha-mixture with `g_base` equals
    alpha * xi * (theta - target)."""
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    g_base = np.asarray(g_base, dtype=np.float64)
    diff = np.asarray(theta, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return -((1.0 - alpha) / alpha) * g_base + xi * diff


def xi_c(g_clip_collective, g_clip_base, alpha: float, theta, target) -> float:
    """Realized redirect strength: ||g_coll + (1-alpha)/alpha g_base|| / ||theta - target||."""
    diff = np.linalg.norm(np.asarray(theta, dtype=np.float64) - np.asarray(target, dtype=np.float64))
    if diff == 0:
        raise ValueError("theta equals the target; the ratio is undefined")
    combined = np.asarray(g_clip_collective, dtype=np.float64) + (
        (1.0 - alpha) / alpha
    ) * np.asarray(g_clip_base, dtype=np.float64)
    return float(np.linalg.norm(combined) / diff)


@dataclass(frozen=True)
class QuadraticLandscape:
    """Base loss curvature/2 * ||theta - center||^2."""

    center: np.ndarray
    curvature: float = 1.0

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return self.curvature * (theta - self.center)


def clip_rows(G: np.ndarray, clip: float) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise clipping; also returns which rows were rescaled."""
    scale, _ = clip_scales(G, clip)
    return G * scale[:, None], scale < 1.0


@dataclass
class SimulationResult:
    final_dist: np.ndarray
    xi_min: np.ndarray
    saturated_steps: np.ndarray
    xi: float
    quantiles: dict[float, float] = field(default_factory=dict)

    @property
    def success(self) -> np.ndarray:
        return -self.final_dist


def simulate_dynamics(
    landscape,
    inp: BoundInputs,
    trials: int,
    seed: int,
    theta0,
    target,
    xi: float | None = None,
) -> SimulationResult:
    """Run `trials` independent trajectories of the idealized learner.

    The collective answers every step with `redirect_gradient` against the
    current clipped base gradient; its own gradient is then clipped. Steps
    where that second clip binds are counted as saturated, since the mixture
    no longer equals alpha*xi*(theta - target) exactly.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    theta0 = np.asarray(theta0, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if theta0.shape != (inp.dim,) or target.shape != (inp.dim,):
        raise ValueError("theta0 and target must have length dim")
    if not math.isclose(float(np.linalg.norm(theta0 - target)), inp.dist0, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError("dist0 does not match ||theta0 - target||")
    if xi is None:
        xi = 1.0 / (2.0 * inp.alpha * inp.lr)
    a = inp.alpha
    rng = np.random.default_rng(seed)
    theta = np.tile(theta0, (trials, 1))
    xi_min = np.full(trials, np.inf)
    saturated = np.zeros(trials, dtype=np.int64)
    noise_sd = inp.sigma * inp.clip if inp.sigma > 0 else 0.0
    for _ in range(inp.steps):
        diff = theta - target
        g_base, _ = clip_rows(landscape.grad(theta), inp.clip)
        intended = -((1.0 - a) / a) * g_base + xi * diff
        g_coll, hit = clip_rows(intended, inp.clip)
        saturated += hit
        dist = np.linalg.norm(diff, axis=1)
        live = dist > 0
        if live.any():
            ratio = np.linalg.norm(g_coll[live] + ((1.0 - a) / a) * g_base[live], axis=1) / dist[live]
            xi_min[live] = np.minimum(xi_min[live], ratio)
        step = a * g_coll + (1.0 - a) * g_base
        if noise_sd > 0:
            step = step + noise_sd * rng.standard_normal(theta.shape)
        theta = theta - inp.lr * step
    final = np.linalg.norm(theta - target, axis=1)
    # trajectories that sat on the target from the start never measured a ratio
    xi_min[~np.isfinite(xi_min)] = xi
    qs = {q: float(np.quantile(-final, q)) for q in (0.01, 0.05, 0.5)}
    return SimulationResult(final, xi_min, saturated, xi, qs)


def per_trial_bounds(sim: SimulationResult, inp: BoundInputs) -> np.ndarray:
    """Lower bound for each trajectory using its own realized xi_min."""
    out = np.empty(sim.xi_min.shape[0])
    for i, x in enumerate(sim.xi_min):
        out[i] = compute_bound(replace(inp, xi_min=float(x))).lower_bound
    return out


@dataclass(frozen=True)
class BoundCheck:
    violation_rate: float
    allowed_rate: float
    passed: bool
    trials: int


def binomial_slack(delta_conf: float, trials: int) -> float:
    return 2.0 * math.sqrt(delta_conf * (1.0 - delta_conf) / trials)


def verify_bound(success, lower_bound, delta_conf: float, rel_tol: float = 1e-9) -> BoundCheck:
    """Pass iff the fraction of trials below the bound is at most
    delta_conf + 2*sqrt(delta_conf(1-delta_conf)/trials).

    `lower_bound` may be a scalar or one value per trial. A trial counts as
    a violation only if it falls below the bound by more than `rel_tol`
    relative, so exact-equality cases are not decided by rounding.
    """
    success = np.asarray(success, dtype=np.float64)
    trials = success.shape[0]
    if trials < 100:
        raise ValueError("verification needs at least 100 trials")
    lb = np.broadcast_to(np.asarray(lower_bound, dtype=np.float64), success.shape)
    violations = success < lb - rel_tol * np.maximum(1.0, np.abs(lb))
    rate = float(violations.mean())
    allowed = delta_conf + binomial_slack(delta_conf, trials)
    return BoundCheck(rate, allowed, rate <= allowed, trials)
