"""Renyi-DP accounting for the (Poisson-subsampled) Gaussian mechanism.

Per-step RDP is composed additively over steps and converted to (eps, delta)
with the standard bound eps = min_a rdp(a) + log(1/delta) / (a - 1).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

DEFAULT_ORDERS: tuple[float, ...] = tuple(range(2, 65)) + (128, 256)


@dataclass(frozen=True)
class RdpCurve:
    orders: tuple[float, ...]
    rdp_values: tuple[float, ...]

    def __post_init__(self):
        if len(self.orders) != len(self.rdp_values) or not self.orders:
            raise ValueError("orders and rdp_values must be non-empty and of equal length")
        if any(a <= 1 for a in self.orders):
            raise ValueError("orders must exceed 1")
        if any(b <= a for a, b in zip(self.orders, self.orders[1:])):
            raise ValueError("orders must be strictly increasing")
        if any(v < 0 or math.isnan(v) for v in self.rdp_values):
            raise ValueError("rdp values must be non-negative")

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["order", "rdp"])
            for a, v in zip(self.orders, self.rdp_values):
                writer.writerow([repr(float(a)), repr(float(v))])


def rdp_gaussian(sigma: float, order: float) -> float:
    if not sigma > 0:
        raise ValueError("sigma must be > 0; sigma = 0 has unbounded privacy loss")
    if not order > 1:
        raise ValueError("order must exceed 1")
    return order / (2.0 * sigma * sigma)


def _log_add(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi, lo = max(a, b), min(a, b)
    return hi + math.log1p(math.exp(lo - hi))


def rdp_subsampled_gaussian(q: float, sigma: float, order: int) -> float:
    """Binomial-expansion RDP bound of the Poisson-subsampled Gaussian:

        1/(a-1) * log sum_k C(a,k) (1-q)^(a-k) q^k exp(k(k-1) / (2 sigma^2))

    summed in log space. Returns inf if the result is not finite.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError("q must lie in (0, 1]")
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    if int(order) != order or order < 2:
        raise ValueError("order must be an integer >= 2")
    a = int(order)
    if q == 1.0:
        # only the k = a term survives
        return rdp_gaussian(sigma, a)
    log_q, log_1mq = math.log(q), math.log1p(-q)
    log_sum = -math.inf
    for k in range(a + 1):
        log_binom = math.lgamma(a + 1) - math.lgamma(k + 1) - math.lgamma(a - k + 1)
        term = log_binom + k * log_q + (a - k) * log_1mq + k * (k - 1) / (2.0 * sigma * sigma)
        log_sum = _log_add(log_sum, term)
    value = log_sum / (a - 1)
    if not math.isfinite(value):
        return math.inf
    return max(value, 0.0)


def rdp_curve(q: float, sigma: float, orders: Sequence[float] = DEFAULT_ORDERS) -> RdpCurve:
    """Per-step RDP curve. Fractional orders are allowed only when q == 1."""
    if q == 1.0:
        values = [rdp_gaussian(sigma, a) for a in orders]
    else:
        values = [rdp_subsampled_gaussian(q, sigma, a) for a in orders]
    return RdpCurve(tuple(float(a) for a in orders), tuple(values))


def compose(per_step: RdpCurve, steps: int) -> RdpCurve:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    return RdpCurve(per_step.orders, tuple(v * steps for v in per_step.rdp_values))


def rdp_to_eps(curve: RdpCurve, delta: float) -> tuple[float, float | None]:
    """Return (eps, minimizing order); (inf, None) if every value is inf."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    log_inv_delta = math.log(1.0 / delta)
    best, best_order = math.inf, None
    for a, v in zip(curve.orders, curve.rdp_values):
        if not math.isfinite(v):
            continue
        eps = v + log_inv_delta / (a - 1)
        if eps < best:
            best, best_order = eps, a
    return best, best_order


def epsilon(sigma: float, q: float, steps: int, delta: float, orders: Sequence[float] = DEFAULT_ORDERS) -> float:
    """(eps, delta) cost of `steps` subsampled Gaussian steps; inf if sigma == 0."""
    if sigma == 0:
        return math.inf
    return rdp_to_eps(compose(rdp_curve(q, sigma, orders), steps), delta)[0]


def sigma_for_epsilon(
    target_eps: float,
    delta: float,
    q: float,
    steps: int,
    lo: float = 1e-3,
    hi: float = 1e3,
    orders: Sequence[float] = DEFAULT_ORDERS,
) -> float:
    """Noise multiplier whose epsilon matches `target_eps`, by bisection in
    log(sigma) until the bracket is relatively 1e-10 wide.

    epsilon is continuous and decreasing in sigma, so the result meets
    |eps(sigma) - target| <= 1e-3 * target with a wide margin.
    """
    if not target_eps > 0:
        raise ValueError("target epsilon must be > 0")
    eps_lo = epsilon(lo, q, steps, delta, orders)
    eps_hi = epsilon(hi, q, steps, delta, orders)
    if not eps_hi <= target_eps <= eps_lo:
        raise ValueError(
            f"target eps {target_eps} outside [{eps_hi:.6g}, {eps_lo:.6g}] reachable for sigma in [{lo}, {hi}]"
        )
    while hi / lo - 1.0 > 1e-10:
        mid = math.sqrt(lo * hi)
        if epsilon(mid, q, steps, delta, orders) > target_eps:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


def fit_sampling(
    table: Sequence[tuple[float, float]],
    delta: float,
    rates: Sequence[float],
    step_counts: Sequence[int],
    orders: Sequence[float] = DEFAULT_ORDERS,
) -> tuple[float, int, float]:
    """Grid-search (q, T) minimizing the worst relative error against
    reported (sigma, eps) pairs. Returns (q, T, max relative error)."""
    best = (math.nan, 0, math.inf)
    for q in rates:
        per_step = {s: rdp_curve(q, s, orders) for s, _ in table}
        for T in step_counts:
            err = max(
                abs(rdp_to_eps(compose(per_step[s], T), delta)[0] - e) / e for s, e in table
            )
            if err < best[2]:
                best = (q, T, err)
    return best

