"""Likelihood-ratio membership inference with shadow models, plus ROC metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .collective import Strategy, build_mixture
from .data import Dataset
from .models import ModelSpec, scores
from .seeding import derive_seed

P_CLAMP = 1e-9
PHI_MAX = math.log1p(-P_CLAMP) - math.log(P_CLAMP)
VAR_FLOOR = 1e-6


def confidences(theta, spec: ModelSpec, X, y) -> np.ndarray:
    """Logit-scaled true-label probability log(p / (1 - p)) for each row,
    with p clamped to [1e-9, 1 - 1e-9].

    Computed from the scores as s_y - logsumexp(s_other), which equals the
    logit of p without forming 1 - p; clamping p is clamping this value.
    """
    s = scores(theta, spec, X)
    y = np.asarray(y)
    rows = np.arange(len(y))
    s_y = s[rows, y]
    others = s.copy()
    others[rows, y] = -np.inf
    m = others.max(axis=1)
    lse = m + np.log(np.exp(others - m[:, None]).sum(axis=1))
    return np.clip(s_y - lse, -PHI_MAX, PHI_MAX)


def confidence(theta, spec: ModelSpec, z) -> float:
    x, y = z
    return float(confidences(theta, spec, np.asarray(x, dtype=np.float64)[None, :], [int(y)])[0])


@dataclass
class ShadowEnsemble:
    params: list[np.ndarray]
    masks: np.ndarray  # (N, pool) bool, True = member
    uncovered: np.ndarray  # pool indices lacking an IN or an OUT shadow

    def __post_init__(self):
        if len(self.params) < 2:
            raise ValueError("need at least two shadow models")
        if self.masks.shape[0] != len(self.params):
            raise ValueError("one membership mask per shadow is required")

    @property
    def size(self) -> int:
        return len(self.params)

    @property
    def fully_covered(self) -> bool:
        return self.uncovered.size == 0


def half_split(n: int, seed: int) -> np.ndarray:
    """Membership mask selecting floor(n/2) examples."""
    if n < 2:
        raise ValueError("pool must hold at least two examples to split in half")
    mask = np.zeros(n, dtype=bool)
    mask[np.random.default_rng(seed).permutation(n)[: n // 2]] = True
    return mask


def member_data(pool: Dataset, mask: np.ndarray, strategy: Strategy | None, seed: int) -> tuple[Dataset, np.ndarray]:
    """Training set for one half-split: the member half, with the collective
    (if any) planted inside it. Also returns which pool entries it replaced."""
    idx = np.flatnonzero(mask)
    members = pool.subset(idx)
    replaced = np.zeros(len(pool), dtype=bool)
    if strategy is not None and strategy.alpha > 0:
        members, coll = build_mixture(members, strategy, derive_seed(seed, "mixture"))
        replaced[idx[coll]] = True
    return members, replaced


def train_on_half(
    pool: Dataset,
    mask: np.ndarray,
    strategy: Strategy | None,
    train_fn: Callable[[Dataset, int], np.ndarray],
    seed: int,
) -> np.ndarray:
    members, _ = member_data(pool, mask, strategy, seed)
    return train_fn(members, derive_seed(seed, "train"))


def coverage_gaps(masks: np.ndarray) -> np.ndarray:
    n_in = masks.sum(axis=0)
    return np.flatnonzero((n_in == 0) | (n_in == masks.shape[0]))


def train_shadows(
    pool: Dataset,
    n_shadows: int,
    strategy: Strategy | None,
    train_fn: Callable[[Dataset, int], np.ndarray],
    seed: int,
    map_fn=map,
) -> ShadowEnsemble:
    """Train `n_shadows` models, each on a seeded random half of `pool`.

    Shadows come in complementary pairs (shadow 2k+1 trains on the other
    half of shadow 2k), so every example is IN and OUT equally often.
    `train_fn(dataset, seed)` returns trained parameters; `map_fn` lets
    callers run the independent trainings in parallel.
    """
    if n_shadows < 2:
        raise ValueError("need at least two shadow models")
    seeds = [derive_seed(seed, "shadow", i) for i in range(n_shadows)]
    masks = []
    for i, s in enumerate(seeds):
        masks.append(~masks[-1] if i % 2 else half_split(len(pool), s))
    masks = np.stack(masks)
    jobs = [(pool, m, strategy, train_fn, s) for m, s in zip(masks, seeds)]
    params = list(map_fn(_train_job, jobs))
    return ShadowEnsemble(params, masks, coverage_gaps(masks))


def _train_job(job):
    return train_on_half(*job)


def _log_normal(x, mu, var):
    return -0.5 * (np.log(2.0 * math.pi * var) + (x - mu) ** 2 / var)


def lira_score(phi: float, in_conf, out_conf, global_var_in: float | None = None, global_var_out: float | None = None) -> float:
    """log N(phi; mu_in, s_in^2) - log N(phi; mu_out, s_out^2).

    Sample variances (ddof=1) floored at 1e-6. A side with fewer than two
    values uses the supplied global variance (or the floor if none).
    """
    in_conf = np.asarray(in_conf, dtype=np.float64)
    out_conf = np.asarray(out_conf, dtype=np.float64)
    if in_conf.size == 0 or out_conf.size == 0:
        raise ValueError("need at least one IN and one OUT confidence")
    var_in = in_conf.var(ddof=1) if in_conf.size >= 2 else (global_var_in or VAR_FLOOR)
    var_out = out_conf.var(ddof=1) if out_conf.size >= 2 else (global_var_out or VAR_FLOOR)
    var_in, var_out = max(var_in, VAR_FLOOR), max(var_out, VAR_FLOOR)
    return float(_log_normal(phi, in_conf.mean(), var_in) - _log_normal(phi, out_conf.mean(), var_out))


def shadow_confidences(ensemble: ShadowEnsemble, spec: ModelSpec, pool: Dataset) -> np.ndarray:
    """(N, pool) matrix of each shadow's confidence on each pool example."""
    return np.stack([confidences(p, spec, pool.features, pool.labels) for p in ensemble.params])


def _masked_var(C, M):
    cnt = M.sum(axis=0)
    mean = np.where(M, C, 0.0).sum(axis=0) / np.maximum(cnt, 1)
    ss = np.where(M, (C - mean) ** 2, 0.0).sum(axis=0)
    return mean, cnt, ss


def lira_scores(target_conf, shadow_conf, masks) -> np.ndarray:
    """Vectorized `lira_score` over every pool example.

    The global fallback variance for each side is the pooled within-example
    variance over examples with at least two values on that side. Examples
    lacking any IN or any OUT shadow carry no evidence and score 0.
    """
    target_conf = np.asarray(target_conf, dtype=np.float64)
    masks = np.asarray(masks, dtype=bool)
    out = {}
    missing = np.zeros(masks.shape[1], dtype=bool)
    for name, M in (("in", masks), ("out", ~masks)):
        mean, cnt, ss = _masked_var(shadow_conf, M)
        missing |= cnt == 0
        ok = cnt >= 2
        pooled = ss[ok].sum() / (cnt[ok] - 1).sum() if ok.any() else VAR_FLOOR
        var = np.where(ok, ss / np.maximum(cnt - 1, 1), pooled)
        out[name] = (mean, np.maximum(var, VAR_FLOOR))
    (mu_in, v_in), (mu_out, v_out) = out["in"], out["out"]
    score = _log_normal(target_conf, mu_in, v_in) - _log_normal(target_conf, mu_out, v_out)
    return np.where(missing, 0.0, score)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


def roc(score, labels) -> RocCurve:
    """Sweep thresholds over unique scores in descending order; predict
    member when score >= threshold. Tied scores enter together."""
    score = np.asarray(score, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if score.shape != labels.shape or score.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    if np.isnan(score).any():
        raise ValueError("scores contain NaN")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both members and non-members")
    order = np.argsort(-score, kind="stable")
    s, lab = score[order], labels[order]
    # last index of every tie group
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(lab)[ends]
    fp = (ends + 1) - tp
    return RocCurve(
        np.r_[0.0, fp / n_neg], np.r_[0.0, tp / n_pos], np.r_[np.inf, s[ends]]
    )


def auc(curve: RocCurve) -> float:
    return float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))


def tpr_at_fpr(curve: RocCurve, fpr_target: float) -> float:
    """TPR at the last curve point whose FPR does not exceed the target."""
    if not 0.0 < fpr_target < 1.0:
        raise ValueError("fpr_target must lie in (0, 1)")
    idx = np.flatnonzero(curve.fpr <= fpr_target + 1e-15)
    return float(curve.tpr[idx[-1]])


@dataclass(frozen=True)
class AttackResult:
    scores: np.ndarray
    is_member: np.ndarray
    is_collective: np.ndarray
    auc: float
    tpr_at_low_fpr: float
    auc_clean: float
    tpr_at_low_fpr_clean: float
    covered: bool


def attack(target_theta, spec: ModelSpec, pool: Dataset, target_mask, ensemble: ShadowEnsemble,
           collective_mask=None, fpr_target: float = 1e-3) -> AttackResult:
    """Score every pool example against the target model.

    Metrics are reported for the whole pool and, separately, with collective
    examples removed (the `_clean` fields).
    """
    target_mask = np.asarray(target_mask, dtype=bool)
    coll = np.zeros(len(pool), bool) if collective_mask is None else np.asarray(collective_mask, bool)
    sc = shadow_confidences(ensemble, spec, pool)
    tc = confidences(target_theta, spec, pool.features, pool.labels)
    s = lira_scores(tc, sc, ensemble.masks)
    curve = roc(s, target_mask)
    keep = ~coll
    if keep.all():
        a_clean, t_clean = auc(curve), tpr_at_fpr(curve, fpr_target)
    else:
        c2 = roc(s[keep], target_mask[keep])
        a_clean, t_clean = auc(c2), tpr_at_fpr(c2, fpr_target)
    return AttackResult(s, target_mask, coll, auc(curve), tpr_at_fpr(curve, fpr_target),
                        a_clean, t_clean, ensemble.fully_covered)
