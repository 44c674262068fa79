import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aca_dp.collective import FeatureOffset, Strategy
from aca_dp.data import Dataset
from aca_dp.mia import (
    RocCurve,
    ShadowEnsemble,
    attack,
    auc,
    confidence,
    confidences,
    half_split,
    lira_score,
    lira_scores,
    member_data,
    roc,
    tpr_at_fpr,
    train_shadows,
)
from aca_dp.models import ModelSpec

SPEC = ModelSpec("logistic", 2, 2)


def _theta(bias1):
    return np.r_[np.zeros(4), 0.0, bias1]


def _mann_whitney(scores, labels):
    pos, neg = scores[labels], scores[~labels]
    diff = pos[:, None] - neg[None, :]
    return (np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / (pos.size * neg.size)


def test_confidence_examples():
    z = (np.zeros(2), 1)
    assert confidence(_theta(0.0), SPEC, z) == 0.0
    assert confidence(_theta(1.0), SPEC, z) == pytest.approx(1.0, abs=1e-12)
    phi = confidence(_theta(100.0), SPEC, z)
    assert phi == pytest.approx(math.log((1 - 1e-9) / 1e-9), rel=1e-12)
    assert phi == pytest.approx(20.72, abs=0.01)
    assert confidence(_theta(-100.0), SPEC, z) == pytest.approx(-phi, rel=1e-9)


def test_confidences_vectorized(rng):
    spec = ModelSpec("mlp", 3, 4, 5)
    theta = rng.standard_normal(spec.num_params)
    X = rng.standard_normal((20, 3))
    y = rng.integers(0, 4, 20)
    batch = confidences(theta, spec, X, y)
    single = [confidence(theta, spec, (X[i], y[i])) for i in range(20)]
    np.testing.assert_allclose(batch, single, rtol=1e-13)


def test_lira_score_examples():
    # means 5 and 0, unit sample variances
    assert lira_score(5.0, [4.0, 5.0, 6.0], [-1.0, 0.0, 1.0]) == pytest.approx(12.5, rel=1e-12)
    assert lira_score(2.5, [4.0, 5.0, 6.0], [-1.0, 0.0, 1.0]) == pytest.approx(0.0, abs=1e-12)
    s = lira_score(0.5, [1.0, 2.0], [0.0, 0.0, 0.0])
    assert math.isfinite(s)
    assert s == pytest.approx(
        -0.5 * (math.log(2 * math.pi * 0.5) + 1.0 / 0.5) + 0.5 * (math.log(2 * math.pi * 1e-6) + 0.25 / 1e-6), rel=1e-12
    )


def test_lira_score_fallback():
    a = lira_score(1.0, [2.0], [0.0, 1.0], global_var_in=2.0)
    expect = -0.5 * (math.log(2 * math.pi * 2.0) + 1.0 / 2.0) + 0.5 * (math.log(2 * math.pi * 0.5) + 0.25 / 0.5)
    assert a == pytest.approx(expect, rel=1e-12)
    with pytest.raises(ValueError):
        lira_score(0.0, [], [1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.1, 3.0))
def test_lira_monotone(p1, p2, gap):
    lo, hi = sorted((p1, p2))
    in_c, out_c = np.array([gap - 1, gap + 1]), np.array([-1.0, 1.0])
    assert lira_score(lo, in_c, out_c) <= lira_score(hi, in_c, out_c)


def test_lira_scores_matches_scalar(rng):
    N, n = 6, 15
    masks = rng.random((N, n)) < 0.5
    masks[0, :] = True
    masks[1, :] = False
    masks[2:, 3] = False  # example 3 has one IN shadow: fallback path
    sc = rng.standard_normal((N, n))
    tc = rng.standard_normal(n)
    vec = lira_scores(tc, sc, masks)
    pooled = {}
    for side, M in (("in", masks), ("out", ~masks)):
        cols = [sc[M[:, j], j] for j in range(n) if M[:, j].sum() >= 2]
        pooled[side] = sum(((c - c.mean()) ** 2).sum() for c in cols) / sum(c.size - 1 for c in cols)
    for j in range(n):
        ref = lira_score(tc[j], sc[masks[:, j], j], sc[~masks[:, j], j], pooled["in"], pooled["out"])
        assert vec[j] == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_lira_scores_missing_side_zero(rng):
    masks = np.array([[True, True], [True, False]])
    out = lira_scores(np.array([0.3, 0.3]), rng.standard_normal((2, 2)), masks)
    assert out[0] == 0.0 and out[1] != 0.0


def test_roc_examples(rng):
    labels = np.r_[np.ones(50, bool), np.zeros(50, bool)]
    perfect = roc(np.r_[np.ones(50), np.zeros(50)], labels)
    assert auc(perfect) == 1.0 and tpr_at_fpr(perfect, 1e-3) == 1.0
    const = roc(np.zeros(100), labels)
    assert auc(const) == 0.5
    np.testing.assert_array_equal(const.fpr, [0, 1])
    big = rng.integers(0, 2, 20_000).astype(bool)
    assert abs(auc(roc(rng.random(20_000), big)) - 0.5) < 0.02
    with pytest.raises(ValueError):
        roc(np.zeros(3), np.ones(3, bool))
    with pytest.raises(ValueError):
        roc(np.array([np.nan, 1.0]), np.array([True, False]))


def test_roc_invariants(rng):
    s = rng.integers(0, 10, 300).astype(float)
    c = roc(s, rng.random(300) < 0.4)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
    assert (c.fpr[0], c.tpr[0], c.fpr[-1], c.tpr[-1]) == (0, 0, 1, 1)
    assert np.all(np.diff(c.thresholds) < 0)


@pytest.mark.parametrize("ties", [False, True])
def test_auc_equals_mann_whitney(rng, ties):
    for _ in range(5):
        s = rng.standard_normal(1000)
        if ties:
            s = np.round(s, 1)
        lab = rng.random(1000) < 0.3
        assert abs(auc(roc(s, lab)) - _mann_whitney(s, lab)) <= 1e-9


def test_tpr_at_fpr_rules():
    grid = np.linspace(0, 1, 1001)
    diag = RocCurve(grid, grid, np.r_[np.inf, -grid[1:]])
    assert auc(diag) == pytest.approx(0.5, abs=1e-12)
    assert tpr_at_fpr(diag, 1e-3) == pytest.approx(1e-3, abs=1e-12)
    coarse = RocCurve(np.array([0, 0.5, 1.0]), np.array([0, 0.9, 1.0]), np.array([np.inf, 1, 0]))
    assert tpr_at_fpr(coarse, 1e-3) == 0.0
    assert tpr_at_fpr(coarse, 0.5) == 0.9
    for bad in (0.0, 1.0):
        with pytest.raises(ValueError):
            tpr_at_fpr(coarse, bad)


def _pool(n=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    return Dataset(X, (X[:, 0] > 0).astype(np.int64), 2)


def _mean_train(ds, seed):
    # stand-in trainer: deterministic and sensitive to membership
    theta = np.zeros(SPEC.num_params)
    theta[:4] = np.tile(ds.features.mean(axis=0), 2) * np.array([1, 1, -1, -1])
    theta[4] = 1e-3 * (seed % 997)
    return theta


def test_half_split():
    m = half_split(7, 3)
    assert m.sum() == 3
    np.testing.assert_array_equal(m, half_split(7, 3))
    with pytest.raises(ValueError):
        half_split(1, 0)


def test_train_shadows_small_pool():
    pool = _pool(4)
    ens = train_shadows(pool, 2, None, _mean_train, 11)
    assert ens.size == 2
    assert (ens.masks.sum(axis=1) == 2).all()
    assert ens.fully_covered
    again = train_shadows(pool, 2, None, _mean_train, 11)
    np.testing.assert_array_equal(ens.masks, again.masks)
    for a, b in zip(ens.params, again.params):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        train_shadows(pool, 1, None, _mean_train, 0)


def test_train_shadows_coverage_16():
    ens = train_shadows(_pool(60), 16, None, _mean_train, 5)
    assert ens.fully_covered
    n_in = ens.masks.sum(axis=0)
    assert np.all(n_in == 8)


def test_ensemble_flags_uncovered():
    masks = np.array([[True, True, False], [True, False, True]])
    from aca_dp.mia import coverage_gaps

    ens = ShadowEnsemble([np.zeros(6), np.zeros(6)], masks, coverage_gaps(masks))
    assert not ens.fully_covered and ens.uncovered.tolist() == [0]
    with pytest.raises(ValueError):
        ShadowEnsemble([np.zeros(6)], masks[:1], np.array([], int))


def test_member_data_plants_collective():
    pool = _pool(40, 2)
    mask = half_split(40, 1)
    strat = Strategy(FeatureOffset(0, 5.0), 1, 0.25)
    members, replaced = member_data(pool, mask, strat, 9)
    assert len(members) == 20 and replaced.sum() == 5
    assert not (replaced & ~mask).any()
    shifted = np.sort(pool.features[replaced][:, 0] + 5.0)
    assert set(np.round(shifted, 12)) <= set(np.round(members.features[:, 0], 12))
    clean, none = member_data(pool, mask, None, 9)
    assert not none.any()
    np.testing.assert_array_equal(clean.features, pool.features[mask])


def test_attack_end_to_end_shapes():
    pool = _pool(40, 4)
    ens = train_shadows(pool, 4, None, _mean_train, 1)
    tmask = half_split(40, 99)
    target = _mean_train(pool.subset(np.flatnonzero(tmask)), 0)
    coll = np.zeros(40, bool)
    coll[np.flatnonzero(tmask)[:3]] = True
    res = attack(target, SPEC, pool, tmask, ens, coll)
    assert res.scores.shape == (40,) and res.covered
    assert 0 <= res.auc <= 1 and 0 <= res.auc_clean <= 1
    assert res.auc == pytest.approx(_mann_whitney(res.scores, tmask), abs=1e-9)
    keep = ~coll
    assert res.auc_clean == pytest.approx(_mann_whitney(res.scores[keep], tmask[keep]), abs=1e-9)
