import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aca_dp.accountant import (
    DEFAULT_ORDERS,
    RdpCurve,
    compose,
    epsilon,
    rdp_curve,
    rdp_gaussian,
    rdp_subsampled_gaussian,
    rdp_to_eps,
    sigma_for_epsilon,
)


def test_gaussian_values():
    assert rdp_gaussian(1.0, 2) == 1.0
    assert rdp_gaussian(2.0, 9) == 1.125
    assert rdp_gaussian(100.0, 2) == pytest.approx(1e-4, rel=1e-12)
    with pytest.raises(ValueError):
        rdp_gaussian(0.0, 2)
    with pytest.raises(ValueError):
        rdp_gaussian(1.0, 1.0)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("order", [2, 7, 32, 256])
def test_subsampled_full_batch(sigma, order):
    v = rdp_subsampled_gaussian(1.0, sigma, order)
    g = rdp_gaussian(sigma, order)
    assert g <= v <= g + 1e-9


@pytest.mark.parametrize("order", [2, 16, 32])
def test_subsampled_vanishing_rate(order):
    assert 0.0 <= rdp_subsampled_gaussian(1e-12, 1.0, order) <= 1e-9


def test_small_rate_high_order_not_vanishing():
    # q^k exp(k(k-1)/2) at k = 64 is about 1e107 even for q = 1e-12
    assert rdp_subsampled_gaussian(1e-12, 1.0, 64) == pytest.approx(_mp_reference(1e-12, 1.0, 64), rel=1e-10)


def _mp_reference(q, sigma, order):
    mpmath.mp.dps = 60
    q, s = mpmath.mpf(q), mpmath.mpf(sigma)
    total = mpmath.fsum(
        mpmath.binomial(order, k) * (1 - q) ** (order - k) * q**k * mpmath.exp(k * (k - 1) / (2 * s * s))
        for k in range(order + 1)
    )
    return float(mpmath.log(total) / (order - 1))


@pytest.mark.parametrize("q,sigma,order", [(0.01, 1.0, 16), (0.1, 0.7, 40), (0.001, 2.0, 256), (0.3, 0.5, 10)])
def test_subsampled_against_high_precision(q, sigma, order):
    assert rdp_subsampled_gaussian(q, sigma, order) == pytest.approx(_mp_reference(q, sigma, order), rel=1e-10)


def test_infinite_values_skipped_in_conversion():
    assert rdp_subsampled_gaussian(0.5, 1e-160, 4) == math.inf
    curve = RdpCurve((2.0, 3.0), (math.inf, 1.0))
    eps, order = rdp_to_eps(curve, 1e-5)
    assert order == 3.0 and eps == pytest.approx(1.0 + math.log(1e5) / 2)


def test_subsampled_rejects_fractional_order():
    with pytest.raises(ValueError):
        rdp_subsampled_gaussian(0.1, 1.0, 2.5)
    with pytest.raises(ValueError):
        rdp_curve(0.1, 1.0, (2.5,))


def test_compose():
    c = RdpCurve((2.0, 3.0), (0.5, 0.25))
    assert compose(c, 1) == c
    assert compose(c, 10).rdp_values == (5.0, 2.5)
    assert compose(compose(c, 2), 3) == compose(c, 6)
    with pytest.raises(ValueError):
        compose(c, 0)


def test_curve_validation(tmp_path):
    with pytest.raises(ValueError):
        RdpCurve((3.0, 2.0), (1.0, 1.0))
    with pytest.raises(ValueError):
        RdpCurve((2.0,), (-1.0,))
    c = rdp_curve(0.01, 1.0)
    c.write_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "order,rdp"


def test_single_gaussian_step_dense_grid():
    a = 1.0 + math.sqrt(2 * math.log(1e5))
    oracle = a / 2 + math.log(1e5) / (a - 1)
    orders = tuple(np.arange(1.01, 64.0, 0.001))
    eps, order = rdp_to_eps(rdp_curve(1.0, 1.0, orders), 1e-5)
    assert abs(eps - oracle) < 1e-3
    assert abs(order - a) < 0.01


def test_delta_to_one_gives_min_rdp():
    c = compose(rdp_curve(0.05, 1.0), 100)
    eps, _ = rdp_to_eps(c, 1 - 1e-12)
    assert eps == pytest.approx(min(c.rdp_values), rel=1e-6)


def test_all_infinite_curve():
    assert rdp_to_eps(RdpCurve((2.0,), (math.inf,)), 1e-5) == (math.inf, None)


def test_non_minimizing_orders_are_irrelevant():
    c = compose(rdp_curve(0.02, 1.1), 500)
    eps, order = rdp_to_eps(c, 1e-5)
    keep = [i for i, a in enumerate(c.orders) if a == order or i % 3 == 0]
    sub = RdpCurve(tuple(c.orders[i] for i in keep), tuple(c.rdp_values[i] for i in keep))
    assert rdp_to_eps(sub, 1e-5)[0] == eps


def test_epsilon_nonprivate_is_inf():
    assert epsilon(0.0, 0.1, 10, 1e-5) == math.inf


def test_doubling_steps_increases_eps():
    assert epsilon(1.0, 0.01, 2000, 1e-5) > epsilon(1.0, 0.01, 1000, 1e-5)


def test_sigma_for_epsilon_round_trip():
    for sigma0 in (0.6, 1.0, 1.7):
        target = epsilon(sigma0, 0.01, 1000, 1e-5)
        s = sigma_for_epsilon(target, 1e-5, 0.01, 1000)
        assert abs(s - sigma0) <= 1e-3 * sigma0
        assert abs(epsilon(s, 0.01, 1000, 1e-5) - target) <= 1e-3 * target


def test_sigma_for_epsilon_monotone_and_errors():
    assert sigma_for_epsilon(8.0, 1e-5, 0.01, 1000) < sigma_for_epsilon(2.0, 1e-5, 0.01, 1000)
    with pytest.raises(ValueError):
        sigma_for_epsilon(1e9, 1e-5, 1.0, 1)
    with pytest.raises(ValueError):
        sigma_for_epsilon(0.0, 1e-5, 1.0, 1)


@settings(max_examples=30, deadline=None)
@given(
    q=st.floats(1e-4, 0.5),
    sigma=st.floats(0.5, 3.0),
    steps=st.integers(1, 5000),
)
def test_eps_monotone_property(q, sigma, steps):
    e = epsilon(sigma, q, steps, 1e-5)
    assert epsilon(sigma * 1.1, q, steps, 1e-5) <= e
    assert epsilon(sigma, q, steps + 1, 1e-5) >= e
    assert epsilon(sigma, min(1.0, q * 1.2), steps, 1e-5) >= e


def test_default_orders():
    assert DEFAULT_ORDERS[0] == 2 and DEFAULT_ORDERS[62] == 64 and DEFAULT_ORDERS[-2:] == (128, 256)
