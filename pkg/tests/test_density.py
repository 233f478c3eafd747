"""MED の解析的評価のテスト（価格・分布関数・デルタ・サンプリング）"""

import math

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import quad

from medcal.density import (cdf, exprel2, forward_delta, inverse_cdf, pdf, price_call,
                            price_digital, sample, spot_delta)
from medcal.errors import DomainError

GRID = [0.0, 20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0, 180.0]

ONE_STRIKE_CALLS = [100.0, 80.0402, 60.2562, 40.9886, 23.2384, 9.9477, 4.0232, 1.6271, 0.6581,
                    0.2661]
ONE_STRIKE_DIGITALS = [1.0, 0.9951, 0.9808, 0.9386, 0.8146, 0.4503, 0.1821, 0.0736, 0.0298,
                       0.0120]
THREE_STRIKE_CALLS = [100.0, 80.0001, 60.0033, 40.1454, 22.4905, 9.9477, 3.7539, 1.2139, 0.3790,
                      0.1183]
THREE_STRIKE_DIGITALS = [1.0, 1.0, 0.9994, 0.9725, 0.7765, 0.4503, 0.1978, 0.0707, 0.0221,
                         0.0069]
FIVE_STRIKE_CALLS = [100.0, 80.0001, 60.0033, 40.1454, 22.2656, 9.9477, 3.7059, 1.2139, 0.3790,
                     0.1183]


# ===== 価格表 =====

@pytest.mark.parametrize("name, calls, digitals", [
    ("med_1", ONE_STRIKE_CALLS, ONE_STRIKE_DIGITALS),
    ("med_3", THREE_STRIKE_CALLS, THREE_STRIKE_DIGITALS),
])
def test_price_rows(request, name, calls, digitals):
    density = request.getfixturevalue(name)
    assert price_call(density, GRID) == pytest.approx(calls, abs=5e-4)
    assert price_digital(density, GRID) == pytest.approx(digitals, abs=5e-4)


def test_five_strike_calls(med_5):
    assert price_call(med_5, GRID) == pytest.approx(FIVE_STRIKE_CALLS, abs=5e-4)
    assert price_call(med_5, 40.0) == pytest.approx(60.0033, abs=5e-4)


def test_out_of_sample_one_strike(med_1):
    assert price_call(med_1, 120.0) == pytest.approx(4.0232, abs=5e-4)
    assert price_digital(med_1, 120.0) == pytest.approx(0.1821, abs=5e-4)


def test_three_strike_tail_digital(med_3):
    assert price_digital(med_3, 160.0) == pytest.approx(0.0221, abs=5e-4)


def test_negative_strikes(med_1):
    assert price_call(med_1, -5.0) == pytest.approx(105.0)
    assert price_digital(med_1, -5.0) == 1.0
    assert pdf(med_1, -1.0) == 0.0


def test_vectorized_matches_scalar(med_5):
    k = np.array([5.0, 61.0, 99.9, 100.0, 133.0, 250.0])
    assert price_call(med_5, k) == pytest.approx([price_call(med_5, float(v)) for v in k],
                                                 rel=1e-14)
    assert price_digital(med_5, k) == pytest.approx([price_digital(med_5, float(v)) for v in k],
                                                    rel=1e-14)
    assert isinstance(price_call(med_5, 50.0), float)


def test_call_curve_is_convex_and_decreasing(med_5):
    k = np.linspace(0.5, 300.0, 600)
    calls = np.asarray(price_call(med_5, k))
    slopes = np.diff(calls) / np.diff(k)
    assert np.all(slopes < 0)
    assert np.all(np.diff(slopes) > -1e-9)


@pytest.mark.parametrize("k", [10.0, 50.0, 70.0, 90.0, 110.0, 130.0, 150.0, 170.0])
def test_digital_is_minus_call_slope(med_5, k):
    h = 1e-5 * k
    fd = -(price_call(med_5, k + h) - price_call(med_5, k - h)) / (2 * h)
    assert price_digital(med_5, k) == pytest.approx(fd, rel=1e-6)


# ===== 分布関数 =====

def test_pdf_at_bucket_edges(med_1):
    assert pdf(med_1, 0.0) == pytest.approx(med_1.alphas[0])
    assert pdf(med_1, 100.0) == pytest.approx(med_1.levels[1])
    assert pdf(med_1, 0.0) == pytest.approx(1.3582e-4, rel=1e-3)


def test_unit_mass_and_forward(med_5):
    edges = list(med_5.strikes) + [np.inf]
    mass = sum(quad(lambda x: pdf(med_5, x), a, b, epsabs=0, epsrel=1e-12)[0]
               for a, b in zip(edges[:-1], edges[1:]))
    mean = sum(quad(lambda x: x * pdf(med_5, x), a, b, epsabs=0, epsrel=1e-12)[0]
               for a, b in zip(edges[:-1], edges[1:]))
    assert mass == pytest.approx(1.0, rel=1e-8)
    assert mean == pytest.approx(100.0, rel=1e-8)


def test_cdf_values(med_1):
    assert cdf(med_1, 0.0) == 0.0
    assert cdf(med_1, 100.0) == pytest.approx(0.5497, abs=5e-5)
    b = med_1.buckets[0]
    expected = b.alpha / b.beta * np.expm1(10.0 * b.beta)
    assert cdf(med_1, 10.0) == pytest.approx(expected, rel=1e-12)


def test_inverse_cdf_hits_strikes(med_5):
    levels = 1.0 - np.asarray(med_5.slice.digitals)
    assert inverse_cdf(med_5, levels) == pytest.approx(med_5.strikes, abs=1e-9)
    assert inverse_cdf(med_5, 0.0) == 0.0


def test_inverse_cdf_round_trip(med_5):
    u = np.random.default_rng(11).random(1000)
    x = np.asarray(inverse_cdf(med_5, u))
    assert np.asarray(cdf(med_5, x)) == pytest.approx(u, abs=1e-10)


def test_inverse_cdf_flat_bucket():
    from medcal.med_solver import calibrate
    from medcal.quotes import MaturitySlice
    s = MaturitySlice(1.0, 1.0, [0.0, 1.0], [0.5 + 1.5e-8, 1e-8], [1.0, 1e-8])
    density = calibrate(s)
    assert inverse_cdf(density, 0.25) == pytest.approx(0.25, abs=1e-7)


@pytest.fixture
def steep():
    """[0, 100) に beta = 20 のバケット（g(0) はアンダーフロー）"""
    from medcal.med_solver import calibrate
    from medcal.quotes import MaturitySlice
    return calibrate(MaturitySlice(1.0, 1.0, [0.0, 100.0], [109.975, 10.0], [1.0, 0.5]))


def test_steep_bucket_prices(steep):
    assert price_call(steep, [0.0, 100.0]) == pytest.approx([109.975, 10.0], rel=1e-12)
    assert price_digital(steep, [0.0, 100.0]) == pytest.approx([1.0, 0.5], rel=1e-12)
    # D(K) = 0.5 + 0.5 (1 - e^{-20 (100 - K)})
    assert price_digital(steep, 99.9) == pytest.approx(1.0 - 0.5 * math.exp(-2.0), rel=1e-9)
    assert price_digital(steep, 50.0) == pytest.approx(1.0, abs=1e-12)
    # C(K) = C(100) + (100 - K) D(100) + ∫_K^100 (x - K) g
    e = 0.1
    expected = 10.0 + e * 0.5 + 10.0 * (e / 20.0 - (1.0 - math.exp(-20.0 * e)) / 400.0)
    assert price_call(steep, 100.0 - e) == pytest.approx(expected, rel=1e-9)
    assert np.all(np.isfinite(price_call(steep, np.linspace(0.0, 150.0, 301))))


def test_steep_bucket_density_and_quantiles(steep):
    assert pdf(steep, 99.99) == pytest.approx(10.0 * math.exp(-0.2), rel=1e-9)
    assert pdf(steep, 50.0) == 0.0
    x = inverse_cdf(steep, 0.25)
    assert x == pytest.approx(100.0 - math.log(2.0) / 20.0, rel=1e-9)
    assert cdf(steep, x) == pytest.approx(0.25, abs=1e-12)
    assert spot_delta(steep, 99.9, 109.975, 1.0) == pytest.approx(
        (price_call(steep, 99.9) + 99.9 * price_digital(steep, 99.9)) / 109.975, rel=1e-12)


@pytest.mark.parametrize("level", [-0.1, 1.0, 1.5, float("nan")])
def test_inverse_cdf_domain(med_1, level):
    with pytest.raises(DomainError):
        inverse_cdf(med_1, level)


def test_exprel2_near_zero():
    z = np.array([-0.2, -0.1, -1e-6, 0.0, 1e-6, 0.05, 0.1, 0.3])
    closed = np.where(z == 0, 0.5, (np.expm1(z) - z) / np.where(z == 0, 1.0, z) ** 2)
    assert exprel2(z) == pytest.approx(closed, rel=1e-7)
    assert exprel2(0.0) == 0.5


# ===== デルタ =====

def test_delta_at_zero_strike(med_5):
    assert spot_delta(med_5, 0.0, 95.0, 0.95) == pytest.approx(0.95 * 100.0 / 95.0)


def test_delta_is_tail_moment(med_5):
    # S Δ / DF = ∫_K^inf x g(x) dx
    spot, df = 90.0, 0.9
    for k in (0.0, 37.5, 60.0, 99.0, 133.0, 250.0):
        edges = [k] + [s for s in med_5.strikes if s > k]
        moment = sum(quad(lambda x: x * pdf(med_5, x), a, b, epsabs=0, epsrel=1e-12)[0]
                     for a, b in zip(edges[:-1], edges[1:]))
        moment += quad(lambda x: x * pdf(med_5, x), edges[-1], np.inf, epsabs=0,
                       epsrel=1e-12)[0]
        assert spot_delta(med_5, k, spot, df) == pytest.approx(df / spot * moment, rel=1e-8)


def test_delta_vanishes_far_out(med_5):
    assert spot_delta(med_5, 1e4, 100.0, 1.0) < 1e-12


def test_forward_delta(med_3):
    assert forward_delta(med_3, 100.0, 1.0) == pytest.approx(spot_delta(med_3, 100.0, 100.0, 1.0))


def test_delta_needs_positive_spot(med_1):
    with pytest.raises(DomainError):
        spot_delta(med_1, 100.0, 0.0, 1.0)


# ===== サンプリング =====

def test_sample_is_reproducible(med_5):
    a = sample(med_5, 500, seed=20100410)
    b = sample(med_5, 500, seed=20100410)
    assert np.array_equal(a, b)
    assert len(sample(med_5, 0, seed=1)) == 0


def test_sample_with_caller_generator(med_5):
    rng = np.random.default_rng(5)
    draws = sample(med_5, 100, rng=rng)
    assert np.all(draws >= 0)


def test_sample_negative_count(med_5):
    with pytest.raises(DomainError):
        sample(med_5, -1)


def test_sample_matches_cdf(med_5):
    draws = sample(med_5, 100_000, seed=20100410)
    result = stats.kstest(draws, lambda x: np.asarray(cdf(med_5, x)))
    assert result.pvalue > 0.01


@pytest.mark.slow
def test_million_draws(med_5):
    draws = sample(med_5, 1_000_000, seed=20100410)
    assert draws.mean() == pytest.approx(100.0, abs=0.2)
    assert np.mean(draws <= 100.0) == pytest.approx(0.5497, abs=2e-3)
