#!/usr/bin/env python3
"""
MED の解析的評価

較正済み MedDensity から pdf / CDF / 逆 CDF / コール・デジタル価格 /
デルタを閉形式で計算する。全関数はスカラーと numpy 配列の両方を受け付ける。

各バケットでは下端の密度水準 g(K_i)（beta w が大きい有限バケットでは上端の
g(K_{i+1}-)）を基準にした形で評価するため、大きなストライクや急な傾きでも
exp のオーバーフローが起きない。

主要機能:
- pdf, cdf, inverse_cdf
- price_digital, price_call（割引なし）
- spot_delta, forward_delta
- sample: 逆 CDF 法による乱数生成
"""

import logging
from typing import Optional

import numpy as np
from scipy.special import exprel

from .errors import DomainError
from .med_solver import MedDensity

logger = logging.getLogger(__name__)

FLAT_BETA_THRESHOLD = 1e-9
EXPREL2_SERIES = 0.1
UPPER_REFERENCE_EXPONENT = 100.0


def exprel2(z):
    """(e^z - 1 - z) / z^2、原点近傍は級数"""
    z = np.asarray(z, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        closed = (np.expm1(z) - z) / (z * z)
    # sum_{k=0..7} z^k / (k+2)!
    series = 1 / 2 + z * (1 / 6 + z * (1 / 24 + z * (1 / 120 + z * (
        1 / 720 + z * (1 / 5040 + z * (1 / 40320 + z / 362880))))))
    return np.where(np.abs(z) < EXPREL2_SERIES, series, closed)


def _like(x, out):
    return float(out) if np.ndim(x) == 0 else out


def _locate(density: MedDensity, x: np.ndarray, flat_beta_threshold: float):
    """x を含むバケット（右開区間）の番号・下端からの距離・実効指数"""
    strikes = density.strikes
    idx = np.clip(np.searchsorted(strikes, x, side='right') - 1, 0, len(strikes) - 1)
    d = x - strikes[idx]
    return idx, d, _effective_betas(density, flat_beta_threshold)[idx]


def _effective_betas(density: MedDensity, flat_beta_threshold: float) -> np.ndarray:
    widths = density.uppers - density.strikes
    with np.errstate(invalid='ignore'):
        flat = np.abs(density.betas) * widths < flat_beta_threshold
    return np.where(flat, 0.0, density.betas)


def _from_upper(density: MedDensity, idx: np.ndarray, d: np.ndarray, beta: np.ndarray):
    """
    上端基準で評価する点と上端までの距離

    beta w が大きい有限バケットでは g(K_i) がアンダーフローするので
    g(K_{i+1}-) から逆向きに積分する。
    """
    finite = np.isfinite(density.uppers[idx])
    use = _steep(density, idx, beta) & (d > 0)
    with np.errstate(invalid='ignore'):
        e = np.where(finite, density.uppers[idx] - density.strikes[idx] - d, 0.0)
    return use, e


def _steep(density: MedDensity, idx: np.ndarray, beta: np.ndarray) -> np.ndarray:
    widths = density.uppers[idx] - density.strikes[idx]
    with np.errstate(invalid='ignore'):
        return np.isfinite(widths) & (beta * widths > UPPER_REFERENCE_EXPONENT)


def _next(values: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """右隣のストライクの値（最後のバケットでは 0）"""
    return np.append(values[1:], 0.0)[idx]


# ===== 密度・分布関数 =====

def pdf(density: MedDensity, x, *, flat_beta_threshold: float = FLAT_BETA_THRESHOLD):
    """g(x) = alpha_i exp(beta_i x)、x < 0 では 0"""
    x_arr = np.asarray(x, dtype=float)
    idx, d, beta = _locate(density, np.maximum(x_arr, 0.0), flat_beta_threshold)
    use, e = _from_upper(density, idx, d, beta)
    with np.errstate(over='ignore', under='ignore'):
        below = np.exp(density.log_levels[idx] + beta * d)
        above = density.upper_levels[idx] * np.exp(-beta * e)
    values = np.where(use, above, below)
    return _like(x, np.where(x_arr < 0, 0.0, values))


def price_digital(density: MedDensity, strike, *,
                  flat_beta_threshold: float = FLAT_BETA_THRESHOLD):
    """割引なしデジタル価格 D(K) = P(X > K)"""
    k = np.asarray(strike, dtype=float)
    idx, d, beta = _locate(density, np.maximum(k, 0.0), flat_beta_threshold)
    use, e = _from_upper(density, idx, d, beta)
    with np.errstate(over='ignore', invalid='ignore'):
        below = density.slice.digitals[idx] - density.levels[idx] * d * exprel(beta * d)
        above = (_next(density.slice.digitals, idx)
                 + density.upper_levels[idx] * e * exprel(-beta * e))
    values = np.where(use, above, below)
    values = np.where(k < 0, 1.0, np.clip(values, 0.0, 1.0))
    return _like(strike, values)


def cdf(density: MedDensity, strike, *, flat_beta_threshold: float = FLAT_BETA_THRESHOLD):
    """G(K) = 1 - D(K)"""
    return _like(strike, 1.0 - np.asarray(
        price_digital(density, strike, flat_beta_threshold=flat_beta_threshold)))


def price_call(density: MedDensity, strike, *, flat_beta_threshold: float = FLAT_BETA_THRESHOLD):
    """割引なしコール価格 C(K) = E[(X - K)^+]"""
    k = np.asarray(strike, dtype=float)
    idx, d, beta = _locate(density, np.maximum(k, 0.0), flat_beta_threshold)
    use, e = _from_upper(density, idx, d, beta)
    with np.errstate(over='ignore', invalid='ignore'):
        below = (density.slice.calls[idx] - d * density.slice.digitals[idx]
                 + density.levels[idx] * d * d * exprel2(beta * d))
        above = (_next(density.slice.calls, idx) + e * _next(density.slice.digitals, idx)
                 + density.upper_levels[idx] * e * e * exprel2(-beta * e))
    values = np.where(use, above, below)
    values = np.where(k < 0, density.forward - k, np.maximum(values, 0.0))
    return _like(strike, values)


def inverse_cdf(density: MedDensity, level, *,
                flat_beta_threshold: float = FLAT_BETA_THRESHOLD):
    """
    G^{-1}(L)

    1 - L が (D_{i+1}, D_i] に入るバケット i を探し、対数を1回だけ取る。

    Args:
        level: [0, 1) の確率（スカラーまたは配列）
    """
    L = np.asarray(level, dtype=float)
    if np.any((L < 0) | (L >= 1)) or np.any(np.isnan(L)):
        raise DomainError("quantile level outside [0, 1)")
    u = 1.0 - L
    digitals = density.slice.digitals
    n = len(digitals) - 1
    idx = n - np.searchsorted(digitals[::-1], u, side='left')
    idx = np.clip(idx, 0, n)

    beta = _effective_betas(density, flat_beta_threshold)[idx]
    use = _steep(density, idx, beta)
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = np.where(use, (u - _next(digitals, idx)) / density.upper_levels[idx],
                         (digitals[idx] - u) / density.levels[idx])
        y = np.where(use, -beta, beta) * ratio
        safe = np.where(y == 0.0, 1.0, y)
        dist = ratio * np.where(y == 0.0, 1.0, np.log1p(safe) / safe)
        values = np.where(use, density.uppers[idx] - dist, density.strikes[idx] + dist)
    return _like(level, values)


# ===== デルタ =====

def spot_delta(density: MedDensity, strike, spot: float, discount_factor: float, *,
               flat_beta_threshold: float = FLAT_BETA_THRESHOLD):
    """
    スポット・デルタ（斉次性による）

    S Δ = DF E[X 1{X > K}] = DF (C(K) + K D(K))
    """
    if not spot > 0:
        raise DomainError(f"spot {spot} must be > 0")
    k = np.maximum(np.asarray(strike, dtype=float), 0.0)
    kw = {"flat_beta_threshold": flat_beta_threshold}
    tail = np.asarray(price_call(density, k, **kw)) + k * np.asarray(price_digital(density, k, **kw))
    return _like(strike, discount_factor / spot * np.maximum(tail, 0.0))


def forward_delta(density: MedDensity, strike, discount_factor: float, *,
                  flat_beta_threshold: float = FLAT_BETA_THRESHOLD):
    """スポットをフォワードに置き換えたデルタ"""
    return spot_delta(density, strike, density.forward, discount_factor,
                      flat_beta_threshold=flat_beta_threshold)


# ===== サンプリング =====

def sample(density: MedDensity, count: int, seed: Optional[int] = None,
           rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    逆 CDF 法によるサンプリング

    Args:
        count: 件数
        seed: PCG64 シード（rng 未指定時）
        rng: 呼び出し側が持つ乱数生成器

    Returns:
        長さ count の配列
    """
    if count < 0:
        raise DomainError(f"sample count {count} must be >= 0")
    if rng is None:
        rng = np.random.default_rng(seed)
    draws = inverse_cdf(density, rng.random(count))
    logger.debug(f"drew {count} samples")
    return np.asarray(draws, dtype=float)
