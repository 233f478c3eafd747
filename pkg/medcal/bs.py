#!/usr/bin/env python3
"""
Black-Scholes ユーティリティ

フラット・ボラティリティのテスト市場生成と、二分法によるインプライド・
ボラティリティ逆算。価格はすべて割引なし（フォワード建て）。

主要機能:
- BsParams: (F, sigma, T, DF)
- bs_call / bs_digital
- implied_vol: σ ∈ [1e-6, 5] の二分法
- market_quotes: テスト市場のクォート（割引済み, bid = ask）
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy.stats import norm

from .errors import DomainError, OutOfRange
from .quotes import RawQuote

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BsParams:
    """フラット・ボラティリティ市場"""
    forward: float
    vol: float
    maturity: float
    discount_factor: float = 1.0

    def __post_init__(self):
        if not self.forward > 0:
            raise DomainError(f"forward {self.forward} must be > 0")
        if not self.vol > 0:
            raise DomainError(f"vol {self.vol} must be > 0")
        if not self.maturity > 0:
            raise DomainError(f"maturity {self.maturity} must be > 0")
        if not 0 < self.discount_factor <= 1:
            raise DomainError(f"discount factor {self.discount_factor} not in (0, 1]")


def _d1_d2(forward: float, strike: np.ndarray, vol: float, maturity: float):
    sig_sqrt_t = vol * math.sqrt(maturity)
    with np.errstate(divide='ignore'):
        d1 = (np.log(forward / strike) + 0.5 * sig_sqrt_t ** 2) / sig_sqrt_t
    return d1, d1 - sig_sqrt_t


def _black_call(forward: float, strike, vol: float, maturity: float):
    k = np.asarray(strike, dtype=float)
    positive = k > 0
    safe = np.where(positive, k, 1.0)
    d1, d2 = _d1_d2(forward, safe, vol, maturity)
    values = forward * norm.cdf(d1) - safe * norm.cdf(d2)
    values = np.where(positive, values, forward - k)
    return float(values) if np.ndim(strike) == 0 else values


def bs_call(params: BsParams, strike):
    """F N(d1) - K N(d2)、K = 0 ならフォワード"""
    return _black_call(params.forward, strike, params.vol, params.maturity)


def bs_digital(params: BsParams, strike):
    """N(d2)（スマイル補正なし）"""
    k = np.asarray(strike, dtype=float)
    positive = k > 0
    _, d2 = _d1_d2(params.forward, np.where(positive, k, 1.0), params.vol, params.maturity)
    values = np.where(positive, norm.cdf(d2), 1.0)
    return float(values) if np.ndim(strike) == 0 else values


def implied_vol(price: float, forward: float, strike: float, maturity: float, *,
                vol_lower: float = 1e-6, vol_upper: float = 5.0,
                vol_tol: float = 1e-12) -> float:
    """
    割引なしコール価格からのインプライド・ボラティリティ（二分法）

    Args:
        price: 割引なしコール価格
        forward: フォワード
        strike: ストライク (> 0)
        maturity: 満期[年]
        vol_lower, vol_upper: 探索区間
        vol_tol: σ 区間幅の停止閾値

    Returns:
        σ
    """
    if not strike > 0:
        raise DomainError(f"strike {strike} must be > 0")
    intrinsic = max(forward - strike, 0.0)
    if not intrinsic < price < forward:
        raise OutOfRange(f"price {price:.10g} outside ({intrinsic:.10g}, {forward:.10g}) "
                         f"at K={strike:g}")

    lo, hi = vol_lower, vol_upper
    if price <= _black_call(forward, strike, lo, maturity):
        raise OutOfRange(f"price {price:.10g} below the vol={lo:g} price at K={strike:g}")
    if price >= _black_call(forward, strike, hi, maturity):
        raise OutOfRange(f"price {price:.10g} above the vol={hi:g} price at K={strike:g}")

    while hi - lo > vol_tol:
        mid = 0.5 * (lo + hi)
        if _black_call(forward, strike, mid, maturity) < price:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def market_quotes(params: BsParams, strikes: Sequence[float]) -> List[RawQuote]:
    """フラット市場の割引済みクォート（bid = ask、K = 0 はフォワード）"""
    quotes = []
    df = params.discount_factor
    for k in sorted(float(s) for s in strikes):
        call = df * bs_call(params, k)
        digital = df * bs_digital(params, k)
        quotes.append(RawQuote(k, call, call, digital, digital))
    logger.debug(f"generated {len(quotes)} quotes for F={params.forward} vol={params.vol}")
    return quotes
