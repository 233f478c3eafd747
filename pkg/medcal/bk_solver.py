#!/usr/bin/env python3
"""
コールのみの最大エントロピー密度

g(x) = exp(Σ λ_i (x - K_i)^+) / μ。指数は区分線形なので、各区間の統計量は
標準化関数 F を使って閉形式で求まる（区間幅 w・傾き b の切断指数分布の
平均 w F(bw)、分散 w^2 F'(bw)）。

乗数は凸な双対 Φ(λ) = ln μ(λ) - λ·C の Newton 法で求める。勾配はコール
残差、ヘッセ行列はペイオフの共分散行列。

主要機能:
- BkDensity: (strikes, lambdas, mu)
- bk_moments: 区間ごとの ∫ x^k e^{q(x)} dx
- bk_calibrate: スケーリングと減衰付きの Newton 法
- bk_price_call / bk_price_digital / bk_pdf / bk_entropy
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import (DomainError, IntegrabilityError, MedcalError, NonConvergence,
                     ValidationError)
from .med_solver import calibrate, f_prime, f_standard, log_exprel
from .quotes import MaturitySlice, digitals_from_call_spreads, validate_slice

logger = logging.getLogger(__name__)

ACCEPT_RATIO = 1e-4
MAX_DAMPINGS = 60
MIN_DAMPING = 1e-10
DAMPING_GROWTH = 10.0
ROUND_OFF = 1e-13


# ===== データ構造 =====

@dataclass(frozen=True)
class BkDensity:
    """コールのみ MED"""
    strikes: np.ndarray
    lambdas: np.ndarray
    mu: float

    def __post_init__(self):
        for name in ("strikes", "lambdas"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if len(self.strikes) != len(self.lambdas) or len(self.strikes) == 0:
            raise DomainError("strikes and lambdas must be non-empty and equal in length")

    @property
    def m(self) -> int:
        return len(self.strikes)

    @cached_property
    def forward(self) -> float:
        return float(bk_price_call(self, 0.0))


# ===== 区間統計量 =====

def _interval_stats(lambdas: np.ndarray, strikes: np.ndarray
                    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    区間 [K_j, K_{j+1}) と裾 [K_m, inf) の統計量

    Returns:
        (log ∫ e^q, 区間下端からの平均, 分散)
    """
    slopes = np.cumsum(lambdas)
    if not slopes[-1] < 0:
        raise IntegrabilityError(f"sum of multipliers {slopes[-1]:.6g} must be < 0")
    widths = np.diff(strikes)
    # q(K_j) = Σ_{l<j} b_l w_l
    offsets = np.concatenate(([0.0], np.cumsum(slopes[:-1] * widths)))

    z = slopes[:-1] * widths
    log_mass = np.empty(len(strikes))
    mean = np.empty(len(strikes))
    var = np.empty(len(strikes))
    log_mass[:-1] = offsets[:-1] + np.log(widths) + log_exprel(z)
    mean[:-1] = widths * np.asarray(f_standard(z))
    var[:-1] = widths ** 2 * np.asarray(f_prime(z))

    tail = slopes[-1]
    log_mass[-1] = offsets[-1] - math.log(-tail)
    mean[-1] = -1.0 / tail
    var[-1] = 1.0 / tail ** 2
    return log_mass, mean, var


def bk_moments(lambdas: Sequence[float], strikes: Sequence[float], order: int) -> np.ndarray:
    """
    区間ごとの ∫ x^order e^{q(x)} dx（order ∈ {0, 1, 2}）

    最後の要素が裾 [K_m, inf) の値。
    """
    if order not in (0, 1, 2):
        raise DomainError(f"moment order {order} not in (0, 1, 2)")
    lam = np.asarray(lambdas, dtype=float)
    k = np.asarray(strikes, dtype=float)
    log_mass, mean, var = _interval_stats(lam, k)
    mass = np.exp(log_mass)
    if order == 0:
        return mass
    first = k + mean
    if order == 1:
        return mass * first
    return mass * (var + first ** 2)


def _call_stats(lambdas: np.ndarray, strikes: np.ndarray):
    """(ln μ, E[(X-K_i)^+], Cov((X-K_i)^+, (X-K_k)^+))"""
    log_mass, mean, var = _interval_stats(lambdas, strikes)
    log_mu = float(logsumexp(log_mass))
    probs = np.exp(log_mass - log_mu)

    # gap[j, i] = K_j - K_i、j >= i のみ有効
    gap = strikes[:, None] - strikes[None, :]
    active = gap >= 0
    offset = np.where(active, mean[:, None] + gap, 0.0)
    calls = (probs[:, None] * offset).sum(axis=0)

    # 区間ごとの条件付き平均のばらつき + 区間内の分散
    dev = offset - calls[None, :]
    cov = np.einsum('j,ji,jk->ik', probs, dev, dev)
    both = active[:, :, None] & active[:, None, :]
    cov += np.einsum('j,jik->ik', probs * var, both.astype(float))
    return log_mu, calls, cov


# ===== 較正 =====

def _warm_start(strikes: np.ndarray, calls: np.ndarray,
                digitals: Optional[np.ndarray]) -> np.ndarray:
    """MED の傾きの差分 λ_i = β_i - β_{i-1}、無理なら前進のみの初期値"""
    forward_only = np.zeros(len(strikes))
    forward_only[0] = -1.0 / calls[0]
    if len(strikes) == 1:
        return forward_only

    try:
        if digitals is None:
            interior = (digitals_from_call_spreads(strikes, calls) if len(strikes) > 2
                        else np.empty(0))
            # exponential tail through the last two calls
            last = (-calls[-1] * math.log(calls[-1] / calls[-2])
                    / (strikes[-1] - strikes[-2]))
            digitals = np.concatenate(([1.0], interior, [last]))
        slice_ = MaturitySlice(1.0, 1.0, strikes, calls, digitals)
        if validate_slice(slice_):
            raise ValidationError("warm-start proxies admit arbitrage")
        warm = np.diff(calibrate(slice_).betas, prepend=0.0)
        warm_residual = np.max(np.abs(_call_stats(warm, strikes)[1] - calls))
    except MedcalError as e:
        logger.debug(f"warm start unavailable ({e}); starting from the forward-only solution")
        return forward_only

    plain_residual = np.max(np.abs(_call_stats(forward_only, strikes)[1] - calls))
    if not warm_residual < plain_residual:
        logger.debug(f"warm start residual {warm_residual:.3e} not below the forward-only "
                     f"{plain_residual:.3e}; starting from the forward-only solution")
        return forward_only
    return warm


def _damped_step(cov: np.ndarray, residual: np.ndarray, damping: float) -> Optional[np.ndarray]:
    """対角スケーリングした (H + damping I) p = -g の解（特異なら None）"""
    scale = np.sqrt(np.diag(cov))
    if not np.all(scale > 0):
        return None
    scaled = cov / np.outer(scale, scale) + damping * np.eye(len(scale))
    try:
        return -np.linalg.solve(scaled, residual / scale) / scale
    except np.linalg.LinAlgError:
        return None


def bk_calibrate(strikes: Sequence[float], calls: Sequence[float],
                 digitals: Optional[Sequence[float]] = None, *, max_iter: int = 60,
                 tol: float = 1e-10) -> BkDensity:
    """
    コール制約 E[(X - K_i)^+] = C_i を満たす乗数を求める

    双対 Φ の Newton 法。乗数は共分散の対角でスケーリングし、Φ が十分に
    減らないステップは Levenberg-Marquardt 型の減衰で短くする。

    Args:
        strikes: K_1 = 0 から始まる昇順ストライク
        calls: 割引なしコール（C_1 = フォワード）
        digitals: 初期値用デジタル（省略時はコールスプレッド）
        max_iter: 受理ステップ数の上限
        tol: max|残差| / フォワードの停止閾値

    Returns:
        BkDensity
    """
    k = np.asarray(strikes, dtype=float)
    c = np.asarray(calls, dtype=float)
    if len(k) == 0 or k[0] != 0:
        raise DomainError("calls-only calibration needs the zero strike first")
    if len(k) != len(c):
        raise DomainError("strikes and calls differ in length")
    if np.any(np.diff(k) <= 0) or np.any(np.diff(c) >= 0) or not c[-1] > 0:
        raise ValidationError("strikes must increase and calls decrease to a positive value")
    if len(k) > 2:
        slopes = np.diff(c) / np.diff(k)
        if np.any(np.diff(slopes) <= 0):
            raise ValidationError("call curve is not strictly convex")

    lam = _warm_start(k, c, None if digitals is None else np.asarray(digitals, dtype=float))
    forward = c[0]
    log_mu, fitted, cov = _call_stats(lam, k)
    phi = log_mu - lam @ c
    residual = fitted - c
    best = np.max(np.abs(residual))
    damping = 0.0

    for iteration in range(1, max_iter + 1):
        if best <= tol * forward:
            logger.info(f"Calls-only MED converged in {iteration - 1} iterations "
                        f"(max residual {best:.3e})")
            return BkDensity(k, lam, math.exp(log_mu))

        for _ in range(MAX_DAMPINGS):
            step = _damped_step(cov, residual, damping)
            damping = max(DAMPING_GROWTH * damping, MIN_DAMPING)
            if step is None:
                continue
            trial = lam + step
            if not np.sum(trial) < 0:
                continue
            trial_log_mu, trial_fitted, trial_cov = _call_stats(trial, k)
            trial_phi = trial_log_mu - trial @ c
            trial_best = np.max(np.abs(trial_fitted - c))
            predicted = -(residual @ step + 0.5 * step @ cov @ step)
            actual = phi - trial_phi
            # near the optimum Φ changes at round-off; a smaller residual still counts
            flat = abs(actual) <= ROUND_OFF * max(1.0, abs(phi))
            if actual >= ACCEPT_RATIO * predicted or (flat and trial_best < best):
                break
        else:
            logger.warning(f"damping exhausted at iteration {iteration}")
            raise NonConvergence("calls-only Newton step rejected at every damping", best,
                                 iteration)

        # 受理したら減衰を戻す（2回前の値）
        damping = damping / DAMPING_GROWTH ** 2
        if damping < MIN_DAMPING:
            damping = 0.0
        lam, log_mu, fitted, cov, phi = trial, trial_log_mu, trial_fitted, trial_cov, trial_phi
        residual = fitted - c
        best = trial_best
        logger.debug(f"iteration {iteration}: damping {damping:g}, max residual {best:.3e}")

    if best <= tol * forward:
        return BkDensity(k, lam, math.exp(log_mu))
    raise NonConvergence("calls-only Newton did not converge", best, max_iter)


def bk_jacobian(bk: BkDensity) -> np.ndarray:
    """残差のヤコビアン（共分散行列）"""
    return _call_stats(bk.lambdas, bk.strikes)[2]


# ===== 価格・密度 =====

def _split(bk: BkDensity, strike: float):
    """strike を節点に加えた (lambdas, strikes, 位置)"""
    pos = int(np.searchsorted(bk.strikes, strike))
    if pos < bk.m and bk.strikes[pos] == strike:
        return bk.lambdas, bk.strikes, pos
    return (np.insert(bk.lambdas, pos, 0.0), np.insert(bk.strikes, pos, strike), pos)


def _tail_prices(bk: BkDensity, strike: float) -> Tuple[float, float]:
    """(C(K), D(K))"""
    if strike <= 0:
        forward = float(bk_moments(bk.lambdas, bk.strikes, 1).sum() / bk.mu)
        return forward - strike, 1.0
    lambdas, strikes, pos = _split(bk, strike)
    log_mass, mean, _ = _interval_stats(lambdas, strikes)
    probs = np.exp(log_mass - logsumexp(log_mass))
    above = probs[pos:]
    call = float(above @ (strikes[pos:] - strike + mean[pos:]))
    return call, float(above.sum())


def bk_price_call(bk: BkDensity, strike):
    """割引なしコール価格"""
    values = np.array([_tail_prices(bk, float(k))[0] for k in np.ravel(strike)])
    return float(values[0]) if np.ndim(strike) == 0 else values.reshape(np.shape(strike))


def bk_price_digital(bk: BkDensity, strike):
    """割引なしデジタル価格"""
    values = np.array([_tail_prices(bk, float(k))[1] for k in np.ravel(strike)])
    return float(values[0]) if np.ndim(strike) == 0 else values.reshape(np.shape(strike))


def bk_pdf(bk: BkDensity, x):
    """exp(Σ λ_i (x - K_i)^+) / μ、x < 0 では 0"""
    x_arr = np.asarray(x, dtype=float)
    exponent = (np.maximum(x_arr[..., None] - bk.strikes, 0.0) * bk.lambdas).sum(axis=-1)
    values = np.where(x_arr < 0, 0.0, np.exp(exponent) / bk.mu)
    return float(values) if np.ndim(x) == 0 else values


def bk_entropy(bk: BkDensity) -> float:
    """ln μ - Σ λ_i C_i"""
    calls = bk_price_call(bk, bk.strikes)
    return float(math.log(bk.mu) - bk.lambdas @ calls)
