#!/usr/bin/env python3
"""
最大エントロピー密度（MED）ソルバー

バケット [K_i, K_{i+1}) ごとに g(x) = α_i e^{β_i x} を、デジタル（質量）と
コール（1次モーメント）の2制約から決定する。内部バケットは標準化関数
F の逆関数による1次元求根、最終バケットは閉形式。

主要機能:
- f_standard / f_prime: 標準化関数 F とその導関数（原点近傍は級数）
- newton_bisect: ブラケット保持付き Newton 法（二分法フォールバック）
- invert_f: F の逆関数
- solve_bucket / solve_last_bucket: バケット単位の (α, β)
- calibrate: スライス全体の MED
- entropy: 閉形式エントロピー
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.special import exprel

from .errors import ArbitrageError, DomainError, NonConvergence
from .quotes import MaturitySlice

logger = logging.getLogger(__name__)

SERIES_THRESHOLD = 1e-2


def _like(x, out):
    """スカラー入力ならスカラーで返す"""
    return float(out) if np.ndim(x) == 0 else out


# ===== 標準化関数 F =====

def f_standard(x, series_threshold: float = SERIES_THRESHOLD):
    """
    F(x) = e^x/(e^x - 1) - 1/x,  F(0) = 1/2

    Args:
        x: スカラーまたは配列
        series_threshold: |x| がこれ未満なら級数展開

    Returns:
        (0, 1) の値（x と同じ形）
    """
    x_arr = np.asarray(x, dtype=float)
    a = np.abs(x_arr)
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        upper = 1.0 / (-np.expm1(-a)) - 1.0 / a
        lower = 1.0 / a - np.exp(-a) / (-np.expm1(-a))
    x2 = x_arr * x_arr
    series = 0.5 + x_arr * (1 / 12 - x2 * (1 / 720 - x2 * (1 / 30240 - x2 / 1209600)))
    out = np.where(x_arr >= 0, upper, lower)
    out = np.where(a < series_threshold, series, out)
    return _like(x, out)


def f_prime(x, series_threshold: float = SERIES_THRESHOLD):
    """
    F'(x) = 1/x^2 - e^x/(e^x - 1)^2,  F'(0) = 1/12（偶関数）
    """
    x_arr = np.asarray(x, dtype=float)
    a = np.abs(x_arr)
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        closed = 1.0 / (a * a) - np.exp(-a) / np.expm1(-a) ** 2
    x2 = x_arr * x_arr
    series = 1 / 12 - x2 * (1 / 240 - x2 * (1 / 6048 - x2 / 172800))
    out = np.where(a < series_threshold, series, closed)
    return _like(x, out)


def log_exprel(z):
    """log((e^z - 1) / z)、|z| が大きくても溢れない"""
    z = np.asarray(z, dtype=float)
    a = np.abs(z)
    with np.errstate(divide='ignore', invalid='ignore'):
        tail = np.log(-np.expm1(-a)) - np.log(a)
    out = np.where(z > 0, a + tail, tail)
    return np.where(a < 1e-8, 0.5 * z, out)


# ===== 求根 =====

def newton_bisect(func: Callable[[float], Tuple[float, float]], lo: float, hi: float,
                  x0: Optional[float] = None, *, tol: float = 1e-12, ftol: float = 0.0,
                  max_iter: int = 100) -> float:
    """
    ブラケット [lo, hi] を保持する Newton 法

    Newton ステップがブラケットを出るか収束が遅い場合は二分法に切り替える。

    Args:
        func: x -> (f(x), f'(x))
        lo, hi: 符号が異なる端点
        x0: 初期値（ブラケット外なら中点）
        tol: ステップ幅の停止閾値
        ftol: |f| の停止閾値
        max_iter: 最大反復回数

    Returns:
        根
    """
    f_lo, _ = func(lo)
    f_hi, _ = func(hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if f_lo * f_hi > 0:
        raise DomainError(f"root not bracketed by [{lo}, {hi}]")
    if f_lo > 0:
        lo, hi = hi, lo

    if x0 is None or not min(lo, hi) <= x0 <= max(lo, hi):
        x0 = 0.5 * (lo + hi)
    x = x0
    dx_old = dx = abs(hi - lo)
    f, df = func(x)
    bisections = 0

    for iteration in range(1, max_iter + 1):
        if abs(f) <= ftol:
            return x
        if ((x - hi) * df - f) * ((x - lo) * df - f) >= 0.0 or abs(2.0 * f) > abs(dx_old * df):
            dx_old = dx
            dx = 0.5 * (hi - lo)
            x = lo + dx
            bisections += 1
        else:
            dx_old = dx
            dx = f / df
            x = x - dx
        if abs(dx) < tol:
            if bisections:
                logger.debug(f"newton_bisect: {bisections} bisection steps in {iteration} iterations")
            return x
        f, df = func(x)
        if f < 0:
            lo = x
        else:
            hi = x

    raise NonConvergence("newton-bisection did not converge", residual=abs(f),
                         iterations=max_iter)


def invert_f(lam: float, *, newton_tol: float = 1e-13, max_iter: int = 100,
             bisection_tol: float = 1e-12, series_threshold: float = SERIES_THRESHOLD) -> float:
    """
    F(x) = lam を解く（x0 = 0 からの Newton）

    Args:
        lam: (0, 1) の値

    Returns:
        x
    """
    if not 0.0 < lam < 1.0:
        raise DomainError(f"lambda={lam} outside (0, 1)")

    def residual(x: float) -> Tuple[float, float]:
        return (f_standard(x, series_threshold) - lam, f_prime(x, series_threshold))

    # F(-1/lam) < lam < F(1/(1-lam))
    lo = -1.0 / lam - 1.0
    hi = 1.0 / (1.0 - lam) + 1.0
    return newton_bisect(residual, lo, hi, 0.0, tol=bisection_tol, ftol=newton_tol,
                         max_iter=max_iter)


# ===== データ構造 =====

@dataclass(frozen=True)
class BucketParams:
    """バケット [lower, upper) 上の指数密度 alpha * exp(beta * x)"""
    lower: float
    upper: float
    alpha: float
    beta: float
    mass: float
    moment: float
    level: float  # g(lower)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def is_last(self) -> bool:
        return math.isinf(self.upper)

    @property
    def log_level(self) -> float:
        """ln g(lower)。level がアンダーフローしても質量から求める"""
        if self.level > 0:
            return math.log(self.level)
        if self.is_last or not self.mass > 0:
            return -math.inf
        return (math.log(self.mass) - math.log(self.width)
                - float(log_exprel(self.beta * self.width)))

    @property
    def upper_level(self) -> float:
        """g(upper-)、最後のバケットでは 0"""
        if self.is_last:
            return 0.0
        return self.mass / (self.width * float(exprel(-self.beta * self.width)))


@dataclass(frozen=True)
class MedDensity:
    """区分指数型の MED"""
    slice: MaturitySlice
    buckets: Tuple[BucketParams, ...]

    def __post_init__(self):
        object.__setattr__(self, "buckets", tuple(self.buckets))
        if len(self.buckets) != len(self.slice.strikes):
            raise DomainError("one bucket per slice strike required")

    @property
    def forward(self) -> float:
        return self.slice.forward

    @property
    def maturity(self) -> float:
        return self.slice.maturity

    @property
    def discount_factor(self) -> float:
        return self.slice.discount_factor

    @cached_property
    def strikes(self) -> np.ndarray:
        return np.asarray(self.slice.strikes)

    @cached_property
    def alphas(self) -> np.ndarray:
        return np.array([b.alpha for b in self.buckets])

    @cached_property
    def betas(self) -> np.ndarray:
        return np.array([b.beta for b in self.buckets])

    @cached_property
    def levels(self) -> np.ndarray:
        return np.array([b.level for b in self.buckets])

    @cached_property
    def log_levels(self) -> np.ndarray:
        return np.array([b.log_level for b in self.buckets])

    @cached_property
    def upper_levels(self) -> np.ndarray:
        return np.array([b.upper_level for b in self.buckets])

    @cached_property
    def uppers(self) -> np.ndarray:
        return np.array([b.upper for b in self.buckets])


# ===== バケット求解 =====

def _alpha(log_level: float, beta: float, lower: float) -> float:
    """alpha = g(K_i) e^{-beta K_i}（表現できなければ 0 または inf）"""
    with np.errstate(over='ignore', under='ignore'):
        return float(np.exp(log_level - beta * lower))


def solve_bucket(slice_: MaturitySlice, i: int, *, newton_tol: float = 1e-13,
                 max_iter: int = 100, bisection_tol: float = 1e-12,
                 series_threshold: float = SERIES_THRESHOLD) -> BucketParams:
    """
    内部バケット i (< n) の (alpha, beta)

    K̄ を [0, 1] に標準化した lam について F(x) = lam を解き beta = x / w。
    """
    if not 0 <= i < slice_.n:
        raise DomainError(f"interior bucket index {i} outside [0, {slice_.n})")
    lower, upper = float(slice_.strikes[i]), float(slice_.strikes[i + 1])
    width = upper - lower
    mass = slice_.bucket_mass(i)
    moment = slice_.bucket_moment(i)
    if not mass > 0:
        raise ArbitrageError(f"bucket mass {mass} must be > 0", bucket=i)
    lam = (moment / mass - lower) / width
    if not 0.0 < lam < 1.0:
        raise ArbitrageError(f"normalized mean {lam:.12g} outside (0, 1)", bucket=i)

    try:
        x = invert_f(lam, newton_tol=newton_tol, max_iter=max_iter,
                     bisection_tol=bisection_tol, series_threshold=series_threshold)
    except NonConvergence as e:
        raise NonConvergence(f"F inversion at lambda={lam:.12g}", e.residual,
                             e.iterations, bucket=i) from e
    beta = x / width
    log_level = math.log(mass / width) - float(log_exprel(x))
    level = math.exp(log_level)
    alpha = _alpha(log_level, beta, lower)
    logger.debug(f"bucket {i} [{lower:g}, {upper:g}): lambda={lam:.10f} "
                 f"alpha={alpha:.6e} beta={beta:.6e}")
    return BucketParams(lower, upper, alpha, beta, mass, moment, level)


def solve_last_bucket(slice_: MaturitySlice) -> BucketParams:
    """最終バケット [K_n, inf): beta_n = -D_n / C_n"""
    n = slice_.n
    lower = float(slice_.strikes[n])
    call, digital = float(slice_.calls[n]), float(slice_.digitals[n])
    if not call > 0:
        raise ArbitrageError(f"last call C_n={call} must be > 0", bucket=n)
    if not digital > 0:
        raise ArbitrageError(f"last digital D_n={digital} must be > 0", bucket=n)
    beta = -digital / call
    level = digital * digital / call
    alpha = _alpha(math.log(level), beta, lower)
    moment = call + lower * digital
    logger.debug(f"bucket {n} [{lower:g}, inf): alpha={alpha:.6e} beta={beta:.6e}")
    return BucketParams(lower, math.inf, alpha, beta, digital, moment, level)


def calibrate(slice_: MaturitySlice, *, newton_tol: float = 1e-13, max_iter: int = 100,
              bisection_tol: float = 1e-12,
              series_threshold: float = SERIES_THRESHOLD) -> MedDensity:
    """
    スライスに対する MED を構築

    各バケットは独立に解く（エラーにはバケット番号を付加）。
    """
    buckets: List[BucketParams] = []
    for i in range(slice_.n):
        buckets.append(solve_bucket(slice_, i, newton_tol=newton_tol, max_iter=max_iter,
                                    bisection_tol=bisection_tol,
                                    series_threshold=series_threshold))
    buckets.append(solve_last_bucket(slice_))
    density = MedDensity(slice_, tuple(buckets))
    logger.info(f"Calibrated MED: {len(buckets)} buckets, F={slice_.forward:g}, "
                f"entropy={entropy(density):.6f}")
    return density


# ===== エントロピー =====

def bucket_entropy(bucket: BucketParams) -> float:
    """-m ln g(K_i) - beta (s - K_i m)"""
    centered = bucket.moment - bucket.lower * bucket.mass
    return -bucket.mass * bucket.log_level - bucket.beta * centered


def entropy(density: MedDensity) -> float:
    """E(g) = -∫ g ln g（バケット閉形式の和）"""
    return float(sum(bucket_entropy(b) for b in density.buckets))
