#!/usr/bin/env python3
"""
事前分布付き最大相対エントロピー密度（MRED）

バケットごとに h(x) = γ_i e^{δ_i x} p(x) とし、質量と1次モーメントの制約を
満たす (γ_i, δ_i) を求める。

- 対数正規事前分布: 数値積分（scipy.integrate.quad）と凸双対の2次元 Newton 法
- MED 事前分布: 事後分布も区分指数型になるので解析的に解く。事前分布の
  格子がバケットより細かい場合は δ の1次元求根

主要機能:
- LogNormalPrior / MedPrior
- mred_calibrate / mred_calibrate_med_prior
- rebucket: 区分指数密度の節点追加
- mred_pdf / mred_price_call / mred_price_digital
- divergence / divergence_by_quadrature: I-ダイバージェンス D(h|p)
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import quad
from scipy.special import logsumexp
from scipy.stats import lognorm

from .density import pdf as med_pdf, price_call, price_digital
from .errors import DomainError, IntegrabilityError, MedcalError, NonConvergence
from .med_solver import (BucketParams, MedDensity, calibrate, f_prime, f_standard,
                         log_exprel, newton_bisect)
from .quotes import MaturitySlice

logger = logging.getLogger(__name__)

ARMIJO_SLOPE = 1e-4
MAX_HALVINGS = 60
MAX_BRACKET_STEPS = 200


# ===== 事前分布 =====

@dataclass(frozen=True)
class LogNormalPrior:
    """フォワード F、ボラティリティ sigma の対数正規分布"""
    forward: float
    sigma: float
    maturity: float

    def __post_init__(self):
        if not (self.forward > 0 and self.sigma > 0 and self.maturity > 0):
            raise DomainError("log-normal prior needs forward, sigma and maturity > 0")

    @property
    def log_sd(self) -> float:
        return self.sigma * math.sqrt(self.maturity)

    @cached_property
    def dist(self):
        s = self.log_sd
        return lognorm(s, scale=self.forward * math.exp(-0.5 * s * s))

    def logpdf(self, x):
        """対数密度（x <= 0 では -inf）"""
        s = self.log_sd
        x_arr = np.asarray(x, dtype=float)
        with np.errstate(divide='ignore', invalid='ignore'):
            z = (np.log(x_arr / self.forward) + 0.5 * s * s) / s
            values = -np.log(x_arr) - math.log(s * math.sqrt(2 * math.pi)) - 0.5 * z * z
        values = np.where(x_arr > 0, values, -np.inf)
        return float(values) if np.ndim(x) == 0 else values

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def mass(self, lower: float, upper: float) -> float:
        """P(lower <= X < upper)"""
        if lower >= self.dist.median():
            return float(self.dist.sf(lower) - self.dist.sf(upper))
        return float(self.dist.cdf(upper) - self.dist.cdf(lower))

    def truncation(self, sigmas: float) -> float:
        """最終バケットの積分上限 F exp(k sigma sqrt(T))"""
        return self.forward * math.exp(sigmas * self.log_sd)


@dataclass(frozen=True)
class MedPrior:
    """区分指数型（MED）の事前分布"""
    density: MedDensity


Prior = Union[LogNormalPrior, MedPrior]


# ===== データ構造 =====

@dataclass(frozen=True)
class TiltBucket:
    """バケット [lower, upper) 上の傾き h/p = gamma exp(delta x)"""
    lower: float
    upper: float
    log_gamma: float
    delta: float
    mass: float
    moment: float

    @property
    def gamma(self) -> float:
        return math.exp(self.log_gamma)


@dataclass(frozen=True)
class MredDensity:
    """MRED（MED 事前分布なら posterior に区分指数型の事後分布を持つ）"""
    slice: MaturitySlice
    prior: Prior
    buckets: Tuple[TiltBucket, ...]
    posterior: Optional[MedDensity] = None

    def __post_init__(self):
        object.__setattr__(self, "buckets", tuple(self.buckets))

    @property
    def forward(self) -> float:
        return self.slice.forward

    @property
    def maturity(self) -> float:
        return self.slice.maturity

    @property
    def gammas(self) -> np.ndarray:
        return np.array([b.gamma for b in self.buckets])

    @property
    def deltas(self) -> np.ndarray:
        return np.array([b.delta for b in self.buckets])

    @cached_property
    def lowers(self) -> np.ndarray:
        return np.array([b.lower for b in self.buckets])

    @property
    def upper(self) -> float:
        """台の上端（対数正規事前分布では打ち切り点）"""
        return self.buckets[-1].upper


# ===== 対数正規事前分布 =====

def _tilt_integrals(prior: LogNormalPrior, lower: float, upper: float, scale: float,
                    a: float, dt: float, orders: Sequence[int], quad_kw: dict) -> np.ndarray:
    """∫ t^k exp(a + dt t) p(x) dx、t = (x - lower) / scale"""
    def integrand(x: float, k: int) -> float:
        t = (x - lower) / scale
        return t ** k * np.exp(a + dt * t + prior.logpdf(x))

    return np.array([quad(integrand, lower, upper, args=(k,), **quad_kw)[0] for k in orders])


def _solve_lognormal_bucket(prior: LogNormalPrior, i: int, lower: float, upper: float,
                            mass: float, moment: float, *, quad_kw: dict,
                            residual_tol: float, max_iter: int) -> TiltBucket:
    """凸双対 ψ(a, dt) = I_0 - a m - dt s の Newton 法"""
    scale = upper - lower
    target = np.array([mass, (moment - lower * mass) / scale])
    prior_mass = prior.mass(lower, upper)
    if not prior_mass > 0:
        raise IntegrabilityError(f"prior has no mass on [{lower:g}, {upper:g})")

    a, dt = math.log(mass / prior_mass), 0.0
    integrals = _tilt_integrals(prior, lower, upper, scale, a, dt, (0, 1, 2), quad_kw)
    psi = integrals[0] - a * target[0] - dt * target[1]
    grad = integrals[:2] - target

    for iteration in range(max_iter + 1):
        error = float(np.max(np.abs(grad)) / mass)
        if error <= residual_tol:
            delta = dt / scale
            logger.debug(f"bucket {i} [{lower:g}, {upper:g}): gamma={math.exp(a - delta * lower):.6g} "
                         f"delta={delta:.6g} after {iteration} iterations")
            return TiltBucket(lower, upper, a - delta * lower, delta, mass, moment)
        if iteration == max_iter:
            break

        hessian = np.array([[integrals[0], integrals[1]], [integrals[1], integrals[2]]])
        step = -np.linalg.solve(hessian, grad)
        slope = grad @ step
        t = 1.0
        for _ in range(MAX_HALVINGS):
            trial = (a + t * step[0], dt + t * step[1])
            trial_mass = _tilt_integrals(prior, lower, upper, scale, *trial, (0,), quad_kw)[0]
            trial_psi = trial_mass - trial[0] * target[0] - trial[1] * target[1]
            if np.isfinite(trial_psi) and trial_psi <= psi + ARMIJO_SLOPE * t * slope:
                break
            t *= 0.5
        else:
            logger.warning(f"bucket {i}: step halving exhausted")
            break

        a, dt = trial
        integrals = _tilt_integrals(prior, lower, upper, scale, a, dt, (0, 1, 2), quad_kw)
        psi = integrals[0] - a * target[0] - dt * target[1]
        grad = integrals[:2] - target

    raise NonConvergence("relative-entropy bucket solve did not converge",
                         residual=error, iterations=max_iter, bucket=i)


def mred_calibrate(slice_: MaturitySlice, prior: Prior, *, quad_rel_tol: float = 1e-10,
                   quad_limit: int = 200, residual_tol: float = 1e-9, max_iter: int = 50,
                   truncation_sigmas: float = 10.0) -> MredDensity:
    """
    スライスに対する MRED

    MED 事前分布は mred_calibrate_med_prior に委ねる。対数正規事前分布では
    最終バケットを F exp(k sigma sqrt(T)) で打ち切る。

    Args:
        slice_: 検証済みスライス
        prior: LogNormalPrior または MedPrior
        quad_rel_tol, quad_limit: scipy.integrate.quad の設定
        residual_tol: 制約残差 / バケット質量 の停止閾値
        max_iter: バケットごとの Newton 反復上限
        truncation_sigmas: 打ち切りの k

    Returns:
        MredDensity
    """
    if isinstance(prior, MedPrior):
        return mred_calibrate_med_prior(slice_, prior.density)
    if isinstance(prior, MedDensity):
        return mred_calibrate_med_prior(slice_, prior)

    upper_bound = prior.truncation(truncation_sigmas)
    if not upper_bound > slice_.strikes[-1]:
        raise DomainError(f"truncation point {upper_bound:g} not above the last strike "
                          f"{slice_.strikes[-1]:g}")
    quad_kw = {"epsabs": 0.0, "epsrel": quad_rel_tol, "limit": quad_limit}

    buckets: List[TiltBucket] = []
    for i in range(slice_.n + 1):
        lower = float(slice_.strikes[i])
        upper = float(slice_.strikes[i + 1]) if i < slice_.n else upper_bound
        buckets.append(_solve_lognormal_bucket(
            prior, i, lower, upper, slice_.bucket_mass(i), slice_.bucket_moment(i),
            quad_kw=quad_kw, residual_tol=residual_tol, max_iter=max_iter))

    mred = MredDensity(slice_, prior, tuple(buckets))
    logger.info(f"Calibrated MRED (log-normal prior sigma={prior.sigma:g}): "
                f"{len(buckets)} buckets, divergence={divergence(mred):.6g}")
    return mred


# ===== MED 事前分布 =====

def _union_grid(strikes: Sequence[float], boundaries: Sequence[float]) -> np.ndarray:
    return np.unique(np.concatenate((np.asarray(strikes, dtype=float),
                                     [float(b) for b in boundaries if b >= 0])))


def _bucket_totals(lowers: np.ndarray, betas: np.ndarray, log_levels: np.ndarray
                   ) -> Tuple[np.ndarray, np.ndarray]:
    """区分指数の各区間の (質量, 1次モーメント)"""
    widths = np.append(np.diff(lowers), np.inf)
    log_mass, mean, _ = _piece_stats(log_levels, lowers, widths, betas)
    masses = np.exp(log_mass)
    return masses, masses * (lowers + mean)


def _piecewise_density(template: MaturitySlice, lowers: np.ndarray, betas: np.ndarray,
                       log_levels: np.ndarray, anchors: Optional[MaturitySlice] = None
                       ) -> MedDensity:
    """区分指数のパラメータから合成スライス付き MedDensity を組み立てる"""
    if not betas[-1] < 0:
        raise IntegrabilityError(f"last exponent {betas[-1]:.6g} must be < 0")
    masses, moments = _bucket_totals(lowers, betas, log_levels)
    digitals = np.cumsum(masses[::-1])[::-1]
    calls = np.cumsum(moments[::-1])[::-1] - lowers * digitals
    if anchors is not None:
        # 元のストライクでは市場値をそのまま使う
        pos = np.searchsorted(lowers, anchors.strikes)
        digitals[pos] = anchors.digitals
        calls[pos] = anchors.calls
    synthetic = MaturitySlice(template.maturity, template.discount_factor, lowers, calls,
                              digitals)
    uppers = np.append(lowers[1:], np.inf)
    with np.errstate(over='ignore', under='ignore'):
        alphas = np.exp(log_levels - betas * lowers)
        levels = np.exp(log_levels)
    buckets = tuple(BucketParams(float(lo), float(up), float(a), float(b), float(ms), float(mo),
                                 float(lv))
                    for lo, up, a, b, ms, mo, lv in zip(lowers, uppers, alphas, betas, masses,
                                                        moments, levels))
    return MedDensity(synthetic, buckets)


def rebucket(density: MedDensity, boundaries: Sequence[float]) -> MedDensity:
    """
    節点を追加した同一の区分指数密度

    新しい節点では元のバケットの (alpha, beta) をそのまま使う。
    """
    grid = _union_grid(density.strikes, boundaries)
    idx = np.searchsorted(density.strikes, grid, side='right') - 1
    betas = density.betas[idx]
    levels = np.asarray(med_pdf(density, grid))
    digitals = np.asarray(price_digital(density, grid), dtype=float)
    calls = np.asarray(price_call(density, grid), dtype=float)
    synthetic = MaturitySlice(density.maturity, density.discount_factor, grid, calls, digitals)
    uppers = np.append(grid[1:], np.inf)
    buckets = []
    for j, (lo, up, b, lv) in enumerate(zip(grid, uppers, betas, levels)):
        mass = synthetic.bucket_mass(j)
        moment = synthetic.bucket_moment(j)
        buckets.append(BucketParams(float(lo), float(up), float(density.alphas[idx[j]]),
                                    float(b), mass, moment, float(lv)))
    return MedDensity(synthetic, tuple(buckets))


def _piece_stats(log_levels: np.ndarray, lowers: np.ndarray, widths: np.ndarray,
                 slopes: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """各ピースの (対数質量, 下端からの平均, 分散)。最後のピースは無限でもよい"""
    finite = np.isfinite(widths)
    with np.errstate(invalid='ignore', divide='ignore', over='ignore'):
        z = np.where(finite, slopes * widths, 0.0)
        safe_w = np.where(finite, widths, 1.0)
        log_mass = np.where(finite, log_levels + np.log(safe_w) + log_exprel(z),
                            log_levels - np.log(-slopes))
        mean = np.where(finite, safe_w * np.asarray(f_standard(z)), -1.0 / slopes)
        var = np.where(finite, safe_w ** 2 * np.asarray(f_prime(z)), 1.0 / slopes ** 2)
    return log_mass, mean, var


def _solve_tilt(i: int, lowers: np.ndarray, widths: np.ndarray, betas: np.ndarray,
                log_levels: np.ndarray, lower: float, target_mean: float, *,
                newton_tol: float, max_iter: int, bisection_tol: float) -> float:
    """事前分布の複数ピースにまたがるバケットで、傾けた平均が K̄ に一致する δ"""
    offsets = lowers - lower

    def mean_gap(delta: float) -> Tuple[float, float]:
        log_mass, mean, var = _piece_stats(log_levels + delta * offsets, lowers, widths,
                                           betas + delta)
        probs = np.exp(log_mass - logsumexp(log_mass))
        first = offsets + mean
        avg = float(probs @ first)
        spread = float(probs @ (var + first ** 2)) - avg * avg
        return avg - (target_mean - lower), spread

    scale = widths[np.isfinite(widths)].sum() or 1.0
    if np.isfinite(widths[-1]):
        lo, hi = -1.0 / scale, 1.0 / scale
        for _ in range(MAX_BRACKET_STEPS):
            if mean_gap(lo)[0] < 0:
                break
            lo *= 2
        for _ in range(MAX_BRACKET_STEPS):
            if mean_gap(hi)[0] > 0:
                break
            hi *= 2
    else:
        # 裾の指数は負のまま
        cap = -betas[-1]
        lo, hi = -cap, 0.5 * cap
        for k in range(2, MAX_BRACKET_STEPS):
            if mean_gap(lo)[0] < 0:
                break
            lo = cap * (1.0 - 2.0 ** k)
        for k in range(2, MAX_BRACKET_STEPS):
            if mean_gap(hi)[0] > 0:
                break
            hi = cap * (1.0 - 2.0 ** -k)

    try:
        return newton_bisect(mean_gap, lo, hi, 0.0, tol=bisection_tol * scale,
                             ftol=newton_tol * max(scale, abs(target_mean)),
                             max_iter=max_iter)
    except MedcalError as e:
        raise NonConvergence(f"tilt solve failed ({e})", bucket=i) from e


def mred_calibrate_med_prior(slice_: MaturitySlice, prior: MedDensity, *,
                             newton_tol: float = 1e-13, max_iter: int = 100,
                             bisection_tol: float = 1e-12) -> MredDensity:
    """
    MED 事前分布に対する MRED（解析解）

    事前分布を節点の和集合に細分し、バケット内が1ピースなら
    δ = β_MED - β_prior, γ = α_MED / α_prior。複数ピースなら δ の1次元求根。
    """
    target = calibrate(slice_, newton_tol=newton_tol, max_iter=max_iter,
                       bisection_tol=bisection_tol)
    refined = rebucket(prior, slice_.strikes)
    grid = refined.strikes
    widths = np.append(np.diff(grid), np.inf)
    prior_betas = refined.betas
    prior_log_levels = refined.log_levels

    post_betas = np.empty(len(grid))
    post_log_levels = np.empty(len(grid))
    tilts: List[TiltBucket] = []
    owner = np.searchsorted(slice_.strikes, grid, side='right') - 1

    for i, bucket in enumerate(target.buckets):
        pieces = np.flatnonzero(owner == i)
        first = pieces[0]
        if len(pieces) == 1:
            delta = bucket.beta - prior_betas[first]
            log_gamma = (bucket.log_level - prior_log_levels[first]
                         - delta * bucket.lower)
        else:
            delta = _solve_tilt(i, grid[pieces], widths[pieces], prior_betas[pieces],
                                prior_log_levels[pieces], bucket.lower,
                                bucket.moment / bucket.mass, newton_tol=newton_tol,
                                max_iter=max_iter, bisection_tol=bisection_tol)
            offsets = grid[pieces] - bucket.lower
            log_mass, _, _ = _piece_stats(prior_log_levels[pieces] + delta * offsets,
                                          grid[pieces], widths[pieces],
                                          prior_betas[pieces] + delta)
            log_gamma = math.log(bucket.mass) - float(logsumexp(log_mass)) - delta * bucket.lower
        post_betas[pieces] = prior_betas[pieces] + delta
        post_log_levels[pieces] = prior_log_levels[pieces] + log_gamma + delta * grid[pieces]
        tilts.append(TiltBucket(bucket.lower, bucket.upper, log_gamma, float(delta),
                                bucket.mass, bucket.moment))

    posterior = _piecewise_density(slice_, grid, post_betas, post_log_levels,
                                   anchors=slice_)
    mred = MredDensity(slice_, MedPrior(prior), tuple(tilts), posterior)
    logger.info(f"Calibrated MRED (MED prior, {prior.slice.n + 1} pieces): "
                f"{len(tilts)} buckets, divergence={divergence(mred):.6g}")
    return mred


# ===== 評価 =====

def _bucket_index(mred: MredDensity, x: np.ndarray) -> np.ndarray:
    return np.clip(np.searchsorted(mred.lowers, x, side='right') - 1, 0, len(mred.buckets) - 1)


def mred_logpdf(mred: MredDensity, x):
    """ln h(x)（台の外では -inf）"""
    x_arr = np.asarray(x, dtype=float)
    if mred.posterior is not None:
        with np.errstate(divide='ignore'):
            values = np.log(np.asarray(med_pdf(mred.posterior, x_arr)))
    else:
        idx = _bucket_index(mred, x_arr)
        log_gamma = np.array([b.log_gamma for b in mred.buckets])
        values = log_gamma[idx] + mred.deltas[idx] * x_arr + mred.prior.logpdf(x_arr)
        values = np.where(x_arr < mred.upper, values, -np.inf)
    values = np.where(x_arr < 0, -np.inf, values)
    return float(values) if np.ndim(x) == 0 else values


def mred_pdf(mred: MredDensity, x):
    """h(x) = gamma_i exp(delta_i x) p(x)"""
    return np.exp(mred_logpdf(mred, x))


def _quad_kw(quad_rel_tol: float, quad_limit: int) -> dict:
    return {"epsabs": 0.0, "epsrel": quad_rel_tol, "limit": quad_limit}


def _tail_integral(mred: MredDensity, strike: float, payoff, quad_kw: dict) -> float:
    total = 0.0
    for b in mred.buckets:
        lo = max(b.lower, strike)
        if lo >= b.upper:
            continue
        total += quad(lambda x: payoff(x) * mred_pdf(mred, x), lo, b.upper, **quad_kw)[0]
    return total


def mred_price_call(mred: MredDensity, strike, *, quad_rel_tol: float = 1e-10,
                    quad_limit: int = 200):
    """割引なしコール価格（MED 事前分布なら解析式、対数正規なら数値積分）"""
    if mred.posterior is not None:
        return price_call(mred.posterior, strike)
    kw = _quad_kw(quad_rel_tol, quad_limit)
    values = np.array([_tail_integral(mred, max(k, 0.0), lambda x, k=k: x - k, kw)
                       for k in np.ravel(np.asarray(strike, dtype=float))])
    return float(values[0]) if np.ndim(strike) == 0 else values.reshape(np.shape(strike))


def mred_price_digital(mred: MredDensity, strike, *, quad_rel_tol: float = 1e-10,
                       quad_limit: int = 200):
    """割引なしデジタル価格"""
    if mred.posterior is not None:
        return price_digital(mred.posterior, strike)
    kw = _quad_kw(quad_rel_tol, quad_limit)
    values = np.array([_tail_integral(mred, max(k, 0.0), lambda x: 1.0, kw)
                       for k in np.ravel(np.asarray(strike, dtype=float))])
    return float(values[0]) if np.ndim(strike) == 0 else values.reshape(np.shape(strike))


# ===== ダイバージェンス =====

def divergence(mred: MredDensity) -> float:
    """D(h|p) = Σ (m_i ln γ_i + δ_i s_i)（制約から閉形式）"""
    return float(sum(b.mass * b.log_gamma + b.delta * b.moment for b in mred.buckets))


def divergence_by_quadrature(mred: MredDensity, *, quad_rel_tol: float = 1e-10,
                             quad_limit: int = 200) -> float:
    """D(h|p) = ∫ h ln(h/p) の数値積分（閉形式の検算用）"""
    kw = _quad_kw(quad_rel_tol, quad_limit)
    total = 0.0
    for b in mred.buckets:
        def integrand(x: float, b: TiltBucket = b) -> float:
            return mred_pdf(mred, x) * (b.log_gamma + b.delta * x)
        total += quad(integrand, b.lower, b.upper, **kw)[0]
    return total
