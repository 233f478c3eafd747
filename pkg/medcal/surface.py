#!/usr/bin/env python3
"""
インプライド・ボラティリティのスマイルとサーフェス

主要機能:
- smile: 較正済み密度（MED / コールのみ / MRED）のスマイル
- atm_surface: ATM のみで較正した MED によるサーフェス
- moneyness_grid: 対数等間隔のストライク格子
- VolGrid: 満期 × ストライクの行列（逆算失敗は NaN）
"""

import io
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .bk_solver import BkDensity, bk_price_call
from .bs import BsParams, implied_vol, market_quotes
from .density import price_call
from .errors import DomainError, OutOfRange
from .med_solver import MedDensity, calibrate
from .mred_solver import MredDensity, mred_price_call
from .quotes import build_slice

logger = logging.getLogger(__name__)

Density = Union[MedDensity, BkDensity, MredDensity]


@dataclass(frozen=True)
class VolGrid:
    """満期 × ストライクのインプライド・ボラティリティ"""
    maturities: np.ndarray
    strikes: np.ndarray
    vols: np.ndarray

    def __post_init__(self):
        for name in ("maturities", "strikes", "vols"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.vols.shape != (len(self.maturities), len(self.strikes)):
            raise DomainError(f"vol matrix shape {self.vols.shape} does not match "
                              f"{len(self.maturities)} maturities x {len(self.strikes)} strikes")

    @property
    def failed(self) -> np.ndarray:
        """逆算に失敗したセル"""
        return np.isnan(self.vols)

    def to_frame(self) -> pd.DataFrame:
        """縦持ち形式 (T, K, vol)"""
        t, k = np.meshgrid(self.maturities, self.strikes, indexing='ij')
        return pd.DataFrame({"T": t.ravel(), "K": k.ravel(), "vol": self.vols.ravel()})

    def to_matrix_text(self, digits: int = 6) -> str:
        """gnuplot の nonuniform matrix 形式"""
        buffer = io.StringIO()
        header = [str(len(self.strikes))] + [f"{k:.{digits}g}" for k in self.strikes]
        buffer.write(" ".join(header) + "\n")
        for t, row in zip(self.maturities, self.vols):
            cells = [f"{t:.{digits}g}"] + [("NaN" if np.isnan(v) else f"{v:.{digits}g}")
                                           for v in row]
            buffer.write(" ".join(cells) + "\n")
        return buffer.getvalue()


def moneyness_grid(forward: float, lower: float = 0.5, upper: float = 2.0,
                   points: int = 31) -> np.ndarray:
    """F * [lower, upper] の対数等間隔ストライク"""
    if not (0 < lower < upper) or points < 2:
        raise DomainError(f"invalid moneyness grid [{lower}, {upper}] x {points}")
    return forward * np.geomspace(lower, upper, points)


def _call_pricer(density: Density) -> Callable[[float], float]:
    if isinstance(density, MedDensity):
        return lambda k: price_call(density, k)
    if isinstance(density, BkDensity):
        return lambda k: bk_price_call(density, k)
    if isinstance(density, MredDensity):
        return lambda k: mred_price_call(density, k)
    raise DomainError(f"unsupported density type {type(density).__name__}")


def smile(density: Density, strikes: Sequence[float], maturity: Optional[float] = None, *,
          vol_lower: float = 1e-6, vol_upper: float = 5.0,
          vol_tol: float = 1e-12) -> np.ndarray:
    """
    密度のコール価格をインプライド・ボラティリティに変換

    逆算できないストライクは NaN（補間しない）。

    Args:
        density: 較正済み密度
        strikes: 正のストライク
        maturity: 満期（省略時は密度のスライスから）

    Returns:
        strikes と同じ長さの配列
    """
    if maturity is None:
        maturity = getattr(density, "maturity", None)
        if maturity is None:
            raise DomainError("maturity required for a calls-only density")
    pricer = _call_pricer(density)
    forward = density.forward
    vols = np.full(len(strikes), np.nan)
    for j, k in enumerate(strikes):
        try:
            vols[j] = implied_vol(float(pricer(float(k))), forward, float(k), maturity,
                                  vol_lower=vol_lower, vol_upper=vol_upper, vol_tol=vol_tol)
        except OutOfRange as e:
            logger.warning(f"implied vol failed at K={k:g}: {e}")
    return vols


def atm_surface(forward: float, sigma_atm: Union[float, Sequence[float]],
                maturities: Sequence[float], strike_grid: Optional[Sequence[float]] = None, *,
                moneyness_lower: float = 0.5, moneyness_upper: float = 2.0, points: int = 31,
                vol_lower: float = 1e-6, vol_upper: float = 5.0,
                vol_tol: float = 1e-12) -> VolGrid:
    """
    ATM コールとデジタルだけで較正した MED のサーフェス

    Args:
        forward: フォワード（ATM = フォワード）
        sigma_atm: 定数または満期ごとの ATM ボラティリティ
        maturities: 昇順の満期
        strike_grid: ストライク（省略時は moneyness_grid）

    Returns:
        VolGrid
    """
    maturities = np.asarray(maturities, dtype=float)
    if np.any(np.diff(maturities) <= 0):
        raise DomainError("maturities must be increasing")
    sigmas = np.broadcast_to(np.asarray(sigma_atm, dtype=float), maturities.shape)
    if strike_grid is None:
        strike_grid = moneyness_grid(forward, moneyness_lower, moneyness_upper, points)
    strikes = np.asarray(strike_grid, dtype=float)

    rows = []
    for t, sigma in zip(maturities, sigmas):
        params = BsParams(forward, float(sigma), float(t))
        slice_ = build_slice(market_quotes(params, [0.0, forward]), 1.0, float(t), forward)
        density = calibrate(slice_)
        rows.append(smile(density, strikes, float(t), vol_lower=vol_lower,
                          vol_upper=vol_upper, vol_tol=vol_tol))
        logger.debug(f"surface row T={t:g} sigma_atm={sigma:g} done")
    grid = VolGrid(maturities, strikes, np.vstack(rows) if rows else np.empty((0, len(strikes))))
    logger.info(f"ATM surface: {len(maturities)} maturities x {len(strikes)} strikes, "
                f"{int(grid.failed.sum())} failed cells")
    return grid
