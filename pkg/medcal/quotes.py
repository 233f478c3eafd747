#!/usr/bin/env python3
"""
オプション・クォートのデータモデルと検証

単一満期のコール／デジタル・クォートから、割引を外した（undiscounted）
価格スライスを構築し、バケット単位の無裁定条件を検証する。

主要機能:
- RawQuote: bid/ask クォート（割引価格）
- MaturitySlice: 検証済みスライス（K_0 = 0 にフォワードを置く）
- build_slice: クォート → スライス（mid 計算・割引除去・検証）
- digitals_from_call_spreads: 対称コールスプレッドによるデジタル推定
- validate_slice: 無裁定条件のチェック（違反リストを返す）
- load_quote_file: CSV クォートファイルの読み込み
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import BoundaryStrike, MissingForward, QuoteFileError, ValidationError

logger = logging.getLogger(__name__)

QUOTE_COLUMNS = ["strike", "call_bid", "call_ask", "digital_bid", "digital_ask"]
META_PREFIX = "#meta"


# ===== クォート =====

def _mid(bid: Optional[float], ask: Optional[float]) -> Optional[float]:
    """bid/ask の算術平均。片側しか無ければその値"""
    if bid is not None and ask is not None:
        return 0.5 * (bid + ask)
    return bid if bid is not None else ask


@dataclass(frozen=True)
class RawQuote:
    """単一ストライクのクォート（割引価格）"""
    strike: float
    call_bid: Optional[float] = None
    call_ask: Optional[float] = None
    digital_bid: Optional[float] = None
    digital_ask: Optional[float] = None

    def __post_init__(self):
        if self.call_bid is None and self.call_ask is None:
            raise ValidationError(f"strike {self.strike}: no call quote")
        for side, bid, ask in (("call", self.call_bid, self.call_ask),
                               ("digital", self.digital_bid, self.digital_ask)):
            if bid is not None and ask is not None and bid > ask:
                raise ValidationError(f"strike {self.strike}: {side} bid {bid} > ask {ask}")

    @property
    def call_mid(self) -> float:
        return _mid(self.call_bid, self.call_ask)

    @property
    def digital_mid(self) -> Optional[float]:
        return _mid(self.digital_bid, self.digital_ask)


# ===== スライス =====

@dataclass(frozen=True)
class Violation:
    """無裁定条件の違反1件"""
    index: int
    rule: str
    message: str

    def __str__(self) -> str:
        return f"[{self.index}] {self.rule}: {self.message}"


def _frozen_array(values: Iterable[float]) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MaturitySlice:
    """
    単一満期の割引除去済み価格

    strikes[0] = 0, calls[0] = フォワード, digitals[0] = 1。
    K_{n+1} = inf, C_{n+1} = D_{n+1} = 0 の番兵は保持しない。
    """
    maturity: float
    discount_factor: float
    strikes: np.ndarray
    calls: np.ndarray
    digitals: np.ndarray

    def __post_init__(self):
        for name in ("strikes", "calls", "digitals"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        if self.strikes.ndim != 1 or len(self.strikes) == 0:
            raise ValidationError("slice needs at least the zero strike")
        if not (len(self.strikes) == len(self.calls) == len(self.digitals)):
            raise ValidationError("strikes, calls and digitals differ in length")

    @property
    def n(self) -> int:
        """最終ストライクのインデックス"""
        return len(self.strikes) - 1

    @property
    def forward(self) -> float:
        return float(self.calls[0])

    def bucket_mass(self, i: int) -> float:
        """D_i - D_{i+1}"""
        upper = self.digitals[i + 1] if i < self.n else 0.0
        return float(self.digitals[i] - upper)

    def bucket_moment(self, i: int) -> float:
        """(C_i + K_i D_i) - (C_{i+1} + K_{i+1} D_{i+1})"""
        lower = self.calls[i] + self.strikes[i] * self.digitals[i]
        if i == self.n:
            return float(lower)
        upper = self.calls[i + 1] + self.strikes[i + 1] * self.digitals[i + 1]
        return float(lower - upper)

    def bucket_mean(self, i: int) -> float:
        """バケット平均比 K̄_i"""
        return self.bucket_moment(i) / self.bucket_mass(i)

    def restrict(self, strikes: Sequence[float]) -> "MaturitySlice":
        """指定ストライクのみのスライス（K=0 は常に残す）"""
        wanted = set(float(k) for k in strikes) | {0.0}
        idx = [i for i, k in enumerate(self.strikes) if float(k) in wanted]
        missing = wanted - {float(self.strikes[i]) for i in idx}
        if missing:
            raise ValidationError(f"strikes not in slice: {sorted(missing)}")
        return MaturitySlice(self.maturity, self.discount_factor,
                             self.strikes[idx], self.calls[idx], self.digitals[idx])


def validate_slice(slice_: MaturitySlice, tolerance: float = 1e-12) -> List[Violation]:
    """
    スライスの無裁定条件チェック

    Args:
        slice_: 検証対象
        tolerance: 厳密不等号に対する絶対スラック

    Returns:
        違反リスト（空なら OK）
    """
    violations: List[Violation] = []
    K, C, D = slice_.strikes, slice_.calls, slice_.digitals
    n = slice_.n

    if not slice_.maturity > 0:
        violations.append(Violation(0, "maturity", f"T={slice_.maturity} must be > 0"))
    if not 0 < slice_.discount_factor <= 1:
        violations.append(Violation(0, "discount_factor",
                                    f"DF={slice_.discount_factor} not in (0, 1]"))
    if K[0] != 0:
        violations.append(Violation(0, "strike_origin", f"K_0={K[0]} must be 0"))
    if abs(D[0] - 1.0) > tolerance:
        violations.append(Violation(0, "digital_norm", f"D_0={D[0]} must be 1"))
    if not C[0] > 0:
        violations.append(Violation(0, "positive_price", f"forward C_0={C[0]} must be > 0"))

    for i in range(n):
        if not K[i + 1] - K[i] > 0:
            violations.append(Violation(i, "strike_order",
                                        f"K_{i}={K[i]} >= K_{i + 1}={K[i + 1]}"))
            continue
        if not D[i] - D[i + 1] > tolerance:
            violations.append(Violation(i, "digital_order",
                                        f"D_{i}={D[i]} <= D_{i + 1}={D[i + 1]}"))
            continue
        if not C[i] - C[i + 1] > tolerance:
            violations.append(Violation(i, "call_order",
                                        f"C_{i}={C[i]} <= C_{i + 1}={C[i + 1]}"))
            continue
        mass = D[i] - D[i + 1]
        moment = slice_.bucket_moment(i)
        if not (moment - K[i] * mass > tolerance and K[i + 1] * mass - moment > tolerance):
            k_bar = moment / mass
            violations.append(Violation(
                i, "mean_not_interior",
                f"K̄={k_bar:.10g} not interior to ({K[i]:g}, {K[i + 1]:g})"))

    if not C[n] > 0:
        violations.append(Violation(n, "last_bucket", f"C_n={C[n]} must be > 0"))
    if not D[n] > 0:
        violations.append(Violation(n, "last_bucket", f"D_n={D[n]} must be > 0"))

    for v in violations:
        logger.debug(f"slice violation {v}")
    return violations


# ===== コールスプレッド =====

def digitals_from_call_spreads(strikes: Sequence[float], calls: Sequence[float]) -> np.ndarray:
    """
    隣接ストライクの対称コールスプレッドで内部ストライクのデジタルを推定

    D_i = -(C_{i+1} - C_{i-1}) / (K_{i+1} - K_{i-1})

    Returns:
        strikes[1:-1] に対応する推定値
    """
    K = np.asarray(strikes, dtype=float)
    C = np.asarray(calls, dtype=float)
    if len(K) < 3:
        raise BoundaryStrike("need three consecutive strikes for a symmetric call spread")
    return -(C[2:] - C[:-2]) / (K[2:] - K[:-2])


def digital_from_call_spread(strikes: Sequence[float], calls: Sequence[float],
                             target: float, width: float) -> float:
    """target ± width のコールでデジタルを推定"""
    prices = {float(k): float(c) for k, c in zip(strikes, calls)}
    lower, upper = float(target - width), float(target + width)
    if lower not in prices or upper not in prices:
        raise BoundaryStrike(f"strike {target}: no call quote at {lower:g} and {upper:g}")
    return -(prices[upper] - prices[lower]) / (upper - lower)


# ===== スライス構築 =====

def build_slice(quotes: Sequence[RawQuote], discount_factor: float, maturity: float,
                forward: Optional[float] = None, *, strikes: Optional[Sequence[float]] = None,
                spread_width: Optional[float] = None, tolerance: float = 1e-12) -> MaturitySlice:
    """
    クォートから検証済みスライスを構築

    Args:
        quotes: クォート（順不同）
        discount_factor: DF(0,T)
        maturity: 満期[年]
        forward: フォワード（省略時は K=0 のコール mid / DF）
        strikes: 使用するストライク（省略時は全て）
        spread_width: デジタル欠損時にコールスプレッドで補う幅
        tolerance: 検証スラック

    Returns:
        MaturitySlice
    """
    if not 0 < discount_factor <= 1:
        raise ValidationError(f"discount factor {discount_factor} not in (0, 1]")
    if not maturity > 0:
        raise ValidationError(f"maturity {maturity} must be > 0")

    ordered = sorted(quotes, key=lambda q: q.strike)
    zero = [q for q in ordered if q.strike == 0]
    positive = [q for q in ordered if q.strike > 0]

    if forward is None:
        if not zero:
            raise MissingForward("no forward given and no quote at strike 0")
        forward = zero[0].call_mid / discount_factor
    if not forward > 0:
        raise ValidationError(f"forward {forward} must be > 0")

    all_strikes = [q.strike for q in positive]
    all_calls = [q.call_mid / discount_factor for q in positive]

    selected = positive
    if strikes is not None:
        wanted = {float(k) for k in strikes if k > 0}
        selected = [q for q in positive if float(q.strike) in wanted]
        missing = wanted - {float(q.strike) for q in selected}
        if missing:
            raise ValidationError(f"requested strikes without quotes: {sorted(missing)}")

    K, C, D = [0.0], [float(forward)], [1.0]
    for q in selected:
        digital = q.digital_mid
        if digital is None:
            if spread_width is None:
                raise ValidationError(f"strike {q.strike}: no digital quote "
                                      f"(use a call spread width)")
            digital = digital_from_call_spread(all_strikes, all_calls, q.strike, spread_width)
        else:
            digital = digital / discount_factor
        K.append(float(q.strike))
        C.append(q.call_mid / discount_factor)
        D.append(float(digital))

    slice_ = MaturitySlice(maturity, discount_factor, K, C, D)
    violations = validate_slice(slice_, tolerance)
    if violations:
        raise ValidationError("quote slice admits arbitrage", violations)
    logger.debug(f"built slice T={maturity} DF={discount_factor} F={forward} n={slice_.n}")
    return slice_


# ===== ファイル入出力 =====

def _parse_meta(line: str) -> Dict[str, float]:
    meta: Dict[str, float] = {}
    for item in line.strip().split(",")[1:]:
        if not item:
            continue
        key, sep, value = item.partition("=")
        if not sep:
            raise QuoteFileError(f"malformed meta item '{item}'")
        try:
            meta[key.strip()] = float(value)
        except ValueError as e:
            raise QuoteFileError(f"meta item '{item}' is not numeric") from e
    return meta


def _cell(value) -> Optional[float]:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return float(value)


def load_quote_file(path) -> Tuple[List[RawQuote], Dict[str, float]]:
    """
    CSV クォートファイルを読み込む

    先頭行が `#meta,T=..,DF=..,F=..` ならメタデータとして解釈する。

    Returns:
        (クォートリスト, メタデータ辞書)
    """
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            first = f.readline()
    except OSError as e:
        raise QuoteFileError(f"cannot read {path}: {e}") from e

    meta: Dict[str, float] = {}
    skip = 0
    if first.startswith(META_PREFIX):
        meta = _parse_meta(first)
        skip = 1

    try:
        frame = pd.read_csv(path, skiprows=skip, encoding='utf-8')
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise QuoteFileError(f"{path}: {e}") from e

    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in QUOTE_COLUMNS if c not in frame.columns]
    if missing:
        raise QuoteFileError(f"{path}: missing columns {missing}")
    try:
        frame = frame[QUOTE_COLUMNS].apply(pd.to_numeric, errors='raise')
    except (ValueError, TypeError) as e:
        raise QuoteFileError(f"{path}: non-numeric cell ({e})") from e

    quotes = [RawQuote(float(row.strike), _cell(row.call_bid), _cell(row.call_ask),
                       _cell(row.digital_bid), _cell(row.digital_ask))
              for row in frame.itertuples(index=False)]
    logger.info(f"Loaded {len(quotes)} quotes from {path}")
    return quotes, meta


def write_quote_file(path, quotes: Sequence[RawQuote], meta: Optional[Dict[str, float]] = None):
    """クォートファイルを書き出す（path が None なら文字列を返す）"""
    frame = pd.DataFrame([{
        "strike": q.strike, "call_bid": q.call_bid, "call_ask": q.call_ask,
        "digital_bid": q.digital_bid, "digital_ask": q.digital_ask,
    } for q in quotes], columns=QUOTE_COLUMNS)
    header = ""
    if meta:
        header = META_PREFIX + "," + ",".join(f"{k}={v:.10g}" for k, v in meta.items()) + "\n"
    body = frame.to_csv(index=False, float_format="%.10g")
    if path is None:
        return header + body
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(header + body)
    return None
