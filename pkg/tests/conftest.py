"""共通フィクスチャ: フラット・ボラティリティ市場と CBOE スライス"""

from pathlib import Path

import pytest

from medcal.bs import BsParams, market_quotes
from medcal.med_solver import calibrate
from medcal.quotes import build_slice

DATA_DIR = Path(__file__).resolve().parent.parent / "data"

FLAT = BsParams(forward=100.0, vol=0.25, maturity=1.0)
MARKET_STRIKES = [float(k) for k in range(0, 200, 20)]

ONE_STRIKE = [100.0]
THREE_STRIKES = [60.0, 100.0, 140.0]
FIVE_STRIKES = [60.0, 80.0, 100.0, 120.0, 140.0]


def flat_slice(strikes):
    """F=100, sigma=25%, T=1 の市場から指定ストライクだけを使ったスライス"""
    quotes = market_quotes(FLAT, MARKET_STRIKES)
    return build_slice(quotes, 1.0, 1.0, 100.0, strikes=strikes)


@pytest.fixture
def market_quotes_flat():
    return market_quotes(FLAT, MARKET_STRIKES)


@pytest.fixture
def slice_1():
    return flat_slice(ONE_STRIKE)


@pytest.fixture
def slice_3():
    return flat_slice(THREE_STRIKES)


@pytest.fixture
def slice_5():
    return flat_slice(FIVE_STRIKES)


@pytest.fixture
def med_1(slice_1):
    return calibrate(slice_1)


@pytest.fixture
def med_3(slice_3):
    return calibrate(slice_3)


@pytest.fixture
def med_5(slice_5):
    return calibrate(slice_5)


@pytest.fixture
def interleaved_file():
    """コールとデジタルが揃った CBOE スライス"""
    return DATA_DIR / "cboe_spx_20100918.csv"


@pytest.fixture
def calls_only_file():
    """コールのみの CBOE スライス"""
    return DATA_DIR / "cboe_spx_20101231.csv"
