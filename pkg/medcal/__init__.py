"""
MEDCAL: コール・デジタル価格からの最大エントロピー・リスク中立密度

主要機能:
- quotes: クォートとスライスの検証
- med_solver / density: MED の較正と解析的評価
- bk_solver: コールのみの MED
- mred_solver: 事前分布付き MRED
- bs / surface: Black-Scholes とスマイル・サーフェス
"""

from .bk_solver import BkDensity, bk_calibrate, bk_entropy, bk_price_call, bk_price_digital
from .bs import BsParams, bs_call, bs_digital, implied_vol, market_quotes
from .config import load_config
from .density import (cdf, forward_delta, inverse_cdf, pdf, price_call, price_digital, sample,
                      spot_delta)
from .errors import MedcalError
from .med_solver import MedDensity, calibrate, entropy
from .mred_solver import (LogNormalPrior, MedPrior, MredDensity, divergence, mred_calibrate,
                          mred_price_call, mred_price_digital)
from .quotes import MaturitySlice, RawQuote, build_slice, load_quote_file, validate_slice
from .surface import VolGrid, atm_surface, smile

__version__ = "0.1.0"
