#!/usr/bin/env python3
"""
MEDCAL 較正レポート生成

フラット・ボラティリティ市場と CBOE スライスで各手法を較正し、
パラメータ・価格・ボラティリティ・エントロピーを Markdown にまとめる。

主要機能:
- フラット市場 (F=100, sigma=25%, T=1) の 1/3/5 ストライク MED
- コールのみ MED（2ストライク）の乗数
- 対数正規事前分布 (sigma=20%) の MRED
- CBOE スライスの MED / コールのみ MED 比較
- analysis_results/med_report_<timestamp>.md への出力
"""
import argparse
import datetime
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from medcal import (BsParams, LogNormalPrior, bk_calibrate, bk_price_call,  # noqa: E402
                    bk_price_digital, build_slice, calibrate, divergence, entropy,
                    load_config, load_quote_file, market_quotes, mred_calibrate, price_call,
                    price_digital, smile)

logger = logging.getLogger(__name__)

FLAT_MARKET = BsParams(forward=100.0, vol=0.25, maturity=1.0)
MARKET_STRIKES = [float(k) for k in range(0, 200, 20)]
STRIKE_SETS = {
    "1 strike": [100.0],
    "3 strikes": [60.0, 100.0, 140.0],
    "5 strikes": [60.0, 80.0, 100.0, 120.0, 140.0],
}
PRIOR_SIGMA = 0.20


def _markdown(frame: pd.DataFrame, digits: int) -> str:
    """DataFrame を Markdown 表に"""
    return frame.to_markdown(index=False, floatfmt=f".{digits}g", missingval="NaN")


class MedReport:
    """較正結果の収集と Markdown 出力"""

    def __init__(self, data_dir: Path = Path("data"), output_dir: Path = Path("analysis_results"),
                 config_file: Optional[str] = None):
        self.data_dir = Path(data_dir)
        self.output_dir = Path(output_dir)
        self.settings = load_config(config_file)
        self.digits = self.settings["output"]["significant_digits"]
        self.sections: List[str] = []

    # ===== フラット市場 =====

    def _flat_slice(self, strikes: Sequence[float]):
        quotes = market_quotes(FLAT_MARKET, MARKET_STRIKES)
        return build_slice(quotes, FLAT_MARKET.discount_factor, FLAT_MARKET.maturity,
                           FLAT_MARKET.forward, strikes=strikes)

    def flat_market_section(self):
        """1/3/5 ストライク MED のパラメータ・価格・スマイル"""
        lines = ["## Flat-volatility market (F=100, sigma=25%, T=1)", ""]
        prices: Dict[str, np.ndarray] = {"K": np.array(MARKET_STRIKES)}
        full = self._flat_slice(MARKET_STRIKES)
        prices["market_call"] = np.asarray(full.calls)
        prices["market_digital"] = np.asarray(full.digitals)

        for name, strikes in STRIKE_SETS.items():
            density = calibrate(self._flat_slice(strikes))
            params = pd.DataFrame({"strike": density.strikes, "alpha": density.alphas,
                                   "beta": density.betas})
            lines += [f"### MED, {name}", "", f"Entropy: {entropy(density):.6f}", "",
                      _markdown(params, self.digits), ""]
            prices[f"{name}_call"] = np.asarray(price_call(density, MARKET_STRIKES))
            prices[f"{name}_digital"] = np.asarray(price_digital(density, MARKET_STRIKES))
            positive = [k for k in MARKET_STRIKES if k > 0]
            prices[f"{name}_vol"] = np.concatenate(([np.nan], smile(density, positive,
                                                                    **self.settings["bs"])))
        lines += ["### Prices and implied volatilities", "",
                  _markdown(pd.DataFrame(prices), self.digits), ""]
        self.sections.append("\n".join(lines))

    def calls_only_section(self):
        """2ストライクのコールのみ MED"""
        full = self._flat_slice([100.0])
        bk = bk_calibrate(full.strikes, full.calls, max_iter=self.settings["bk"]["max_iter"],
                          tol=self.settings["bk"]["tol"])
        frame = pd.DataFrame({"strike": bk.strikes, "lambda": bk.lambdas})
        lines = ["## Calls-only MED (strikes 0, 100)", "", f"mu: {bk.mu:.6f}", "",
                 _markdown(frame, self.digits), ""]
        self.sections.append("\n".join(lines))

    def relative_entropy_section(self):
        """対数正規事前分布 (sigma=20%) の MRED"""
        lines = [f"## Relative entropy against a log-normal prior (sigma={PRIOR_SIGMA:.0%})", ""]
        mred_settings = self.settings["mred"]
        for name, strikes in STRIKE_SETS.items():
            slice_ = self._flat_slice(strikes)
            prior = LogNormalPrior(slice_.forward, PRIOR_SIGMA, slice_.maturity)
            mred = mred_calibrate(slice_, prior, **mred_settings)
            frame = pd.DataFrame({"strike": slice_.strikes, "gamma": mred.gammas,
                                  "delta": mred.deltas})
            lines += [f"### {name}", "", f"Divergence: {divergence(mred):.6g}", "",
                      _markdown(frame, self.digits), ""]
        self.sections.append("\n".join(lines))

    # ===== CBOE =====

    def cboe_section(self):
        """CBOE スライス: MED（コール+デジタル）とコールのみ MED"""
        lines = ["## CBOE SPX slices", ""]
        interleaved = self.data_dir / "cboe_spx_20100918.csv"
        if interleaved.exists():
            quotes, meta = load_quote_file(interleaved)
            strikes = [float(k) for k in range(950, 1401, 50)]
            slice_ = build_slice(quotes, meta.get("DF", 1.0), meta["T"], meta.get("F"),
                                 strikes=strikes)
            density = calibrate(slice_)
            bk = bk_calibrate(slice_.strikes, slice_.calls,
                              max_iter=self.settings["bk"]["max_iter"],
                              tol=self.settings["bk"]["tol"])
            all_strikes = sorted(q.strike for q in quotes)
            by_strike = {q.strike: q for q in quotes}
            frame = pd.DataFrame({
                "K": all_strikes,
                "market_digital": [by_strike[k].digital_mid for k in all_strikes],
                "med_digital": price_digital(density, all_strikes),
                "calls_only_digital": bk_price_digital(bk, all_strikes),
            })
            lines += [f"### {interleaved.name} (calibrated at 950..1400 step 50)", "",
                      _markdown(frame, self.digits), ""]
        else:
            logger.warning(f"{interleaved} not found, skipping")

        calls_only = self.data_dir / "cboe_spx_20101231.csv"
        if calls_only.exists():
            quotes, meta = load_quote_file(calls_only)
            slice_ = build_slice(quotes, meta.get("DF", 1.0), meta["T"], meta.get("F"),
                                 strikes=[700.0, 1200.0, 1400.0], spread_width=50.0)
            density = calibrate(slice_)
            bk = bk_calibrate(slice_.strikes, slice_.calls, slice_.digitals,
                              max_iter=self.settings["bk"]["max_iter"],
                              tol=self.settings["bk"]["tol"])
            grid = [float(k) for k in range(500, 1601, 100)]
            frame = pd.DataFrame({"K": grid, "med_call": price_call(density, grid),
                                  "calls_only_call": bk_price_call(bk, grid)})
            lines += [f"### {calls_only.name} (3 strikes, spread digitals +/-50)", "",
                      _markdown(frame, self.digits), ""]
        else:
            logger.warning(f"{calls_only} not found, skipping")
        self.sections.append("\n".join(lines))

    # ===== 出力 =====

    def generate(self) -> Path:
        """全セクションを計算して Markdown を書き出す"""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        timestamp = datetime.datetime.now().strftime('%Y%m%d_%H%M%S')
        report_file = self.output_dir / f"med_report_{timestamp}.md"

        print("📊 Flat-volatility market...")
        self.flat_market_section()
        print("📈 Calls-only MED...")
        self.calls_only_section()
        print("🔁 Relative entropy...")
        self.relative_entropy_section()
        print("💹 CBOE slices...")
        self.cboe_section()

        title = [
            "# MEDCAL Calibration Report",
            "",
            f"Generated: {datetime.datetime.now().strftime('%Y-%m-%d %H:%M:%S')}",
            "",
        ]
        report_file.write_text("\n".join(title) + "\n".join(self.sections), encoding='utf-8')
        print(f"✅ Report written to {report_file}")
        return report_file


def main():
    parser = argparse.ArgumentParser(description='MEDCAL calibration report')
    parser.add_argument('--data-dir', default='data', help='Directory with CBOE quote files')
    parser.add_argument('--output-dir', default='analysis_results', help='Report directory')
    parser.add_argument('--config', help='User YAML overriding medcal/config.yaml')
    parser.add_argument('--log-level', default='WARNING',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    args = parser.parse_args()

    logging.basicConfig(level=getattr(logging, args.log_level),
                        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    MedReport(Path(args.data_dir), Path(args.output_dir), args.config).generate()


if __name__ == "__main__":
    main()
