#!/usr/bin/env python3
"""
MEDCAL コマンドライン

クォート CSV を読み込み、MED / MRED / コールのみ MED を較正して、価格・
スマイル・サーフェス・サンプル・比較表を CSV で出力する。

主要機能:
- genmarket: フラット・ボラティリティのテスト市場
- calibrate: パラメータ表（α/β, γ/δ, λ/μ）とエントロピー・残差
- price / smile / sample: 較正済み密度の評価
- surface: ATM のみのサーフェス（縦持ち CSV と gnuplot 行列）
- compare: 市場と各手法の横並び比較

終了コード: 0 正常、1 実行時エラー、2 検証・裁定・使い方エラー
"""

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .bk_solver import BkDensity, bk_calibrate, bk_entropy, bk_price_call, bk_price_digital
from .bs import BsParams, implied_vol, market_quotes
from .config import load_config
from .density import price_call, price_digital, sample, spot_delta
from .errors import (ArbitrageError, MedcalError, MissingForward, OutOfRange,
                     ValidationError)
from .med_solver import MedDensity, calibrate, entropy
from .mred_solver import (LogNormalPrior, MedPrior, divergence, mred_calibrate,
                          mred_price_call, mred_price_digital)
from .quotes import (RawQuote, build_slice, digital_from_call_spread, load_quote_file,
                     write_quote_file)
from .surface import atm_surface

logger = logging.getLogger(__name__)

METHODS = ("med", "mred", "bk")
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


# ===== 引数の解釈 =====

def parse_strikes(text: Optional[str]) -> Optional[List[float]]:
    """`a,b,c` と `start:stop:step`（終端を含む）の組み合わせ"""
    if text is None or text == "":
        return None
    strikes: List[float] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            try:
                start, stop, step = (float(v) for v in part.split(":"))
            except ValueError as e:
                raise ValueError(f"bad strike range '{part}' (use start:stop:step)") from e
            if step <= 0 or stop < start:
                raise ValueError(f"bad strike range '{part}'")
            count = int(round((stop - start) / step)) + 1
            strikes.extend(start + step * np.arange(count))
        else:
            strikes.append(float(part))
    return sorted(set(float(k) for k in strikes))


@dataclass(frozen=True)
class MethodSpec:
    """`name` または `name@strikes`"""
    name: str
    strikes: Optional[Tuple[float, ...]] = None

    @classmethod
    def parse(cls, token: str) -> "MethodSpec":
        name, _, strikes = token.partition("@")
        name = name.strip().lower()
        if name not in METHODS:
            raise ValueError(f"unknown method '{name}' (choose from {', '.join(METHODS)})")
        parsed = parse_strikes(strikes) if strikes else None
        return cls(name, tuple(parsed) if parsed else None)

    @property
    def label(self) -> str:
        if self.strikes is None:
            return self.name
        return f"{self.name}_k{len([k for k in self.strikes if k > 0])}"


@dataclass
class RunConfig:
    """1回の実行に必要な設定（CLI 引数 + YAML + 環境変数）"""
    command: str
    settings: Dict[str, Any]
    input: Optional[Path] = None
    out: Optional[Path] = None
    maturity: Optional[float] = None
    discount_factor: Optional[float] = None
    forward: Optional[float] = None
    method: str = "med"
    methods: List[MethodSpec] = field(default_factory=list)
    prior: Optional[str] = None
    strikes: Optional[List[float]] = None
    at: Optional[List[float]] = None
    spread_width: Optional[float] = None
    tolerance: float = 1e-12
    seed: int = 0
    count: int = 0

    @classmethod
    def from_args(cls, args: argparse.Namespace, settings: Dict[str, Any]) -> "RunConfig":
        tolerance = getattr(args, "tolerance", None)
        seed = getattr(args, "seed", None)
        methods = [MethodSpec.parse(t) for t in (getattr(args, "methods", None) or [])]
        return cls(
            command=args.command,
            settings=settings,
            input=Path(args.input) if getattr(args, "input", None) else None,
            out=Path(args.out) if getattr(args, "out", None) else None,
            maturity=getattr(args, "maturity", None),
            discount_factor=getattr(args, "df", None),
            forward=getattr(args, "forward", None),
            method=getattr(args, "method", None) or "med",
            methods=methods,
            prior=getattr(args, "prior", None),
            strikes=parse_strikes(getattr(args, "strikes", None)),
            at=parse_strikes(getattr(args, "at", None)),
            spread_width=getattr(args, "spread_digitals", None),
            tolerance=settings["validation"]["tolerance"] if tolerance is None else tolerance,
            seed=settings["sample"]["seed"] if seed is None else seed,
            count=getattr(args, "count", None) or 0,
        )

    def check(self) -> Optional[str]:
        """矛盾があればメッセージを返す"""
        if self.command in ("calibrate", "price", "smile"):
            uses_mred = self.method == "mred"
        else:
            uses_mred = any(m.name == "mred" for m in self.methods)
        if uses_mred and not self.prior:
            return "the mred method needs --prior"
        if self.prior and not uses_mred:
            return "--prior only applies to the mred method"
        return None


# ===== 較正 =====

@dataclass
class Market:
    """クォートファイルとメタデータ"""
    quotes: List[RawQuote]
    maturity: float
    discount_factor: float
    forward: Optional[float]


def load_market(path: Path, cfg: RunConfig) -> Market:
    quotes, meta = load_quote_file(path)
    maturity = cfg.maturity if cfg.maturity is not None else meta.get("T")
    if maturity is None:
        raise ValidationError(f"{path}: no maturity (give --maturity or a #meta T=)")
    df = cfg.discount_factor if cfg.discount_factor is not None else meta.get("DF", 1.0)
    forward = cfg.forward if cfg.forward is not None else meta.get("F")
    return Market(quotes, float(maturity), float(df), forward)


def _market_slice(market: Market, cfg: RunConfig, strikes: Optional[Sequence[float]]):
    return build_slice(market.quotes, market.discount_factor, market.maturity, market.forward,
                       strikes=strikes, spread_width=cfg.spread_width,
                       tolerance=cfg.tolerance)


def _resolve_forward(market: Market) -> float:
    if market.forward is not None:
        return float(market.forward)
    zero = [q for q in market.quotes if q.strike == 0]
    if not zero:
        raise MissingForward("no forward given and no quote at strike 0")
    return zero[0].call_mid / market.discount_factor


def _bk_inputs(market: Market, cfg: RunConfig, strikes: Optional[Sequence[float]]):
    """(strikes, calls, warm-start digitals or None)、割引なし"""
    df = market.discount_factor
    forward = _resolve_forward(market)
    positive = [q for q in sorted(market.quotes, key=lambda q: q.strike) if q.strike > 0]
    if strikes is not None:
        wanted = {float(k) for k in strikes if k > 0}
        positive = [q for q in positive if float(q.strike) in wanted]
        missing = wanted - {float(q.strike) for q in positive}
        if missing:
            raise ValidationError(f"requested strikes without quotes: {sorted(missing)}")
    all_strikes = [q.strike for q in market.quotes]
    all_calls = [q.call_mid / df for q in market.quotes]

    digitals: Optional[List[float]] = [1.0]
    for q in positive:
        if q.digital_mid is not None:
            digitals.append(q.digital_mid / df)
        elif cfg.spread_width is not None:
            try:
                digitals.append(digital_from_call_spread(all_strikes, all_calls, q.strike,
                                                         cfg.spread_width))
            except MedcalError:
                digitals = None
                break
        else:
            digitals = None
            break
    k = [0.0] + [float(q.strike) for q in positive]
    c = [forward] + [q.call_mid / df for q in positive]
    return k, c, digitals


def calibrate_method(market: Market, cfg: RunConfig, spec: MethodSpec):
    """手法トークンに従って密度を較正"""
    s = cfg.settings
    strikes = list(spec.strikes) if spec.strikes is not None else cfg.strikes
    if spec.name == "bk":
        k, c, digitals = _bk_inputs(market, cfg, strikes)
        return bk_calibrate(k, c, digitals, max_iter=s["bk"]["max_iter"], tol=s["bk"]["tol"])

    slice_ = _market_slice(market, cfg, strikes)
    if spec.name == "med":
        return calibrate(slice_, newton_tol=s["med"]["newton_tol"],
                         max_iter=s["med"]["max_iter"],
                         bisection_tol=s["med"]["bisection_tol"],
                         series_threshold=s["med"]["series_threshold"])
    return mred_calibrate(slice_, parse_prior(cfg.prior, slice_, cfg),
                          quad_rel_tol=s["mred"]["quad_rel_tol"],
                          quad_limit=s["mred"]["quad_limit"],
                          residual_tol=s["mred"]["residual_tol"],
                          max_iter=s["mred"]["max_iter"],
                          truncation_sigmas=s["mred"]["truncation_sigmas"])


def parse_prior(text: Optional[str], slice_, cfg: RunConfig):
    """`lognormal:sigma=0.20` または `med:<quote file>`"""
    if not text:
        raise ValidationError("no prior given")
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    if kind == "lognormal":
        options = dict(item.split("=", 1) for item in rest.split(",") if "=" in item)
        if "sigma" not in options:
            raise ValidationError("log-normal prior needs sigma=<vol>")
        return LogNormalPrior(slice_.forward, float(options["sigma"]), slice_.maturity)
    if kind == "med":
        prior_market = load_market(Path(rest), cfg)
        prior_slice = build_slice(prior_market.quotes, prior_market.discount_factor,
                                  prior_market.maturity, prior_market.forward,
                                  spread_width=cfg.spread_width, tolerance=cfg.tolerance)
        return MedPrior(calibrate(prior_slice))
    raise ValidationError(f"unknown prior '{text}' (lognormal:sigma=.. or med:<file>)")


def density_prices(density, strikes: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """割引なし (コール, デジタル)"""
    k = np.asarray(strikes, dtype=float)
    if isinstance(density, MedDensity):
        return np.asarray(price_call(density, k)), np.asarray(price_digital(density, k))
    if isinstance(density, BkDensity):
        return np.asarray(bk_price_call(density, k)), np.asarray(bk_price_digital(density, k))
    return np.asarray(mred_price_call(density, k)), np.asarray(mred_price_digital(density, k))


def _implied_vols(calls: np.ndarray, forward: float, strikes: Sequence[float],
                  maturity: float, settings: Dict[str, Any]) -> np.ndarray:
    vols = np.full(len(strikes), np.nan)
    for j, (k, c) in enumerate(zip(strikes, calls)):
        if k <= 0 or np.isnan(c):
            continue
        try:
            vols[j] = implied_vol(float(c), forward, float(k), maturity, **settings["bs"])
        except OutOfRange as e:
            logger.warning(f"implied vol failed at K={k:g}: {e}")
    return vols


def _max_residual(density, strikes: Sequence[float], calls: Sequence[float],
                  digitals: Optional[Sequence[float]]) -> float:
    fitted_calls, fitted_digitals = density_prices(density, strikes)
    residual = np.max(np.abs(fitted_calls - np.asarray(calls)) / np.asarray(calls)[0])
    if digitals is not None:
        residual = max(residual, np.max(np.abs(fitted_digitals - np.asarray(digitals))))
    return float(residual)


# ===== 出力 =====

def emit(frame: pd.DataFrame, cfg: RunConfig, header: Optional[Dict[str, float]] = None):
    """CSV を --out か標準出力へ（有効数字は output.significant_digits）"""
    digits = cfg.settings["output"]["significant_digits"]
    text = ""
    if header:
        text = "#summary," + ",".join(f"{k}={v:.{digits}g}" for k, v in header.items()) + "\n"
    text += frame.to_csv(index=False, float_format=f"%.{digits}g")
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        cfg.out.write_text(text, encoding='utf-8')
        logger.info(f"Wrote {cfg.out}")


# ===== サブコマンド =====

def cmd_genmarket(cfg: RunConfig, args: argparse.Namespace) -> int:
    params = BsParams(args.forward, args.vol, args.maturity, args.df)
    strikes = cfg.strikes if cfg.strikes is not None else [0.0]
    quotes = market_quotes(params, strikes)
    meta = {"T": params.maturity, "DF": params.discount_factor, "F": params.forward}
    if cfg.out is None:
        sys.stdout.write(write_quote_file(None, quotes, meta))
    else:
        write_quote_file(cfg.out, quotes, meta)
        logger.info(f"Wrote {cfg.out}")
    return 0


def cmd_calibrate(cfg: RunConfig, args: argparse.Namespace) -> int:
    market = load_market(cfg.input, cfg)
    spec = MethodSpec(cfg.method)
    density = calibrate_method(market, cfg, spec)

    if isinstance(density, BkDensity):
        frame = pd.DataFrame({"strike": density.strikes, "lambda": density.lambdas})
        k, c, _ = _bk_inputs(market, cfg, cfg.strikes)
        header = {"mu": density.mu, "entropy": bk_entropy(density),
                  "max_residual": _max_residual(density, k, c, None)}
    else:
        slice_ = density.slice
        residual = _max_residual(density, slice_.strikes, slice_.calls, slice_.digitals)
        if isinstance(density, MedDensity):
            frame = pd.DataFrame({
                "strike": slice_.strikes,
                "alpha": density.alphas,
                "beta": density.betas,
                "mass": [b.mass for b in density.buckets],
                "moment": [b.moment for b in density.buckets],
            })
            header = {"entropy": entropy(density), "max_residual": residual}
        else:
            frame = pd.DataFrame({"strike": slice_.strikes, "gamma": density.gammas,
                                  "delta": density.deltas})
            header = {"divergence": divergence(density), "max_residual": residual}
    emit(frame, cfg, header)
    return 0


def _evaluation_strikes(cfg: RunConfig, market: Market) -> List[float]:
    if cfg.at is not None:
        return cfg.at
    return sorted({float(q.strike) for q in market.quotes if q.strike > 0})


def cmd_price(cfg: RunConfig, args: argparse.Namespace) -> int:
    market = load_market(cfg.input, cfg)
    density = calibrate_method(market, cfg, MethodSpec(cfg.method))
    strikes = _evaluation_strikes(cfg, market)
    calls, digitals = density_prices(density, strikes)
    df = market.discount_factor
    forward = density.forward
    spot = args.spot if args.spot is not None else forward * df
    if isinstance(density, MedDensity):
        delta = np.asarray(spot_delta(density, strikes, spot, df))
    else:
        delta = df / spot * (calls + np.asarray(strikes) * digitals)
    frame = pd.DataFrame({"strike": strikes, "call": df * calls, "digital": df * digitals,
                          "delta": delta})
    emit(frame, cfg)
    return 0


def cmd_smile(cfg: RunConfig, args: argparse.Namespace) -> int:
    market = load_market(cfg.input, cfg)
    density = calibrate_method(market, cfg, MethodSpec(cfg.method))
    strikes = _evaluation_strikes(cfg, market)
    calls, _ = density_prices(density, strikes)
    vols = _implied_vols(calls, density.forward, strikes, market.maturity, cfg.settings)
    emit(pd.DataFrame({"K": strikes, "vol": vols}), cfg)
    return 0


def cmd_surface(cfg: RunConfig, args: argparse.Namespace) -> int:
    s = cfg.settings
    maturities = parse_strikes(args.maturities) or []
    sigmas = [float(v) for v in args.sigma_atm.split(",") if v.strip()]
    if len(sigmas) not in (1, len(maturities)):
        raise ValidationError("--sigma-atm needs one value or one per maturity")
    grid = atm_surface(args.forward, sigmas, maturities, cfg.at,
                       moneyness_lower=s["surface"]["moneyness_lower"],
                       moneyness_upper=s["surface"]["moneyness_upper"],
                       points=s["surface"]["points"], **s["bs"])
    emit(grid.to_frame(), cfg)
    if args.matrix:
        Path(args.matrix).write_text(grid.to_matrix_text(s["output"]["significant_digits"]),
                                     encoding='utf-8')
        logger.info(f"Wrote {args.matrix}")
    return 0


def cmd_sample(cfg: RunConfig, args: argparse.Namespace) -> int:
    market = load_market(cfg.input, cfg)
    density = calibrate_method(market, cfg, MethodSpec("med"))
    draws = sample(density, cfg.count, seed=cfg.seed)
    digits = cfg.settings["output"]["significant_digits"]
    text = "".join(f"{x:.{digits}g}\n" for x in draws)
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        cfg.out.write_text(text, encoding='utf-8')
        logger.info(f"Wrote {len(draws)} draws to {cfg.out}")
    return 0


def cmd_compare(cfg: RunConfig, args: argparse.Namespace) -> int:
    market = load_market(cfg.input, cfg)
    strikes = _evaluation_strikes(cfg, market)
    df = market.discount_factor
    forward = _resolve_forward(market)
    by_strike = {float(q.strike): q for q in market.quotes}
    all_strikes = [q.strike for q in market.quotes]
    all_calls = [q.call_mid / df for q in market.quotes]

    market_calls = np.array([by_strike[k].call_mid / df if k in by_strike else np.nan
                             for k in strikes])
    market_digitals = np.full(len(strikes), np.nan)
    for j, k in enumerate(strikes):
        quote = by_strike.get(k)
        if quote is not None and quote.digital_mid is not None:
            market_digitals[j] = quote.digital_mid / df
        elif cfg.spread_width is not None:
            try:
                market_digitals[j] = digital_from_call_spread(all_strikes, all_calls, k,
                                                              cfg.spread_width)
            except MedcalError:
                pass

    columns: Dict[str, Any] = {
        "strike": strikes,
        "market_call": df * market_calls,
        "market_digital": df * market_digitals,
        "market_vol": _implied_vols(market_calls, forward, strikes, market.maturity,
                                    cfg.settings),
    }
    specs = cfg.methods or [MethodSpec("med")]
    seen: Dict[str, int] = {}
    for spec in specs:
        label = spec.label
        seen[label] = seen.get(label, 0) + 1
        if seen[label] > 1:
            label = f"{label}_{seen[label]}"
        density = calibrate_method(market, cfg, spec)
        calls, digitals = density_prices(density, strikes)
        columns[f"{label}_call"] = df * calls
        columns[f"{label}_digital"] = df * digitals
        columns[f"{label}_vol"] = _implied_vols(calls, density.forward, strikes,
                                                market.maturity, cfg.settings)
    emit(pd.DataFrame(columns), cfg)
    return 0


COMMANDS = {
    "genmarket": cmd_genmarket,
    "calibrate": cmd_calibrate,
    "price": cmd_price,
    "smile": cmd_smile,
    "surface": cmd_surface,
    "sample": cmd_sample,
    "compare": cmd_compare,
}


# ===== パーサー =====

def _common(parser: argparse.ArgumentParser):
    parser.add_argument('--config', help='User YAML overriding medcal/config.yaml')
    parser.add_argument('--log-level', default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='Log level (stderr)')
    parser.add_argument('--out', help='Output file (default: stdout)')


def _quote_input(parser: argparse.ArgumentParser, method: bool = True):
    parser.add_argument('input', help='Quote CSV (strike,call_bid,call_ask,digital_bid,digital_ask)')
    parser.add_argument('--maturity', type=float, help='Maturity in years (default: #meta T)')
    parser.add_argument('--df', type=float, help='Discount factor (default: #meta DF or 1)')
    parser.add_argument('--forward', type=float,
                        help='Forward (default: #meta F or the strike-0 quote)')
    parser.add_argument('--strikes', help='Strike subset, e.g. 950:1400:50 or 700,1200,1400')
    parser.add_argument('--spread-digitals', type=float, metavar='WIDTH',
                        help='Estimate missing digitals from calls at K +/- WIDTH')
    parser.add_argument('--tolerance', type=float,
                        help='Slack on the no-arbitrage inequalities (default: config)')
    if method:
        parser.add_argument('--method', choices=METHODS, default='med', help='Density type')
        parser.add_argument('--prior', help='lognormal:sigma=0.20 or med:<quote file>')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='medcal',
        description='Maximum entropy densities from call and digital quotes',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s genmarket --forward 100 --vol 0.25 --maturity 1 --strikes 0:180:20
  %(prog)s calibrate data/cboe_spx_20100918.csv --strikes 950:1400:50
  %(prog)s calibrate market.csv --method mred --prior lognormal:sigma=0.20 --strikes 100
  %(prog)s compare data/cboe_spx_20101231.csv --spread-digitals 50 \\
      --methods med@700,1200,1400 bk@700,1200,1400
  %(prog)s surface --forward 100 --sigma-atm 0.25 --maturities 0.1,0.5,1,2,5
        """
    )
    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    gen = subparsers.add_parser('genmarket', help='Flat-volatility test market as a quote file')
    _common(gen)
    gen.add_argument('--forward', type=float, default=100.0, help='Forward (default: 100)')
    gen.add_argument('--vol', type=float, default=0.25, help='Volatility (default: 0.25)')
    gen.add_argument('--maturity', type=float, default=1.0, help='Maturity (default: 1)')
    gen.add_argument('--df', type=float, default=1.0, help='Discount factor (default: 1)')
    gen.add_argument('--strikes', default='0:180:20', help='Strikes (default: 0:180:20)')

    cal = subparsers.add_parser('calibrate', help='Calibrate and report parameters')
    _common(cal)
    _quote_input(cal)

    price = subparsers.add_parser('price', help='Calls, digitals and deltas')
    _common(price)
    _quote_input(price)
    price.add_argument('--at', help='Strikes to price (default: file strikes)')
    price.add_argument('--spot', type=float, help='Spot for the delta (default: F * DF)')

    sm = subparsers.add_parser('smile', help='Implied volatility smile')
    _common(sm)
    _quote_input(sm)
    sm.add_argument('--at', help='Strikes (default: file strikes)')

    surf = subparsers.add_parser('surface', help='Surface from an ATM-only calibration')
    _common(surf)
    surf.add_argument('--forward', type=float, default=100.0, help='Forward (default: 100)')
    surf.add_argument('--sigma-atm', default='0.25',
                      help='ATM vol, one value or one per maturity (default: 0.25)')
    surf.add_argument('--maturities', default='0.1,0.5,1,2,5', help='Maturities')
    surf.add_argument('--at', help='Strike grid (default: log-spaced moneyness grid)')
    surf.add_argument('--matrix', help='Also write a gnuplot nonuniform matrix file')

    smp = subparsers.add_parser('sample', help='Inverse-CDF draws, one per line')
    _common(smp)
    _quote_input(smp, method=False)
    smp.add_argument('--count', type=int, default=1000, help='Number of draws (default: 1000)')
    smp.add_argument('--seed', type=int, help='Generator seed (default: config)')

    cmp_ = subparsers.add_parser('compare', help='Market vs calibrated methods side by side')
    _common(cmp_)
    _quote_input(cmp_, method=False)
    cmp_.add_argument('--methods', nargs='+', default=['med'],
                      help='Method tokens: med, bk, mred, optionally name@strikes')
    cmp_.add_argument('--prior', help='Prior for mred tokens')
    cmp_.add_argument('--at', help='Strikes to compare (default: file strikes)')
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 2

    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT,
                        stream=sys.stderr)
    try:
        settings = load_config(args.config)
        cfg = RunConfig.from_args(args, settings)
    except ValueError as e:
        parser.error(str(e))
    except MedcalError as e:
        logger.error(str(e))
        return 1
    problem = cfg.check()
    if problem:
        parser.error(problem)

    try:
        return COMMANDS[args.command](cfg, args)
    except (ValidationError, ArbitrageError) as e:
        logger.error(str(e))
        return 2
    except (MedcalError, OSError, ValueError) as e:
        logger.error(str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
