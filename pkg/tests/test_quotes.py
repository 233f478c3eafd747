"""クォートとスライス検証のテスト"""

import numpy as np
import pytest

from medcal.errors import BoundaryStrike, MissingForward, QuoteFileError, ValidationError
from medcal.quotes import (MaturitySlice, RawQuote, build_slice, digital_from_call_spread,
                           digitals_from_call_spreads, load_quote_file, validate_slice,
                           write_quote_file)


# ===== RawQuote =====

def test_mid_of_bid_ask():
    q = RawQuote(100.0, 9.0, 11.0, 0.40, 0.50)
    assert q.call_mid == pytest.approx(10.0)
    assert q.digital_mid == pytest.approx(0.45)


def test_one_sided_quote_uses_that_side():
    q = RawQuote(100.0, call_ask=10.0)
    assert q.call_mid == 10.0
    assert q.digital_mid is None


def test_crossed_quote_rejected():
    with pytest.raises(ValidationError):
        RawQuote(100.0, 11.0, 9.0)
    with pytest.raises(ValidationError):
        RawQuote(100.0, 10.0, 10.0, 0.6, 0.5)


def test_quote_without_call_rejected():
    with pytest.raises(ValidationError):
        RawQuote(100.0, digital_bid=0.5, digital_ask=0.5)


# ===== build_slice =====

def test_cboe_row_is_carried_through(interleaved_file):
    quotes, meta = load_quote_file(interleaved_file)
    s = build_slice(quotes, meta["DF"], meta["T"], meta["F"], strikes=[950.0])
    assert list(s.strikes) == [0.0, 950.0]
    assert s.calls[1] == pytest.approx(246.30)
    assert s.digitals[1] == pytest.approx(0.94)
    assert s.forward == pytest.approx(1190.0)


def test_forward_only_slice():
    s = build_slice([], 1.0, 1.0, 100.0)
    assert s.n == 0
    assert list(s.strikes) == [0.0]
    assert s.calls[0] == 100.0
    assert s.digitals[0] == 1.0


def test_discount_factor_is_removed():
    quotes = [RawQuote(100.0, 5.0, 5.0, 0.25, 0.25)]
    s = build_slice(quotes, 0.5, 1.0, 100.0)
    assert s.calls[1] == pytest.approx(10.0)
    assert s.digitals[1] == pytest.approx(0.5)


def test_forward_from_zero_strike_quote():
    quotes = [RawQuote(0.0, 95.0, 95.0), RawQuote(100.0, 9.5, 9.5, 0.45, 0.45)]
    s = build_slice(quotes, 0.95, 1.0)
    assert s.forward == pytest.approx(100.0)


def test_missing_forward():
    with pytest.raises(MissingForward):
        build_slice([RawQuote(100.0, 10.0, 10.0, 0.45, 0.45)], 1.0, 1.0)


def test_missing_digital_without_spread_width(calls_only_file):
    quotes, meta = load_quote_file(calls_only_file)
    with pytest.raises(ValidationError):
        build_slice(quotes, meta["DF"], meta["T"], meta["F"], strikes=[700.0])


def test_spread_digitals_fill_missing(calls_only_file):
    quotes, meta = load_quote_file(calls_only_file)
    s = build_slice(quotes, meta["DF"], meta["T"], meta["F"],
                    strikes=[700.0, 1200.0, 1400.0], spread_width=50.0)
    assert s.digitals[1:] == pytest.approx([0.969, 0.529, 0.1067], abs=1e-12)


def test_unknown_strike_subset(market_quotes_flat):
    with pytest.raises(ValidationError):
        build_slice(market_quotes_flat, 1.0, 1.0, 100.0, strikes=[105.0])


def test_arbitrage_reported_with_violations():
    quotes = [RawQuote(50.0, 52.0, 52.0, 0.9, 0.9), RawQuote(100.0, 10.0, 10.0, 0.95, 0.95)]
    with pytest.raises(ValidationError) as info:
        build_slice(quotes, 1.0, 1.0, 100.0)
    assert any(v.rule == "digital_order" and v.index == 1 for v in info.value.violations)


def test_built_slice_passes_validation(slice_5):
    assert validate_slice(slice_5) == []


# ===== validate_slice =====

def _slice(strikes, calls, digitals, maturity=1.0, df=1.0):
    return MaturitySlice(maturity, df, strikes, calls, digitals)


def test_digital_above_one():
    s = _slice([0.0, 100.0], [100.0, 10.0], [1.0, 1.1])
    violations = validate_slice(s)
    assert [(v.index, v.rule) for v in violations] == [(0, "digital_order")]


def test_degenerate_bucket_mean():
    # bucket 1 has K̄ exactly at its lower strike
    s = _slice([0.0, 100.0, 200.0], [110.0, 25.0, 5.0], [1.0, 0.5, 0.2])
    assert s.bucket_mean(0) == pytest.approx(70.0)
    assert s.bucket_mean(1) == pytest.approx(100.0)
    violations = validate_slice(s)
    assert [(v.index, v.rule) for v in violations] == [(1, "mean_not_interior")]


@pytest.mark.parametrize("kwargs, rule", [
    ({"maturity": 0.0}, "maturity"),
    ({"df": 1.5}, "discount_factor"),
])
def test_slice_level_rules(kwargs, rule):
    s = _slice([0.0, 100.0], [100.0, 9.9476], [1.0, 0.4503], **kwargs)
    assert rule in {v.rule for v in validate_slice(s)}


def test_call_order_and_last_bucket():
    s = _slice([0.0, 100.0, 120.0], [100.0, 10.0, 0.0], [1.0, 0.45, 0.2])
    rules = {v.rule for v in validate_slice(s)}
    assert "last_bucket" in rules


def test_tolerance_relaxes_equalities():
    s = _slice([0.0, 100.0], [100.0, 10.0], [1.0, 1.0])
    assert validate_slice(s)
    s = _slice([0.0, 100.0], [100.0, 10.0], [1.0, 1.0 - 1e-13])
    assert validate_slice(s, tolerance=1e-14) != validate_slice(s, tolerance=1e-12)


def test_bucket_accessors(slice_1):
    assert slice_1.bucket_mass(1) == pytest.approx(slice_1.digitals[1])
    assert slice_1.bucket_moment(1) == pytest.approx(slice_1.calls[1] + 100.0 * slice_1.digitals[1])
    total = sum(slice_1.bucket_moment(i) for i in range(slice_1.n + 1))
    assert total == pytest.approx(slice_1.forward)


def test_restrict_keeps_zero_strike(slice_5):
    s = slice_5.restrict([100.0])
    assert list(s.strikes) == [0.0, 100.0]
    assert s.calls[1] == slice_5.calls[3]
    with pytest.raises(ValidationError):
        slice_5.restrict([90.0])


def test_slice_arrays_are_read_only(slice_1):
    with pytest.raises(ValueError):
        slice_1.calls[0] = 1.0


# ===== コールスプレッド =====

def test_spread_digitals_table_values():
    strikes = [650.0, 700.0, 750.0]
    calls = [533.45, 484.75, 436.55]
    assert digitals_from_call_spreads(strikes, calls) == pytest.approx([0.969])
    assert digital_from_call_spread([1350.0, 1450.0], [13.35, 2.68], 1400.0, 50.0) == \
        pytest.approx(0.1067)


def test_spread_digitals_of_linear_calls():
    strikes = np.array([0.0, 10.0, 25.0, 40.0])
    calls = 30.0 - 0.6 * strikes
    assert digitals_from_call_spreads(strikes, calls) == pytest.approx([0.6, 0.6])


def test_spread_digitals_need_neighbours():
    with pytest.raises(BoundaryStrike):
        digitals_from_call_spreads([0.0, 100.0], [100.0, 10.0])
    with pytest.raises(BoundaryStrike):
        digital_from_call_spread([500.0, 550.0], [681.15, 631.75], 500.0, 50.0)


# ===== ファイル =====

def test_load_meta_and_empty_digitals(calls_only_file):
    quotes, meta = load_quote_file(calls_only_file)
    assert meta == {"T": pytest.approx(0.726), "DF": 1.0, "F": pytest.approx(1172.3)}
    assert len(quotes) == 23
    assert all(q.digital_mid is None for q in quotes)


def test_write_then_load(tmp_path, market_quotes_flat):
    path = tmp_path / "market.csv"
    write_quote_file(path, market_quotes_flat, {"T": 1.0, "DF": 1.0, "F": 100.0})
    quotes, meta = load_quote_file(path)
    assert meta["F"] == 100.0
    assert [q.strike for q in quotes] == [q.strike for q in market_quotes_flat]
    assert quotes[5].call_mid == pytest.approx(market_quotes_flat[5].call_mid, rel=1e-9)


def test_write_to_string(market_quotes_flat):
    text = write_quote_file(None, market_quotes_flat[:2])
    assert text.splitlines()[0] == "strike,call_bid,call_ask,digital_bid,digital_ask"


@pytest.mark.parametrize("content", [
    "strike,call_bid,call_ask\n100,1,1\n",
    "strike,call_bid,call_ask,digital_bid,digital_ask\n100,abc,1,,\n",
    "#meta,T\nstrike,call_bid,call_ask,digital_bid,digital_ask\n100,1,1,,\n",
])
def test_bad_quote_files(tmp_path, content):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    with pytest.raises(QuoteFileError):
        load_quote_file(path)


def test_missing_quote_file(tmp_path):
    with pytest.raises(QuoteFileError):
        load_quote_file(tmp_path / "absent.csv")
