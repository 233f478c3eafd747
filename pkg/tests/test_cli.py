"""コマンドラインのテスト"""

import numpy as np
import pandas as pd
import pytest

from medcal.bs import BsParams, bs_call, bs_digital
from medcal.cli import MethodSpec, main, parse_strikes

FLAT = BsParams(100.0, 0.25, 1.0)
NINE_STRIKES = [650, 700, 750, 1150, 1200, 1250, 1350, 1400, 1450]


def summary(path):
    """先頭の #summary 行を辞書に"""
    first = path.read_text(encoding='utf-8').splitlines()[0]
    assert first.startswith("#summary,")
    return {k: float(v) for k, v in (item.split("=") for item in first.split(",")[1:])}


@pytest.fixture
def flat_file(tmp_path):
    path = tmp_path / "flat.csv"
    assert main(["genmarket", "--out", str(path)]) == 0
    return path


# ===== 引数 =====

def test_parse_strikes():
    assert parse_strikes("950:1000:25,1100") == [950.0, 975.0, 1000.0, 1100.0]
    assert parse_strikes("140,60,100,60") == [60.0, 100.0, 140.0]
    assert parse_strikes(None) is None
    for bad in ("1:0:1", "0:10:0", "1:2"):
        with pytest.raises(ValueError):
            parse_strikes(bad)


def test_method_spec():
    spec = MethodSpec.parse("BK@700,1200,1400")
    assert spec.name == "bk"
    assert spec.strikes == (700.0, 1200.0, 1400.0)
    assert spec.label == "bk_k3"
    assert MethodSpec.parse("med").label == "med"
    with pytest.raises(ValueError):
        MethodSpec.parse("spline")


# ===== genmarket / price / smile =====

def test_genmarket_to_stdout(capsys):
    assert main(["genmarket", "--strikes", "0,100"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("#meta,")
    assert lines[1] == "strike,call_bid,call_ask,digital_bid,digital_ask"
    assert len(lines) == 4


def test_price_round_trip(flat_file, tmp_path, monkeypatch):
    monkeypatch.setenv("MEDCAL_OUTPUT_SIGNIFICANT_DIGITS", "15")
    out = tmp_path / "prices.csv"
    code = main(["price", str(flat_file), "--strikes", "60:140:20", "--at", "60:140:20",
                 "--out", str(out)])
    assert code == 0
    frame = pd.read_csv(out, comment='#')
    assert list(frame.columns) == ["strike", "call", "digital", "delta"]
    for row in frame.itertuples(index=False):
        assert row.call == pytest.approx(bs_call(FLAT, row.strike), abs=1e-7)
        assert row.digital == pytest.approx(bs_digital(FLAT, row.strike), abs=1e-9)


def test_price_out_of_sample(interleaved_file, tmp_path):
    out = tmp_path / "prices.csv"
    code = main(["price", str(interleaved_file), "--strikes", "950:1400:50", "--at", "975",
                 "--out", str(out)])
    assert code == 0
    frame = pd.read_csv(out, comment='#')
    assert frame["digital"][0] == pytest.approx(0.9153, abs=5e-5)
    assert frame["call"][0] == pytest.approx(223.12, abs=5e-3)


def test_smile_wing(flat_file, tmp_path):
    out = tmp_path / "smile.csv"
    assert main(["smile", str(flat_file), "--strikes", "60,100,140", "--at", "40,100",
                 "--out", str(out)]) == 0
    frame = pd.read_csv(out, comment='#')
    assert frame["vol"].tolist() == pytest.approx([0.2860, 0.25], abs=5e-4)


# ===== calibrate =====

def test_calibrate_cboe(interleaved_file, tmp_path):
    out = tmp_path / "params.csv"
    assert main(["calibrate", str(interleaved_file), "--strikes", "950:1400:50",
                 "--out", str(out)]) == 0
    frame = pd.read_csv(out, comment='#')
    assert list(frame.columns) == ["strike", "alpha", "beta", "mass", "moment"]
    assert len(frame) == 11
    assert frame["beta"].iloc[-1] < 0
    assert frame["mass"].sum() == pytest.approx(1.0, rel=1e-5)
    assert summary(out)["max_residual"] < 1e-6


def test_calibrate_calls_only(flat_file, tmp_path):
    out = tmp_path / "bk.csv"
    assert main(["calibrate", str(flat_file), "--method", "bk", "--strikes", "100",
                 "--out", str(out)]) == 0
    frame = pd.read_csv(out, comment='#')
    assert list(frame.columns) == ["strike", "lambda"]
    assert summary(out)["mu"] == pytest.approx(5290.6, abs=1.0)


def test_calibrate_relative_entropy(flat_file, tmp_path):
    out = tmp_path / "mred.csv"
    assert main(["calibrate", str(flat_file), "--method", "mred", "--prior",
                 "lognormal:sigma=0.2", "--strikes", "100", "--out", str(out)]) == 0
    frame = pd.read_csv(out, comment='#')
    assert frame["gamma"].tolist() == pytest.approx([12.963, 0.1110], rel=2e-3)
    assert summary(out)["divergence"] > 0


def test_mred_needs_prior(flat_file):
    with pytest.raises(SystemExit) as info:
        main(["calibrate", str(flat_file), "--method", "mred"])
    assert info.value.code == 2


def test_arbitrage_exit_code(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("#meta,T=1,DF=1\n"
                    "strike,call_bid,call_ask,digital_bid,digital_ask\n"
                    "0,110,110,1,1\n100,25,25,0.5,0.5\n200,5,5,0.2,0.2\n", encoding='utf-8')
    assert main(["calibrate", str(path)]) == 2


def test_missing_file_exit_code(tmp_path):
    assert main(["calibrate", str(tmp_path / "absent.csv")]) == 1


# ===== compare / sample / surface =====

def test_compare_calls_only_file(calls_only_file, tmp_path):
    out = tmp_path / "compare.csv"
    code = main(["compare", str(calls_only_file), "--spread-digitals", "50",
                 "--methods", "med@700,1200,1400", "bk@700,1200,1400",
                 "bk@" + ",".join(str(k) for k in NINE_STRIKES), "--out", str(out)])
    assert code == 0
    frame = pd.read_csv(out, comment='#').set_index("strike")
    assert {"market_call", "med_k3_call", "med_k3_vol", "bk_k3_call", "bk_k9_call"} <= set(
        frame.columns)
    expected = {1000.0: 208.54, 1300.0: 25.83, 1450.0: 2.74, 1500.0: 1.18}
    for strike, call in expected.items():
        assert frame.loc[strike, "med_k3_call"] == pytest.approx(call, abs=0.02)
    for strike in (700.0, 1200.0, 1400.0):
        assert frame.loc[strike, "med_k3_call"] == pytest.approx(
            frame.loc[strike, "market_call"], rel=1e-5)
    assert frame.loc[1000.0, "bk_k3_call"] == pytest.approx(210.23, abs=0.02)
    for strike in NINE_STRIKES:
        assert frame.loc[strike, "bk_k9_call"] == pytest.approx(
            frame.loc[strike, "market_call"], rel=1e-5)
    assert np.all(np.diff(frame["bk_k9_call"].to_numpy()) < 0)


def test_sample_is_deterministic(interleaved_file, tmp_path):
    paths = [tmp_path / "a.txt", tmp_path / "b.txt"]
    for path in paths:
        assert main(["sample", str(interleaved_file), "--strikes", "950:1400:50",
                     "--count", "50", "--seed", "7", "--out", str(path)]) == 0
    first, second = (p.read_text(encoding='utf-8') for p in paths)
    assert first == second
    assert len(first.splitlines()) == 50


def test_surface_with_matrix(tmp_path):
    out, matrix = tmp_path / "surface.csv", tmp_path / "surface.dat"
    assert main(["surface", "--maturities", "0.5,1", "--at", "80,100,120",
                 "--out", str(out), "--matrix", str(matrix)]) == 0
    frame = pd.read_csv(out)
    assert len(frame) == 6
    atm = frame[frame["K"] == 100.0]["vol"]
    assert atm.tolist() == pytest.approx([0.25, 0.25], abs=1e-5)
    assert matrix.read_text(encoding='utf-8').splitlines()[0] == "3 80 100 120"
