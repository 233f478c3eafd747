"""設定読み込みのテスト"""

import pytest

from medcal.config import load_config
from medcal.errors import ConfigError


def test_defaults():
    config = load_config()
    assert config["validation"]["tolerance"] == pytest.approx(1e-12)
    assert config["med"]["series_threshold"] == pytest.approx(1e-2)
    assert config["bk"]["max_iter"] == 60
    assert config["mred"]["truncation_sigmas"] == pytest.approx(10.0)
    assert config["sample"]["seed"] == 20100410


def test_env_override_is_cast(monkeypatch):
    monkeypatch.setenv("MEDCAL_BK_MAX_ITER", "80")
    monkeypatch.setenv("MEDCAL_BS_VOL_UPPER", "3.5")
    config = load_config()
    assert config["bk"]["max_iter"] == 80
    assert isinstance(config["bk"]["max_iter"], int)
    assert config["bs"]["vol_upper"] == pytest.approx(3.5)


def test_env_override_does_not_leak(monkeypatch):
    monkeypatch.setenv("MEDCAL_BK_MAX_ITER", "80")
    load_config()
    monkeypatch.delenv("MEDCAL_BK_MAX_ITER")
    assert load_config()["bk"]["max_iter"] == 60


def test_user_yaml(tmp_path):
    user = tmp_path / "user.yaml"
    user.write_text("output:\n  significant_digits: 12\nsurface:\n  points: 11\n")
    config = load_config(str(user))
    assert config["output"]["significant_digits"] == 12
    assert config["surface"]["points"] == 11
    assert config["bk"]["max_iter"] == 60


def test_env_beats_user_yaml(tmp_path, monkeypatch):
    user = tmp_path / "user.yaml"
    user.write_text("surface:\n  points: 11\n")
    monkeypatch.setenv("MEDCAL_SURFACE_POINTS", "7")
    assert load_config(str(user))["surface"]["points"] == 7


@pytest.mark.parametrize("text", [
    "unknown:\n  key: 1\n",
    "bk:\n  no_such_key: 1\n",
    "bk: 3\n",
    "bk:\n  max_iter: many\n",
    "- a list\n",
])
def test_bad_user_yaml(tmp_path, text):
    user = tmp_path / "bad.yaml"
    user.write_text(text)
    with pytest.raises(ConfigError):
        load_config(str(user))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.yaml"))


def test_bad_env_value(monkeypatch):
    monkeypatch.setenv("MEDCAL_MRED_QUAD_LIMIT", "lots")
    with pytest.raises(ConfigError):
        load_config()
