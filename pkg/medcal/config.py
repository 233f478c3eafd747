#!/usr/bin/env python3
"""
MEDCAL 設定読み込み

パッケージ同梱の config.yaml をデフォルトとし、ユーザー YAML と
環境変数で上書きする。

上書き順:
- medcal/config.yaml（デフォルト）
- ユーザー指定 YAML（--config）
- 環境変数 MEDCAL_<SECTION>_<KEY>（例: MEDCAL_BK_MAX_ITER=80）
"""

import copy
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = Path(__file__).with_name("config.yaml")
ENV_PREFIX = "MEDCAL_"


def _read_yaml(config_file: Path) -> Dict[str, Any]:
    try:
        with open(config_file, 'r') as f:
            data = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigError(f"cannot read config file {config_file}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {config_file}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{config_file}: top level must be a mapping")
    return data


def _cast_like(default: Any, raw: Any, where: str) -> Any:
    """デフォルト値の型に合わせて変換"""
    try:
        if isinstance(default, bool):
            if isinstance(raw, str):
                return raw.strip().lower() in ("1", "true", "yes", "on")
            return bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: cannot convert {raw!r} to {type(default).__name__}") from e
    return raw


def _merge(base: Dict[str, Any], user: Dict[str, Any], source: str) -> None:
    for section, values in user.items():
        if section not in base:
            raise ConfigError(f"{source}: unknown section '{section}'")
        if not isinstance(values, dict):
            raise ConfigError(f"{source}: section '{section}' must be a mapping")
        for key, raw in values.items():
            if key not in base[section]:
                raise ConfigError(f"{source}: unknown key '{section}.{key}'")
            base[section][key] = _cast_like(base[section][key], raw, f"{section}.{key}")


def _apply_env(config: Dict[str, Any]) -> None:
    for section, values in config.items():
        for key, default in values.items():
            env_name = f"{ENV_PREFIX}{section}_{key}".upper()
            raw = os.getenv(env_name)
            if raw is not None:
                values[key] = _cast_like(default, raw, env_name)
                logger.debug(f"config override from {env_name}: {values[key]}")


_DEFAULTS: Optional[Dict[str, Any]] = None


def load_config(config_file: Optional[str] = None) -> Dict[str, Any]:
    """
    設定を読み込む

    Args:
        config_file: ユーザー YAML パス（省略時はデフォルトのみ）

    Returns:
        セクション → {キー: 値} の辞書
    """
    global _DEFAULTS
    if _DEFAULTS is None:
        _DEFAULTS = _read_yaml(DEFAULT_CONFIG_FILE)

    config = copy.deepcopy(_DEFAULTS)
    if config_file:
        _merge(config, _read_yaml(Path(config_file)), str(config_file))
        logger.info(f"Loaded configuration from {config_file}")
    _apply_env(config)
    return config
