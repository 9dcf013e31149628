# config/loader.py
import json
import os
from dataclasses import fields, replace
from pathlib import Path
from typing import Optional, Union

from dotenv import load_dotenv
from loguru import logger

from config.settings import Config
from hypersgg.errors import ConfigurationError, OutOfRangeError

ENV_SEED = "HYPERSGG_SEED"

# 配置文件中的键（小写）-> Config 字段
_FILE_KEYS = {
    "fraction": "FRACTION",
    "num_walks": "NUM_WALKS",
    "walk_length": "WALK_LENGTH",
    "seed": "SEED",
    "sga_k_values": "SGA_K_VALUES",
    "sgg_k_values": "SGG_K_VALUES",
    "constraint": "CONSTRAINT",
    "aggregation": "AGGREGATION",
    "smoothing_alpha": "SMOOTHING_ALPHA",
    "persistence": "PERSISTENCE",
    "horizon": "HORIZON",
    "dominant": "DOMINANT",
}


def _coerce(name: str, value):
    default = getattr(Config, name, None)
    if name.endswith("K_VALUES"):
        if not isinstance(value, list) or not all(isinstance(k, int) for k in value):
            raise ConfigurationError(f"{name.lower()} 应为整数列表, 收到 {value!r}")
        return tuple(value)
    if name == "HORIZON":
        if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigurationError(f"horizon 应为整数或 null, 收到 {value!r}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{name.lower()} 应为布尔值, 收到 {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{name.lower()} 应为整数, 收到 {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{name.lower()} 应为数值, 收到 {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigurationError(f"{name.lower()} 应为字符串, 收到 {value!r}")
    return value


def _check_ranges(config: Config, source: Path) -> None:
    if not 0.0 < config.FRACTION < 1.0:
        raise OutOfRangeError(f"配置文件 {source}: fraction 必须在 (0, 1) 内, 收到 {config.FRACTION}")
    for name in ("NUM_WALKS", "WALK_LENGTH"):
        if getattr(config, name) < 1:
            raise OutOfRangeError(f"配置文件 {source}: {name.lower()} 必须 >= 1, 收到 {getattr(config, name)}")
    if config.HORIZON is not None and config.HORIZON < 1:
        raise OutOfRangeError(f"配置文件 {source}: horizon 必须 >= 1, 收到 {config.HORIZON}")
    if config.SMOOTHING_ALPHA < 0:
        raise OutOfRangeError(f"配置文件 {source}: smoothing_alpha 必须 >= 0, 收到 {config.SMOOTHING_ALPHA}")


def load_config(config_file: Optional[Union[str, Path]] = None) -> Config:
    """加载配置

    优先级：内置默认值 < 环境变量 HYPERSGG_SEED（支持 .env）< JSON 配置文件。
    命令行参数由 CLI 在此基础上覆盖。
    """
    config = Config()
    load_dotenv()

    env_seed = os.environ.get(ENV_SEED)
    if env_seed:
        try:
            config = replace(config, SEED=int(env_seed))
        except ValueError:
            raise ConfigurationError(f"环境变量 {ENV_SEED} 不是整数: {env_seed!r}") from None
        logger.debug(f"从环境变量 {ENV_SEED} 读取种子 {config.SEED}")

    if config_file is None:
        return config

    path = Path(config_file)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigurationError(f"配置文件不存在: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"配置文件 {path} 第 {e.lineno} 行 JSON 格式错误: {e.msg}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"配置文件 {path} 顶层应为 JSON 对象")

    unknown = sorted(set(data) - set(_FILE_KEYS))
    if unknown:
        raise ConfigurationError(f"配置文件 {path} 中有未知键: {unknown}")

    updates = {_FILE_KEYS[key]: _coerce(_FILE_KEYS[key], value) for key, value in data.items()}
    config = replace(config, **updates)
    _check_ranges(config, path)
    logger.debug(f"从 {path} 读取配置: {sorted(updates)}")
    return config


def config_snapshot(config: Config) -> dict:
    """写入 manifest 的配置快照（不含路径）"""
    skip = {"PROJECT_ROOT", "DATA_DIR", "TEMPLATES_DIR", "LOG_DIR"}
    snapshot = {}
    for f in fields(config):
        if f.name in skip:
            continue
        value = getattr(config, f.name)
        snapshot[f.name.lower()] = list(value) if isinstance(value, tuple) else value
    return snapshot
