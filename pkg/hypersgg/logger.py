"""日志配置

库内各模块直接 `from loguru import logger`；命令行入口调用 setup_logging
决定输出到终端 (stderr) 以及可选的日志文件。
"""

import sys
from datetime import datetime
from pathlib import Path
from typing import Optional, Union

from loguru import logger

LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} - {level} - {message}"


def setup_logging(verbose: bool = False, log_file: Optional[Union[str, Path]] = None,
                  log_dir: Optional[Union[str, Path]] = None) -> None:
    """设置日志输出

    Args:
        verbose: 为 True 时输出 DEBUG 级别
        log_file: 日志文件路径；为空字符串时使用 log_dir/<日期>.log
        log_dir: 默认日志目录
    """
    level = "DEBUG" if verbose else "INFO"
    logger.remove()
    logger.add(sys.stderr, level=level, format=LOG_FORMAT)

    if log_file is None:
        return
    if str(log_file) == "":
        directory = Path(log_dir or "log")
        directory.mkdir(parents=True, exist_ok=True)
        log_file = directory / f"{datetime.now().strftime('%Y-%m-%d')}.log"
    else:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
    logger.add(str(log_file), level=level, format=LOG_FORMAT, encoding="utf-8")
