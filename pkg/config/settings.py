# config/settings.py
import os
from dataclasses import dataclass
from typing import Optional, Tuple

from loguru import logger


@dataclass
class Config:
    # 项目根目录
    PROJECT_ROOT: str = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

    # 数据目录
    DATA_DIR: str = os.path.join(PROJECT_ROOT, 'data')

    # 模板目录（DOT 导出）
    TEMPLATES_DIR: str = os.path.join(PROJECT_ROOT, 'templates')

    # 日志目录
    LOG_DIR: str = os.path.join(PROJECT_ROOT, 'log')

    # SGA 观测比例 F
    FRACTION: float = 0.9

    # 随机游走：60 条超边的配置
    NUM_WALKS: int = 60
    WALK_LENGTH: int = 7
    SEED: int = 0

    # 评估
    SGA_K_VALUES: Tuple[int, ...] = (10, 20, 50)
    SGG_K_VALUES: Tuple[int, ...] = (20, 50, 100)
    CONSTRAINT: str = "with"
    AGGREGATION: str = "frame"

    # 过程图与预测
    SMOOTHING_ALPHA: float = 0.0
    PERSISTENCE: bool = False
    HORIZON: Optional[int] = None

    # 合成数据循环核的主导转移概率
    DOMINANT: float = 0.7

    # 谓词词表 - 从文件读取
    @property
    def PREDICATES(self):
        """从 predicates.txt 读取默认谓词词表（合成数据使用）"""
        predicates_file = os.path.join(self.PROJECT_ROOT, 'config', 'predicates.txt')
        predicates = []

        try:
            with open(predicates_file, 'r', encoding='utf-8') as f:
                for line in f:
                    line = line.strip()
                    if line and not line.startswith('#'):  # 忽略空行和注释
                        predicates.append(line)
        except FileNotFoundError:
            logger.warning(f"谓词文件 {predicates_file} 不存在，使用默认词表")
            predicates = ["holding", "looking_at", "sitting_on", "touching", "drinking_from", "not_contacting"]

        return tuple(predicates)
