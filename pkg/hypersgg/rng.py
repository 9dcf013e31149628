"""可复现的随机数生成器

所有随机过程都使用 numpy 的 PCG64 位生成器，种子经 SeedSequence 派生。
每条随机流由 (seed, *stream) 唯一确定，与执行顺序和平台无关：
随机游走按 (seed, walk_index)，合成数据按 (seed, video_index)。
"""

import numpy as np

from hypersgg.errors import ConfigurationError

# 算法名 + 版本号，写入 manifest 以便复现
RNG_ALGORITHM = "numpy.PCG64+SeedSequence/v1"

MAX_SEED = 2 ** 64 - 1


def check_seed(seed: int) -> int:
    """校验种子为 64 位无符号整数"""
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise ConfigurationError(f"种子必须是整数, 收到 {seed!r}")
    if not 0 <= int(seed) <= MAX_SEED:
        raise ConfigurationError(f"种子必须在 [0, 2^64) 内, 收到 {seed}")
    return int(seed)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """为 (seed, *stream) 创建独立的随机流

    Args:
        seed: 64 位种子
        stream: 子流编号，例如游走序号或视频序号

    Returns:
        numpy Generator
    """
    seq = np.random.SeedSequence(entropy=check_seed(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(seq))
