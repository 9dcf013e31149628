"""过程图 (procedural graph)：从相邻帧的关系转移估计谓词之间的转移权重

流程：count_transitions 统计 (r_t = m, r_{t+1} = n) 事件 ->
build_procedural_graph 按频率归一化、去掉自环、再逐行归一化 ->
anticipate_next / anticipate_horizon 回答下一步（或 n 步）关系查询。
"""

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import reduce
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from tqdm import tqdm

from hypersgg.core_model import PredicateVocab, VideoAnnotation
from hypersgg.errors import ArgumentError, ConfigurationError, InvariantBreach

ROW_TOLERANCE = 1e-9


class _Absorbing(enum.Enum):
    ABSORBING = "absorbing"

    def __repr__(self) -> str:
        return "ABSORBING"


# 当前谓词没有任何出边（或没有正概率候选）时返回的标记
ABSORBING = _Absorbing.ABSORBING


@dataclass(frozen=True, eq=False)
class TransitionCounts:
    """转移计数矩阵 counts[m][n]"""

    vocab: PredicateVocab
    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        size = len(self.vocab)
        if counts.shape != (size, size):
            raise ConfigurationError(f"计数矩阵形状 {counts.shape} 与词表大小 {size} 不匹配")
        if (counts < 0).any():
            raise ConfigurationError("转移计数不能为负")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def from_totals(self) -> np.ndarray:
        """每行总数（含对角线）"""
        return self.counts.sum(axis=1)

    def __add__(self, other: "TransitionCounts") -> "TransitionCounts":
        if other.vocab != self.vocab:
            raise ConfigurationError("不同词表的计数不能相加")
        return TransitionCounts(self.vocab, self.counts + other.counts)

    @classmethod
    def zeros(cls, vocab: PredicateVocab) -> "TransitionCounts":
        return cls(vocab, np.zeros((len(vocab), len(vocab)), dtype=np.int64))


@dataclass(frozen=True, eq=False)
class ProceduralGraph:
    """过程图 P：谓词节点 + 归一化的转移权重 w(r_m, r_n)"""

    vocab: PredicateVocab
    weights: np.ndarray
    absorbing: frozenset

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        size = len(self.vocab)
        if weights.shape != (size, size):
            raise ConfigurationError(f"权重矩阵形状 {weights.shape} 与词表大小 {size} 不匹配")
        weights.flags.writeable = False
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "absorbing", frozenset(int(m) for m in self.absorbing))

    def __len__(self) -> int:
        return len(self.vocab)

    def row(self, current: int) -> np.ndarray:
        self._check_predicate(current)
        return self.weights[current]

    def _check_predicate(self, predicate: int) -> None:
        if predicate not in self.vocab:
            raise ArgumentError(f"谓词 id {predicate} 超出词表范围 [0, {len(self.vocab)})")

    def check_invariants(self) -> None:
        """行随机性与零对角线；失败说明构建逻辑有缺陷"""
        w = self.weights
        if np.any(np.diag(w) != 0.0):
            raise InvariantBreach("过程图对角线（自环）必须为 0")
        if np.any(w < 0.0) or np.any(w > 1.0):
            raise InvariantBreach("过程图权重必须在 [0, 1] 内")
        sums = w.sum(axis=1)
        for m, total in enumerate(sums):
            expected = 0.0 if m in self.absorbing else 1.0
            if abs(total - expected) > ROW_TOLERANCE:
                raise InvariantBreach(f"第 {m} 行权重和为 {total!r}, 期望 {expected}")

    def to_dict(self) -> Dict:
        return {
            "vocab": list(self.vocab.categories),
            "weights": [[float(x) for x in row] for row in self.weights],
            "absorbing": sorted(self.absorbing),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ProceduralGraph":
        try:
            vocab = PredicateVocab(tuple(data["vocab"]))
            return cls(vocab, np.array(data["weights"], dtype=np.float64).reshape(len(vocab), len(vocab)),
                       frozenset(data["absorbing"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigurationError(f"过程图文件格式错误: {e}") from e


def _count_video(video: VideoAnnotation, size: int) -> np.ndarray:
    counts = np.zeros((size, size), dtype=np.int64)
    frames = video.frame_map()
    for t, frame in frames.items():
        nxt = frames.get(t + 1)
        if nxt is None:
            continue
        current = frame.predicates_by_pair()
        following = nxt.predicates_by_pair()
        for pair, preds in current.items():
            later = following.get(pair)
            if not later:
                continue
            # 一对实体同时有多个谓词时，计入全部 (m, n) 组合
            for m in preds:
                for n in later:
                    counts[m, n] += 1
    return counts


def count_transitions(videos: Sequence[VideoAnnotation], vocab: Optional[PredicateVocab] = None,
                      workers: int = 1, progress: bool = False) -> TransitionCounts:
    """统计所有视频中相邻帧同一有序实体对的谓词转移

    Args:
        videos: 共享同一词表的视频标注
        vocab: 视频列表为空时使用的词表
        workers: >1 时按视频并行计数，结果按元素相加合并
        progress: 是否显示进度条

    Returns:
        TransitionCounts
    """
    videos = list(videos)
    if vocab is None:
        if not videos:
            raise ConfigurationError("视频列表为空时必须提供词表")
        vocab = videos[0].vocab
    for video in videos:
        if video.vocab != vocab:
            raise ConfigurationError(
                f"视频 {video.video_id} 的词表 {list(video.vocab.categories)} "
                f"与 {list(vocab.categories)} 不一致")

    size = len(vocab)
    iterator = tqdm(videos, desc="统计转移", disable=not progress)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda v: _count_video(v, size), iterator))
    else:
        parts = [_count_video(v, size) for v in iterator]

    total = reduce(np.add, parts, np.zeros((size, size), dtype=np.int64))
    logger.debug(f"统计了 {len(videos)} 个视频, 共 {int(total.sum())} 次转移")
    return TransitionCounts(vocab, total)


def build_procedural_graph(counts: TransitionCounts, smoothing_alpha: float = 0.0) -> ProceduralGraph:
    """由转移计数构建过程图

    先按行频率得到 w = counts / from_totals，再去掉自环，最后把仍有质量的行
    重新归一化为和 1；只有自环质量或全零的行成为吸收态 (absorbing)。

    Args:
        counts: 转移计数
        smoothing_alpha: 拉普拉斯平滑系数，加到每个非对角元素上，默认 0 不平滑
    """
    if smoothing_alpha < 0:
        raise ConfigurationError(f"平滑系数必须 >= 0, 收到 {smoothing_alpha}")

    raw = counts.counts.astype(np.float64)
    size = raw.shape[0]
    if smoothing_alpha > 0 and size > 1:
        raw = raw + smoothing_alpha * (1.0 - np.eye(size))

    totals = raw.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        weights = np.where(totals > 0, raw / totals, 0.0)
    np.fill_diagonal(weights, 0.0)

    residual = weights.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        weights = np.where(residual > 0, weights / residual, 0.0)

    absorbing = frozenset(int(m) for m in np.flatnonzero(residual[:, 0] <= 0))
    if absorbing:
        names = [counts.vocab.name(m) for m in sorted(absorbing)]
        logger.debug(f"吸收态谓词: {names}")
    return ProceduralGraph(counts.vocab, weights, absorbing)


def _check_compat(pg: ProceduralGraph, compat: Optional[Sequence[float]]) -> np.ndarray:
    if compat is None:
        return np.ones(len(pg), dtype=np.float64)
    values = np.asarray(compat, dtype=np.float64)
    if values.shape != (len(pg),):
        raise ArgumentError(f"兼容度分数长度 {values.shape} 与词表大小 {len(pg)} 不一致")
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise ArgumentError("兼容度分数必须是非负有限数")
    return values


def anticipate_next(pg: ProceduralGraph, current: int,
                    compat: Optional[Sequence[float]] = None) -> Union[Tuple[int, float], _Absorbing]:
    """预测下一帧最可能的关系：argmax_n w(current, n) * compat[n]

    平局取最小的谓词 id。current 为吸收态、或所有候选得分为 0 时返回 ABSORBING。
    """
    row = pg.row(current)
    scores = row * _check_compat(pg, compat)
    if current in pg.absorbing or not np.any(scores > 0):
        return ABSORBING
    best = int(np.argmax(scores))
    return best, float(scores[best])


def marginal_rows(pg: ProceduralGraph, n: int) -> List[np.ndarray]:
    """权重矩阵的 1..n 次幂（未重新归一化）"""
    if n < 1:
        raise ArgumentError(f"步数 n 必须 >= 1, 收到 {n}")
    powers = [pg.weights]
    for _ in range(n - 1):
        powers.append(powers[-1] @ pg.weights)
    return powers


def anticipate_horizon(pg: ProceduralGraph, current: int, n: int, mode: str = "greedy",
                       renormalize: bool = True) -> Union[List[int], np.ndarray]:
    """多步预测

    Args:
        pg: 过程图
        current: 当前谓词 id
        n: 步数 (>= 1)
        mode: "greedy" 连续取 argmax，遇到吸收态提前停止；
              "marginal" 返回 W^n 的第 current 行
        renormalize: marginal 模式下，被吸收态截断而丢失质量时是否重新归一化

    Returns:
        greedy 模式为谓词 id 列表（可能短于 n），marginal 模式为词表上的分布
    """
    pg.row(current)
    if n < 1:
        raise ArgumentError(f"步数 n 必须 >= 1, 收到 {n}")

    if mode == "greedy":
        path: List[int] = []
        state = current
        for _ in range(n):
            step = anticipate_next(pg, state)
            if step is ABSORBING:
                break
            state = step[0]
            path.append(state)
        return path

    if mode == "marginal":
        dist = pg.weights[current].copy()
        for _ in range(n - 1):
            dist = dist @ pg.weights
        total = dist.sum()
        if renormalize and 0 < total < 1.0 - 1e-12:
            dist = dist / total
        return dist

    raise ArgumentError(f"未知的预测模式: {mode!r}，应为 'greedy' 或 'marginal'")
