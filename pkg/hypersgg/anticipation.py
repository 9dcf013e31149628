"""场景图预测 (SGA)：按观测比例切分视频，预测未见帧的关系三元组

对最后一个观测帧中的每个有序实体对，用过程图的 k 步边缘分布
给出第 t+k 帧的候选谓词与分数。最后观测帧中没有出现的实体对不做预测。
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from hypersgg.core_model import EntityId, Pair, VideoAnnotation
from hypersgg.errors import ArgumentError, ConfigurationError
from hypersgg.jsonio import read_jsonl, write_jsonl
from hypersgg.procedural_graph import ProceduralGraph, marginal_rows

CompatibilityScorer = Callable[[VideoAnnotation, Pair], np.ndarray]

FLAG_EMPTY_LAST_FRAME = "empty-last-frame"
FLAG_MASS_ABSORBED = "all-mass-absorbed"


@dataclass(frozen=True)
class AnticipationConfig:
    """SGA 参数

    Attributes:
        fraction: 观测比例 F，(0, 1) 开区间，默认 0.9
        horizon: 预测的未见帧数；None 表示一直到视频结束
        persistence_enabled: 是否把未转移的剩余质量分给当前谓词
        top_k_candidates: 每个实体对保留的候选数；None 表示词表大小
        compat_mode: 未提供打分器时的内置兼容度 ("uniform" 或 "frequency")
    """

    fraction: float = 0.9
    horizon: Optional[int] = None
    persistence_enabled: bool = False
    top_k_candidates: Optional[int] = None
    compat_mode: str = "uniform"

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise ConfigurationError(f"观测比例 F 必须在 (0, 1) 内, 收到 {self.fraction}")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigurationError(f"预测步数必须 >= 1, 收到 {self.horizon}")
        if self.top_k_candidates is not None and self.top_k_candidates < 1:
            raise ConfigurationError(f"top_k_candidates 必须 >= 1, 收到 {self.top_k_candidates}")
        if self.compat_mode not in ("uniform", "frequency"):
            raise ConfigurationError(f"未知的兼容度模式: {self.compat_mode!r}")


class Candidate(NamedTuple):
    subject_id: EntityId
    object_id: EntityId
    predicate: int
    score: float


def _candidate_order(c: Candidate):
    return (-c.score, c.subject_id, c.object_id, c.predicate)


@dataclass(frozen=True)
class PredictedGraph:
    """某一目标帧的打分候选，按分数降序，平局按 (subject, object, predicate) 升序

    provenance: 实体对 -> 最后观测帧中的谓词
    boxes: 可选的实体框，仅用于 IoU 匹配模式
    """

    video_id: str
    frame_index: int
    candidates: Tuple[Candidate, ...] = ()
    horizon: Optional[int] = None
    provenance: Dict[Pair, Tuple[int, ...]] = field(default_factory=dict)
    flags: Tuple[str, ...] = ()
    boxes: Dict[EntityId, Tuple[float, float, float, float]] = field(default_factory=dict)

    def __post_init__(self):
        ordered = tuple(sorted((Candidate(*c) for c in self.candidates), key=_candidate_order))
        object.__setattr__(self, "candidates", ordered)
        object.__setattr__(self, "flags", tuple(self.flags))

    def to_record(self) -> Dict:
        record = {
            "video_id": self.video_id,
            "frame_index": self.frame_index,
            "candidates": [[c.subject_id, c.object_id, c.predicate, float(c.score)] for c in self.candidates],
        }
        if self.horizon is not None:
            record["horizon"] = self.horizon
        if self.provenance:
            record["provenance"] = [[s, o, list(p)] for (s, o), p in self.provenance.items()]
        if self.flags:
            record["flags"] = list(self.flags)
        if self.boxes:
            record["boxes"] = {eid: list(box) for eid, box in self.boxes.items()}
        return record

    @classmethod
    def from_record(cls, record: Dict) -> "PredictedGraph":
        try:
            return cls(
                video_id=str(record["video_id"]),
                frame_index=int(record["frame_index"]),
                candidates=tuple(Candidate(str(s), str(o), int(p), float(score))
                                 for s, o, p, score in record["candidates"]),
                horizon=record.get("horizon"),
                provenance={(str(s), str(o)): tuple(int(x) for x in p)
                            for s, o, p in record.get("provenance", [])},
                flags=tuple(record.get("flags", ())),
                boxes={str(k): tuple(float(x) for x in v) for k, v in record.get("boxes", {}).items()},
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigurationError(f"预测记录格式错误: {e}") from e


def split_by_fraction(ann: VideoAnnotation, fraction: float) -> Tuple[VideoAnnotation, VideoAnnotation]:
    """按观测比例切分：前 ceil(F*T) 帧为观测部分（夹在 [1, T-1]），其余为未来部分

    两部分保留原帧号与 frame_count。
    """
    if not 0.0 < fraction < 1.0:
        raise ArgumentError(f"观测比例 F 必须在 (0, 1) 内, 收到 {fraction}")
    total = ann.frame_count
    if total < 2:
        raise ArgumentError(f"视频 {ann.video_id} 只有 {total} 帧, 无法切分")
    cut = observed_frame_count(total, fraction)
    observed = ann.with_frames(f for f in ann.frames if f.frame_index < cut)
    future = ann.with_frames(f for f in ann.frames if f.frame_index >= cut)
    return observed, future


def observed_frame_count(total: int, fraction: float) -> int:
    # 1e-9 容差避免 0.3 * 10 = 3.0000000000000004 向上取整成 4
    cut = math.ceil(fraction * total - 1e-9)
    return min(max(cut, 1), total - 1)


def default_compatibility(observed: VideoAnnotation, pair: Pair, mode: str = "uniform") -> np.ndarray:
    """内置兼容度打分 v^{i,j}

    uniform: 全 1.0；
    frequency: 该实体对在观测段中的谓词频率，除以最大计数归一化到最大值 1.0，
    没有历史时全 0（调用方回退到 uniform）。
    """
    size = len(observed.vocab)
    if mode == "uniform":
        return np.ones(size, dtype=np.float64)
    if mode != "frequency":
        raise ArgumentError(f"未知的兼容度模式: {mode!r}")
    counts = np.zeros(size, dtype=np.float64)
    for frame in observed.frames:
        for triplet in frame.triplets:
            if triplet.pair == pair:
                counts[triplet.predicate] += 1
    peak = counts.max() if size else 0.0
    return counts / peak if peak > 0 else counts


def _pair_distribution(powers: List[np.ndarray], k: int, predicates: Sequence[int]) -> np.ndarray:
    # 一对实体在最后观测帧有多个谓词时取各自边缘分布的平均
    rows = [powers[k - 1][p] for p in predicates]
    return np.mean(rows, axis=0)


def predict_future(observed: VideoAnnotation, pg: ProceduralGraph, cfg: AnticipationConfig,
                   compat: Optional[CompatibilityScorer] = None,
                   observed_until: Optional[int] = None) -> List[PredictedGraph]:
    """预测观测段之后每个未见帧的场景图

    第 t+k 帧的候选分数为 W^k 中当前谓词所在行（不重新归一化，吸收态截断后
    可能亚随机），有打分器时逐元素乘以兼容度；persistence_enabled 时把剩余质量
    1 - sum 加到当前谓词上。分数为 0 的候选被丢弃。
    observed_until 为第一个未见帧的帧号（即切分点）；省略时取最后观测帧的下一帧。
    预测从切分点开始，horizon 计的是未见帧数，k 始终是目标帧与最后观测帧的距离。
    该函数只读取观测段，未来帧标注不是输入。
    """
    if observed.vocab != pg.vocab:
        raise ConfigurationError(
            f"视频 {observed.video_id} 的词表与过程图词表不一致: "
            f"{list(observed.vocab.categories)} vs {list(pg.vocab.categories)}")
    if not observed.frames:
        raise ArgumentError(f"视频 {observed.video_id} 的观测段为空")

    last = observed.frames[-1]
    first_target = last.frame_index + 1 if observed_until is None else observed_until
    if first_target <= last.frame_index:
        raise ArgumentError(
            f"视频 {observed.video_id} 的切分点 {first_target} 不在最后观测帧 {last.frame_index} 之后")
    last_target = observed.frame_count - 1
    if cfg.horizon is not None:
        last_target = min(last_target, first_target + cfg.horizon - 1)
    if last_target < first_target:
        return []

    current = last.predicates_by_pair()
    if not current:
        logger.debug(f"视频 {observed.video_id} 的最后观测帧 {last.frame_index} 没有关系, 不做预测")
        return [PredictedGraph(observed.video_id, t, (), horizon=t - last.frame_index,
                               flags=(FLAG_EMPTY_LAST_FRAME,))
                for t in range(first_target, last_target + 1)]

    top_k = cfg.top_k_candidates or len(pg.vocab)
    scorers: Dict[Pair, np.ndarray] = {}
    for pair in current:
        scores = compat(observed, pair) if compat is not None else \
            default_compatibility(observed, pair, cfg.compat_mode)
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (len(pg.vocab),) or not np.all(np.isfinite(scores)) \
                or np.any(scores < 0) or np.any(scores > 1):
            raise ArgumentError(f"实体对 {pair} 的兼容度分数必须是长度 {len(pg.vocab)} 的 [0, 1] 向量")
        if not np.any(scores > 0):
            scores = np.ones(len(pg.vocab), dtype=np.float64)
        scorers[pair] = scores

    powers = marginal_rows(pg, last_target - last.frame_index)
    predictions = []
    for target in range(first_target, last_target + 1):
        k = target - last.frame_index
        candidates: List[Candidate] = []
        absorbed = True
        for pair, predicates in current.items():
            dist = _pair_distribution(powers, k, predicates)
            scores = dist * scorers[pair]
            if cfg.persistence_enabled:
                residual = max(0.0, 1.0 - float(dist.sum()))
                scores = scores.copy()
                for p in predicates:
                    scores[p] += residual / len(predicates)
            scores = np.clip(scores, 0.0, 1.0)
            order = sorted((p for p in range(len(scores)) if scores[p] > 0),
                           key=lambda p: (-scores[p], p))[:top_k]
            if order:
                absorbed = False
            candidates.extend(Candidate(pair[0], pair[1], p, float(scores[p])) for p in order)
        flags = (FLAG_MASS_ABSORBED,) if absorbed else ()
        predictions.append(PredictedGraph(observed.video_id, target, tuple(candidates), horizon=k,
                                          provenance=dict(current), flags=flags))
    return predictions


def write_predictions(path: Union[str, Path], predictions: Sequence[PredictedGraph]) -> Path:
    """JSON Lines，每个 (video, frame) 一行"""
    return write_jsonl(path, (p.to_record() for p in predictions))


def read_predictions(path: Union[str, Path]) -> List[PredictedGraph]:
    return [PredictedGraph.from_record(r) for r in read_jsonl(path)]
