"""SGG / SGA 评估：Recall@K、mean Recall@K 与负对数似然

R@K 默认按帧平均 (frame-averaged)，可选按视频汇总 (video-pooled)；
mR@K 先按谓词类别汇总命中数与总数，再对出现过的类别取无权平均。
with 约束模式下每个 (subject, object) 只保留最高分的一个谓词再截断到 K。
"""

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from hypersgg.anticipation import Candidate, PredictedGraph, observed_frame_count
from hypersgg.core_model import FrameSceneGraph, Pair, RelationshipTriplet, VideoAnnotation
from hypersgg.errors import ConfigurationError
from hypersgg.jsonio import atomic_write_text, write_json

SGA_K_VALUES = (10, 20, 50)
SGG_K_VALUES = (20, 50, 100)
PROBABILITY_FLOOR = 1e-12
CONSTRAINT_MODES = ("with", "no")


@dataclass(frozen=True)
class RecallConfig:
    """Recall 评估参数

    Attributes:
        k_values: 严格递增的 K 列表
        constraint_mode: "with" 或 "no"
        iou_threshold: None 表示按实体 id 匹配；否则按框 IoU >= 阈值匹配
        aggregation: "frame" 帧平均或 "video" 视频汇总
    """

    k_values: Tuple[int, ...] = SGA_K_VALUES
    constraint_mode: str = "with"
    iou_threshold: Optional[float] = None
    aggregation: str = "frame"

    def __post_init__(self):
        ks = tuple(int(k) for k in self.k_values)
        object.__setattr__(self, "k_values", ks)
        if not ks or any(k < 1 for k in ks) or any(a >= b for a, b in zip(ks, ks[1:])):
            raise ConfigurationError(f"K 必须是严格递增的正整数列表, 收到 {list(ks)}")
        if self.constraint_mode not in CONSTRAINT_MODES:
            raise ConfigurationError(f"约束模式必须是 with 或 no, 收到 {self.constraint_mode!r}")
        if self.iou_threshold is not None and not 0.0 < self.iou_threshold <= 1.0:
            raise ConfigurationError(f"IoU 阈值必须在 (0, 1] 内, 收到 {self.iou_threshold}")
        if self.aggregation not in ("frame", "video"):
            raise ConfigurationError(f"汇总方式必须是 frame 或 video, 收到 {self.aggregation!r}")

    @classmethod
    def for_task(cls, task: str, **kwargs) -> "RecallConfig":
        if task not in ("sga", "sgg"):
            raise ConfigurationError(f"未知任务: {task!r}")
        return cls(k_values=SGA_K_VALUES if task == "sga" else SGG_K_VALUES, **kwargs)


@dataclass(frozen=True)
class PredicateRecall:
    hits: int
    total: int

    @property
    def recall(self) -> float:
        return self.hits / self.total if self.total else 0.0


@dataclass(frozen=True)
class RecallSummary:
    """一个 K 下的汇总结果"""

    k: int
    recall: float
    mean_recall: float
    per_predicate: Dict[int, PredicateRecall]
    frames_scored: int
    frames_skipped: int


@dataclass(frozen=True)
class NLLResult:
    value: float
    triplets: int
    flagged_pairs: Tuple[Pair, ...] = ()
    renormalized_pairs: Tuple[Pair, ...] = ()


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """(x, y, w, h) 框的交并比"""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def constrained_top_k(pred: PredictedGraph, k: int, mode: str = "with") -> List[Candidate]:
    """按约束模式过滤后取前 k 个候选"""
    if mode not in CONSTRAINT_MODES:
        raise ConfigurationError(f"约束模式必须是 with 或 no, 收到 {mode!r}")
    if mode == "no":
        return list(pred.candidates[:k])
    kept, seen = [], set()
    for c in pred.candidates:
        pair = (c.subject_id, c.object_id)
        if pair in seen:
            continue
        seen.add(pair)
        kept.append(c)
        if len(kept) == k:
            break
    return kept


def _matches(gt: FrameSceneGraph, triplet: RelationshipTriplet, c: Candidate, pred: PredictedGraph,
             iou_threshold: float) -> bool:
    if c.predicate != triplet.predicate:
        return False
    for gt_id, pred_id in ((triplet.subject_id, c.subject_id), (triplet.object_id, c.object_id)):
        entity = gt.entity(gt_id)
        box = pred.boxes.get(pred_id)
        if entity is None or entity.bbox is None or box is None:
            return False
        if iou(entity.bbox, box) < iou_threshold:
            return False
    return True


def matched_triplets(gt: FrameSceneGraph, pred: PredictedGraph, k: int, mode: str = "with",
                     iou_threshold: Optional[float] = None) -> List[RelationshipTriplet]:
    """被前 k 个候选命中的 GT 三元组"""
    top = constrained_top_k(pred, k, mode)
    if iou_threshold is None:
        keys = {(c.subject_id, c.object_id, c.predicate) for c in top}
        return [t for t in gt.triplets if t.key in keys]
    return [t for t in gt.triplets if any(_matches(gt, t, c, pred, iou_threshold) for c in top)]


def recall_at_k(gt: FrameSceneGraph, pred: PredictedGraph, k: int, mode: str = "with",
                iou_threshold: Optional[float] = None) -> Tuple[int, int]:
    """单帧 (hits, total)；total = 0 表示该帧被跳过"""
    return len(matched_triplets(gt, pred, k, mode, iou_threshold)), len(gt.triplets)


def _mean(values: Iterable[float]) -> float:
    values = list(values)
    return float(sum(values) / len(values)) if values else 0.0


def mean_recall_at_k(frames: Sequence[Tuple[FrameSceneGraph, PredictedGraph]], k: int, mode: str = "with",
                     iou_threshold: Optional[float] = None, aggregation: str = "frame") -> RecallSummary:
    """多帧汇总的 R@K 与 mR@K

    aggregation="frame" 时 R 为非跳过帧的 hits/total 平均；
    "video" 时先在每个视频内汇总 hits 与 total 再对视频平均（按 pred.video_id 分组）。
    """
    per_predicate_hits: Dict[int, int] = defaultdict(int)
    per_predicate_total: Dict[int, int] = defaultdict(int)
    frame_recalls: List[float] = []
    video_hits: Dict[str, int] = defaultdict(int)
    video_total: Dict[str, int] = defaultdict(int)
    skipped = 0

    for gt, pred in frames:
        if not gt.triplets:
            skipped += 1
            continue
        hit_keys = {t.key for t in matched_triplets(gt, pred, k, mode, iou_threshold)}
        for t in gt.triplets:
            per_predicate_total[t.predicate] += 1
            per_predicate_hits[t.predicate] += t.key in hit_keys
        frame_recalls.append(len(hit_keys) / len(gt.triplets))
        video_hits[pred.video_id] += len(hit_keys)
        video_total[pred.video_id] += len(gt.triplets)

    per_predicate = {p: PredicateRecall(per_predicate_hits[p], per_predicate_total[p])
                     for p in sorted(per_predicate_total)}
    if aggregation == "video":
        recall = _mean(video_hits[v] / video_total[v] for v in video_total)
    else:
        recall = _mean(frame_recalls)
    mean_recall = _mean(r.recall for r in per_predicate.values() if r.total > 0)
    return RecallSummary(k, recall, mean_recall, per_predicate, len(frame_recalls), skipped)


def nll_objective(gt: FrameSceneGraph, pair_distributions: Mapping[Pair, Sequence[float]]) -> NLLResult:
    """GT 三元组上的平均负对数似然 -mean log p(predicate_gt)

    分布和偏离 1 超过 1e-6 时重新归一化并记录；缺少分布的实体对按下限概率计入并标记。
    """
    if not gt.triplets:
        return NLLResult(0.0, 0)
    normalized: Dict[Pair, np.ndarray] = {}
    renormalized, flagged = [], []
    for pair, dist in pair_distributions.items():
        dist = np.asarray(dist, dtype=np.float64)
        total = float(dist.sum())
        if total > 0 and abs(total - 1.0) > 1e-6:
            dist = dist / total
            renormalized.append(pair)
        normalized[pair] = dist

    losses = []
    for t in gt.triplets:
        dist = normalized.get(t.pair)
        if dist is None or not 0 <= t.predicate < len(dist):
            if t.pair not in flagged:
                flagged.append(t.pair)
            p = PROBABILITY_FLOOR
        else:
            p = max(float(dist[t.predicate]), PROBABILITY_FLOOR)
        losses.append(-math.log(p))
    return NLLResult(float(np.mean(losses)), len(losses), tuple(flagged), tuple(renormalized))


def pair_distributions(pred: PredictedGraph, vocab_size: int) -> Dict[Pair, np.ndarray]:
    """把候选列表转成每个实体对在词表上的分数向量"""
    dists: Dict[Pair, np.ndarray] = {}
    for c in pred.candidates:
        pair = (c.subject_id, c.object_id)
        if pair not in dists:
            dists[pair] = np.zeros(vocab_size, dtype=np.float64)
        dists[pair][c.predicate] = max(dists[pair][c.predicate], c.score)
    return dists


def ground_truth_predictions(videos: Iterable[VideoAnnotation]) -> List[PredictedGraph]:
    """把标注直接转成分数 1.0 的候选（SGG 路径与“完美预测”对照）"""
    out = []
    for video in videos:
        for frame in video.frames:
            out.append(PredictedGraph(video.video_id, frame.frame_index,
                                      tuple(Candidate(t.subject_id, t.object_id, t.predicate, float(t.score))
                                            for t in frame.triplets)))
    return out


@dataclass(frozen=True)
class MetricReport:
    """一次评估的全部结果

    per_predicate 取最大 K 下的结果；per_horizon 为 预测步数 -> K -> R。
    """

    task: str
    constraint_mode: str
    per_k: Dict[int, Tuple[float, float]]
    per_predicate: Dict[int, PredicateRecall]
    nll: float
    frames_scored: int
    frames_skipped: int
    aggregation: str = "frame"
    per_horizon: Dict[int, Dict[int, float]] = field(default_factory=dict)
    nll_flagged_pairs: int = 0
    vocab: Tuple[str, ...] = ()

    def to_dict(self) -> Dict:
        return {
            "task": self.task,
            "constraint_mode": self.constraint_mode,
            "aggregation": self.aggregation,
            "per_k": {str(k): {"recall": r, "mean_recall": mr} for k, (r, mr) in self.per_k.items()},
            "per_predicate": {
                (self.vocab[p] if p < len(self.vocab) else str(p)):
                    {"hits": v.hits, "total": v.total, "recall": v.recall}
                for p, v in self.per_predicate.items()},
            "per_horizon": {str(h): {str(k): r for k, r in ks.items()} for h, ks in self.per_horizon.items()},
            "nll": self.nll,
            "nll_flagged_pairs": self.nll_flagged_pairs,
            "frames_scored": self.frames_scored,
            "frames_skipped": self.frames_skipped,
        }

    def to_frame(self) -> pd.DataFrame:
        """每个 (task, K, mode) 一行"""
        rows = [{"task": self.task, "k": k, "constraint": self.constraint_mode,
                 "recall": r, "mean_recall": mr} for k, (r, mr) in self.per_k.items()]
        return pd.DataFrame(rows, columns=["task", "k", "constraint", "recall", "mean_recall"])

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, float_format="%.17g", lineterminator="\n")

    def format_table(self) -> str:
        """与论文表格类似的对齐表：一行一个约束模式，列为 R@K 与 mR@K（百分比）"""
        row = {}
        for k, (r, _) in self.per_k.items():
            row[f"R@{k}"] = round(100 * r, 1)
        for k, (_, mr) in self.per_k.items():
            row[f"mR@{k}"] = round(100 * mr, 1)
        table = pd.DataFrame([row], index=[f"{self.task.upper()} {self.constraint_mode} constraint"])
        return table.to_string()


def _gt_frames(video: VideoAnnotation, task: str, fraction: Optional[float]) -> List[FrameSceneGraph]:
    if task == "sga" and fraction is not None and video.frame_count >= 2:
        cut = observed_frame_count(video.frame_count, fraction)
        return [f for f in video.frames if f.frame_index >= cut]
    return list(video.frames)


def evaluate(gt_videos: Sequence[VideoAnnotation], predictions: Sequence[PredictedGraph],
             cfg: RecallConfig, task: str = "sga", fraction: Optional[float] = None) -> MetricReport:
    """按 (video_id, frame_index) 对齐 GT 与预测并计算 MetricReport

    sga 任务且给出 fraction 时只评估未见帧；缺少预测的帧按空预测计入。
    """
    by_key = {(p.video_id, p.frame_index): p for p in predictions}
    aligned: List[Tuple[FrameSceneGraph, PredictedGraph]] = []
    nll_losses, flagged = [], 0
    vocab = gt_videos[0].vocab if gt_videos else None
    for video in gt_videos:
        for frame in _gt_frames(video, task, fraction):
            pred = by_key.get((video.video_id, frame.frame_index),
                              PredictedGraph(video.video_id, frame.frame_index))
            aligned.append((frame, pred))
            if frame.triplets:
                result = nll_objective(frame, pair_distributions(pred, len(video.vocab)))
                nll_losses.extend([result.value] * result.triplets)
                flagged += len(result.flagged_pairs)

    per_k, per_predicate = {}, {}
    scored = skipped = 0
    for k in cfg.k_values:
        summary = mean_recall_at_k(aligned, k, cfg.constraint_mode, cfg.iou_threshold, cfg.aggregation)
        per_k[k] = (summary.recall, summary.mean_recall)
        per_predicate = summary.per_predicate
        scored, skipped = summary.frames_scored, summary.frames_skipped

    per_horizon: Dict[int, Dict[int, float]] = {}
    horizons = sorted({p.horizon for _, p in aligned if p.horizon is not None})
    for h in horizons:
        subset = [(g, p) for g, p in aligned if p.horizon == h]
        per_horizon[h] = {k: mean_recall_at_k(subset, k, cfg.constraint_mode, cfg.iou_threshold,
                                              cfg.aggregation).recall for k in cfg.k_values}

    logger.info(f"评估完成: {scored} 帧计分, {skipped} 帧跳过")
    return MetricReport(
        task=task,
        constraint_mode=cfg.constraint_mode,
        per_k=per_k,
        per_predicate=per_predicate,
        nll=float(np.mean(nll_losses)) if nll_losses else 0.0,
        frames_scored=scored,
        frames_skipped=skipped,
        aggregation=cfg.aggregation,
        per_horizon=per_horizon,
        nll_flagged_pairs=flagged,
        vocab=tuple(vocab.categories) if vocab is not None else (),
    )


def write_report(path: Union[str, Path], report: MetricReport, fmt: str = "json") -> Path:
    if fmt == "json":
        return write_json(path, report.to_dict())
    if fmt == "csv":
        return atomic_write_text(path, report.to_csv())
    if fmt == "table":
        return atomic_write_text(path, report.format_table() + "\n")
    raise ConfigurationError(f"未知输出格式: {fmt!r}")
