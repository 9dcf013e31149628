"""标注文件读写与合成马尔可夫场景图生成器

标注文件格式（UTF-8 JSON，谓词以词表下标引用）：

    {"vocab": [name, ...],
     "videos": [{"video_id": str, "frame_count": int,
                 "frames": [{"frame_index": int,
                             "entities": [{"entity_id": str, "category": str, "bbox": [x, y, w, h]?}],
                             "triplets": [[subject_id, object_id, predicate_index]]}]}]}
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from tqdm import tqdm

from hypersgg.core_model import (EntityInstance, FrameSceneGraph, PredicateVocab, RelationshipTriplet,
                                 VideoAnnotation, Violation, validate_annotations)
from hypersgg.errors import AnnotationParseError, AnnotationValidationError, ConfigurationError
from hypersgg.jsonio import write_json
from hypersgg.rng import check_seed, make_rng

PathLike = Union[str, Path]

ANNOTATION_SCHEMA: Dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "hypersgg annotation file",
    "type": "object",
    "required": ["vocab", "videos"],
    "properties": {
        "vocab": {"type": "array", "items": {"type": "string", "minLength": 1}, "uniqueItems": True},
        "videos": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["video_id", "frame_count", "frames"],
                "properties": {
                    "video_id": {"type": "string"},
                    "frame_count": {"type": "integer", "minimum": 1},
                    "frames": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["frame_index", "entities", "triplets"],
                            "properties": {
                                "frame_index": {"type": "integer", "minimum": 0},
                                "entities": {
                                    "type": "array",
                                    "items": {
                                        "type": "object",
                                        "required": ["entity_id", "category"],
                                        "properties": {
                                            "entity_id": {"type": ["string", "integer"]},
                                            "category": {"type": "string"},
                                            "bbox": {"type": "array", "items": {"type": "number"},
                                                     "minItems": 4, "maxItems": 4},
                                        },
                                    },
                                },
                                "triplets": {
                                    "type": "array",
                                    "items": {
                                        "type": "array",
                                        "minItems": 3,
                                        "maxItems": 3,
                                        "description": "[subject_id, object_id, predicate_index]",
                                    },
                                },
                            },
                        },
                    },
                },
            },
        },
    },
}


@dataclass(frozen=True)
class AnnotationFile:
    """一个标注文件：词表头 + 视频列表"""

    vocab: PredicateVocab
    videos: Tuple[VideoAnnotation, ...]


def _require(data: Dict, key: str, where: str):
    if not isinstance(data, dict):
        raise AnnotationParseError("应为 JSON 对象", field=where)
    if key not in data:
        raise AnnotationParseError(f"缺少字段 '{key}'", field=f"{where}.{key}" if where else key)
    return data[key]


def _as_list(value, where: str) -> list:
    if not isinstance(value, list):
        raise AnnotationParseError("应为 JSON 数组", field=where)
    return value


def _as_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise AnnotationParseError(f"应为整数, 收到 {value!r}", field=where)
    return value


def _as_float(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise AnnotationParseError(f"应为有限实数, 收到 {value!r}", field=where)
    return float(value)


def _parse_triplet(raw, vocab: PredicateVocab, where: str, frame_index: int,
                   unknown: List[Violation]) -> Optional[RelationshipTriplet]:
    raw = _as_list(raw, where)
    if len(raw) not in (3, 4):
        raise AnnotationParseError("三元组应为 [subject_id, object_id, predicate_index]", field=where)
    subject, obj, predicate = str(raw[0]), str(raw[1]), raw[2]
    score = _as_float(raw[3], f"{where}[3]") if len(raw) == 4 else 1.0
    if isinstance(predicate, str):
        # 兼容以谓词名称引用
        if predicate not in vocab.index:
            unknown.append(Violation("predicate-in-vocab", f"未知谓词名称 '{predicate}'",
                                     frame_index=frame_index, subject=where))
            return None
        predicate = vocab.id_of(predicate)
    return RelationshipTriplet(subject, obj, _as_int(predicate, f"{where}[2]"), score)


def parse_annotation_document(data: Any, source: str = "<memory>") -> AnnotationFile:
    """把已解析的 JSON 文档转换成标注对象并校验"""
    vocab_raw = _as_list(_require(data, "vocab", ""), "vocab")
    vocab = PredicateVocab(tuple(str(v) for v in vocab_raw))
    unknown: List[Violation] = []
    videos = []
    for vi, video in enumerate(_as_list(_require(data, "videos", ""), "videos")):
        vw = f"videos[{vi}]"
        video_id = str(_require(video, "video_id", vw))
        frame_count = _as_int(_require(video, "frame_count", vw), f"{vw}.frame_count")
        frames = []
        for fi, frame in enumerate(_as_list(_require(video, "frames", vw), f"{vw}.frames")):
            fw = f"{vw}.frames[{fi}]"
            t = _as_int(_require(frame, "frame_index", fw), f"{fw}.frame_index")
            entities = []
            for ei, entity in enumerate(_as_list(_require(frame, "entities", fw), f"{fw}.entities")):
                ew = f"{fw}.entities[{ei}]"
                bbox = entity.get("bbox") if isinstance(entity, dict) else None
                if bbox is not None:
                    bbox = tuple(_as_float(x, f"{ew}.bbox[{bi}]")
                                 for bi, x in enumerate(_as_list(bbox, f"{ew}.bbox")))
                entities.append(EntityInstance(
                    entity_id=str(_require(entity, "entity_id", ew)),
                    category=str(_require(entity, "category", ew)),
                    frame_index=t,
                    bbox=bbox,
                ))
            triplets = []
            for ti, raw in enumerate(_as_list(_require(frame, "triplets", fw), f"{fw}.triplets")):
                triplet = _parse_triplet(raw, vocab, f"{fw}.triplets[{ti}]", t, unknown)
                if triplet is not None:
                    triplets.append(triplet)
            frames.append(FrameSceneGraph(t, tuple(entities), tuple(triplets)))
        videos.append(VideoAnnotation(video_id, frame_count, tuple(frames), vocab))

    violations = unknown + validate_annotations(videos)
    if not videos:
        violations = vocab.violations() + violations
    if violations:
        raise AnnotationValidationError(violations, source=source)
    return AnnotationFile(vocab, tuple(videos))


def load_annotation_file(path: PathLike) -> AnnotationFile:
    """读取并校验标注文件（保留词表头，视频列表可为空）"""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise AnnotationParseError(f"{path}: JSON 格式错误: {e.msg}", line=e.lineno) from e
    except UnicodeDecodeError as e:
        raise AnnotationParseError(f"{path}: 文件不是 UTF-8 编码") from e
    result = parse_annotation_document(data, source=str(path))
    logger.debug(f"从 {path} 加载了 {len(result.videos)} 个视频")
    return result


def load_annotations(path: PathLike) -> List[VideoAnnotation]:
    return list(load_annotation_file(path).videos)


def check_shared_vocab(files: Sequence[Tuple[str, AnnotationFile]]) -> PredicateVocab:
    """多个标注文件必须共用同一词表，返回该词表"""
    if not files:
        raise ConfigurationError("没有输入标注文件")
    first_name, first = files[0]
    for name, loaded in files[1:]:
        if loaded.vocab != first.vocab:
            raise ConfigurationError(
                f"词表不一致: {first_name} 的词表为 {list(first.vocab.categories)}, "
                f"{name} 的词表为 {list(loaded.vocab.categories)}")
    return first.vocab


def annotations_to_document(videos: Sequence[VideoAnnotation], vocab: Optional[PredicateVocab] = None) -> Dict:
    if vocab is None:
        if not videos:
            raise ConfigurationError("视频列表为空时必须提供词表")
        vocab = videos[0].vocab
    out_videos = []
    for video in videos:
        if video.vocab != vocab:
            raise ConfigurationError(f"视频 {video.video_id} 的词表与文件词表不一致")
        frames = []
        for frame in video.frames:
            entities = []
            for e in frame.entities:
                entity = {"entity_id": e.entity_id, "category": e.category}
                if e.bbox is not None:
                    entity["bbox"] = [float(x) for x in e.bbox]
                entities.append(entity)
            triplets = []
            for t in frame.triplets:
                row = [t.subject_id, t.object_id, int(t.predicate)]
                if t.score != 1.0:
                    row.append(float(t.score))
                triplets.append(row)
            frames.append({"frame_index": frame.frame_index, "entities": entities, "triplets": triplets})
        out_videos.append({"video_id": video.video_id, "frame_count": video.frame_count, "frames": frames})
    return {"vocab": list(vocab.categories), "videos": out_videos}


def save_annotations(path: PathLike, videos: Sequence[VideoAnnotation],
                     vocab: Optional[PredicateVocab] = None) -> Path:
    """原子写入标注文件；写出的文件一定能被 load_annotations 读回"""
    return write_json(path, annotations_to_document(videos, vocab))


def cycle_kernel(vocab_size: int, dominant: float = 0.7) -> np.ndarray:
    """对角为 0 的转移核：第 m 行把 dominant 放在 (m+1) % V，其余均分给其他非对角元素"""
    if vocab_size < 2:
        raise ConfigurationError("循环转移核至少需要 2 个谓词")
    if not 0.0 < dominant <= 1.0:
        raise ConfigurationError(f"dominant 必须在 (0, 1] 内, 收到 {dominant}")
    kernel = np.zeros((vocab_size, vocab_size), dtype=np.float64)
    others = vocab_size - 2
    for m in range(vocab_size):
        nxt = (m + 1) % vocab_size
        if others == 0:
            kernel[m, nxt] = 1.0
            continue
        kernel[m, nxt] = dominant
        for n in range(vocab_size):
            if n not in (m, nxt):
                kernel[m, n] = (1.0 - dominant) / others
    return kernel


def default_predicate_names(vocab_size: int, names: Sequence[str] = ()) -> Tuple[str, ...]:
    names = list(names)[:vocab_size]
    names += [f"predicate_{i}" for i in range(len(names), vocab_size)]
    return tuple(names)


@dataclass(frozen=True, eq=False)
class SynthConfig:
    """合成数据参数

    kernel 为 None 时使用 cycle_kernel(vocab_size, dominant)。
    """

    num_videos: int = 10
    frames_per_video: int = 100
    num_entities: int = 4
    num_pairs: int = 4
    vocab_size: int = 6
    kernel: Optional[np.ndarray] = None
    p_stay: float = 0.0
    seed: int = 0
    dominant: float = 0.7
    predicate_names: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("num_videos", "frames_per_video", "num_entities", "vocab_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} 必须 >= 1, 收到 {getattr(self, name)}")
        if self.num_pairs < 0 or self.num_pairs > self.num_entities * (self.num_entities - 1):
            raise ConfigurationError(
                f"num_pairs={self.num_pairs} 超出 {self.num_entities} 个实体能组成的有序对数")
        if not 0.0 <= self.p_stay <= 1.0:
            raise ConfigurationError(f"p_stay 必须在 [0, 1] 内, 收到 {self.p_stay}")
        check_seed(self.seed)
        kernel = cycle_kernel(self.vocab_size, self.dominant) if self.kernel is None else \
            np.array(self.kernel, dtype=np.float64)
        if kernel.shape != (self.vocab_size, self.vocab_size):
            raise ConfigurationError(
                f"转移核形状 {kernel.shape} 与词表大小 {self.vocab_size} 不匹配")
        if np.any(kernel < 0) or np.any(np.abs(kernel.sum(axis=1) - 1.0) > 1e-9):
            raise ConfigurationError("转移核每行必须非负且和为 1 (误差 1e-9)")
        kernel.flags.writeable = False
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "predicate_names",
                           default_predicate_names(self.vocab_size, self.predicate_names))

    @property
    def vocab(self) -> PredicateVocab:
        return PredicateVocab(self.predicate_names)

    def to_dict(self) -> Dict:
        return {
            "num_videos": self.num_videos,
            "frames_per_video": self.frames_per_video,
            "num_entities": self.num_entities,
            "num_pairs": self.num_pairs,
            "vocab_size": self.vocab_size,
            "kernel": [[float(x) for x in row] for row in self.kernel],
            "p_stay": self.p_stay,
            "seed": self.seed,
            "predicate_names": list(self.predicate_names),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SynthConfig":
        known = {"num_videos", "frames_per_video", "num_entities", "num_pairs", "vocab_size",
                 "kernel", "p_stay", "seed", "dominant", "predicate_names"}
        unexpected = set(data) - known
        if unexpected:
            raise ConfigurationError(f"合成配置中有未知字段: {sorted(unexpected)}")
        data = dict(data)
        if data.get("kernel") is not None:
            data["kernel"] = np.array(data["kernel"], dtype=np.float64)
        if "predicate_names" in data:
            data["predicate_names"] = tuple(data["predicate_names"])
        return cls(**data)


def _off_diagonal_cumulative(kernel: np.ndarray) -> List[Optional[np.ndarray]]:
    rows = []
    for m, row in enumerate(kernel):
        row = row.copy()
        row[m] = 0.0
        total = row.sum()
        if total <= 0:
            rows.append(None)
            continue
        cumulative = np.cumsum(row / total)
        cumulative[-1] = 1.0
        rows.append(cumulative)
    return rows


def _generate_video(cfg: SynthConfig, video_index: int, vocab: PredicateVocab,
                    cumulative: List[Optional[np.ndarray]]) -> VideoAnnotation:
    # 随机数消耗顺序：实体对排列 -> 初始谓词 -> (T-1, P, 2) 均匀数块
    rng = make_rng(cfg.seed, video_index)
    n, size = cfg.num_entities, cfg.vocab_size
    entity_ids = [f"e{i}" for i in range(n)]
    all_pairs = [(a, b) for a in range(n) for b in range(n) if a != b]
    order = rng.permutation(len(all_pairs))[:cfg.num_pairs]
    pairs = [all_pairs[int(i)] for i in order]
    state = rng.integers(size, size=len(pairs))
    draws = rng.random((max(cfg.frames_per_video - 1, 0), len(pairs), 2))

    frames = []
    for t in range(cfg.frames_per_video):
        if t > 0:
            for j in range(len(pairs)):
                stay, pick = draws[t - 1, j]
                row = cumulative[state[j]]
                if stay < cfg.p_stay or row is None:
                    continue
                state[j] = min(int(np.searchsorted(row, pick, side="right")), size - 1)
        entities = tuple(EntityInstance(entity_ids[i], f"object_{i}", t) for i in range(n))
        triplets = tuple(RelationshipTriplet(entity_ids[a], entity_ids[b], int(state[j]))
                         for j, (a, b) in enumerate(pairs))
        frames.append(FrameSceneGraph(t, entities, triplets))
    return VideoAnnotation(f"synth_{video_index:04d}", cfg.frames_per_video, tuple(frames), vocab)


def generate_synthetic(cfg: SynthConfig, progress: bool = False) -> List[VideoAnnotation]:
    """按转移核生成合成视频

    每一帧每个实体对以概率 p_stay 保持当前谓词，否则从去掉自环并重新归一化的
    核行中采样。给定种子时结果确定。
    """
    vocab = cfg.vocab
    cumulative = _off_diagonal_cumulative(cfg.kernel)
    videos = [_generate_video(cfg, i, vocab, cumulative)
              for i in tqdm(range(cfg.num_videos), desc="生成合成视频", disable=not progress)]
    logger.info(f"生成 {len(videos)} 个合成视频, 每个 {cfg.frames_per_video} 帧, {cfg.num_pairs} 个实体对")
    return videos
