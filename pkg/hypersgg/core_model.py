"""核心数据类型：谓词词表、实体、关系三元组、逐帧场景图、视频标注

所有类型构造后不可变，可以在并发读者之间共享。
构造时不做语义校验，结构问题由 validate_annotation 以数据形式报告。
"""

import numbers
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Tuple

EntityId = str
Pair = Tuple[EntityId, EntityId]
BBox = Tuple[float, float, float, float]


@dataclass(frozen=True)
class PredicateVocab:
    """谓词类别词表，id 为从 0 开始的连续整数"""

    categories: Tuple[str, ...]
    index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        index = {}
        for i, name in enumerate(self.categories):
            # 重名时保留第一次出现的 id，重名本身由校验报告
            index.setdefault(name, i)
        object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return len(self.categories)

    def __contains__(self, predicate: int) -> bool:
        return isinstance(predicate, numbers.Integral) and 0 <= predicate < len(self.categories)

    def name(self, predicate: int) -> str:
        return self.categories[predicate]

    def id_of(self, name: str) -> int:
        return self.index[name]

    def violations(self) -> List["Violation"]:
        problems = []
        seen = set()
        for i, name in enumerate(self.categories):
            if not isinstance(name, str) or not name.strip():
                problems.append(Violation("vocab-name-empty", f"谓词 #{i} 名称为空"))
            elif name in seen:
                problems.append(Violation("vocab-name-unique", f"谓词名称 '{name}' 重复 (#{i})"))
            seen.add(name)
        return problems


@dataclass(frozen=True)
class EntityInstance:
    """某一帧中的实体实例，entity_id 在同一视频内跨帧稳定"""

    entity_id: EntityId
    category: str
    frame_index: int
    bbox: Optional[BBox] = None


@dataclass(frozen=True)
class RelationshipTriplet:
    """有向关系三元组 subject -predicate-> object"""

    subject_id: EntityId
    object_id: EntityId
    predicate: int
    score: float = 1.0

    @property
    def pair(self) -> Pair:
        return (self.subject_id, self.object_id)

    @property
    def key(self) -> Tuple[EntityId, EntityId, int]:
        return (self.subject_id, self.object_id, self.predicate)


@dataclass(frozen=True)
class FrameSceneGraph:
    """单帧场景图 G_t"""

    frame_index: int
    entities: Tuple[EntityInstance, ...] = ()
    triplets: Tuple[RelationshipTriplet, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "triplets", tuple(self.triplets))

    def entity(self, entity_id: EntityId) -> Optional[EntityInstance]:
        for e in self.entities:
            if e.entity_id == entity_id:
                return e
        return None

    def predicates_by_pair(self) -> Dict[Pair, Tuple[int, ...]]:
        """有序实体对 -> 该帧中的谓词（按出现顺序去重）"""
        grouped: Dict[Pair, List[int]] = defaultdict(list)
        for t in self.triplets:
            if t.predicate not in grouped[t.pair]:
                grouped[t.pair].append(t.predicate)
        return {pair: tuple(preds) for pair, preds in grouped.items()}


@dataclass(frozen=True)
class VideoAnnotation:
    """一个视频的全部帧标注"""

    video_id: str
    frame_count: int
    frames: Tuple[FrameSceneGraph, ...]
    vocab: PredicateVocab

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))

    def frame_map(self) -> Dict[int, FrameSceneGraph]:
        return {f.frame_index: f for f in self.frames}

    def with_frames(self, frames: Iterable[FrameSceneGraph]) -> "VideoAnnotation":
        return replace(self, frames=tuple(frames))


@dataclass(frozen=True)
class Violation:
    """一条不变量违规：规则名 + 描述，可选帧号与对象"""

    rule: str
    message: str
    frame_index: Optional[int] = None
    video_id: Optional[str] = None
    subject: Optional[str] = None

    def __str__(self) -> str:
        where = []
        if self.video_id is not None:
            where.append(f"video={self.video_id}")
        if self.frame_index is not None:
            where.append(f"frame={self.frame_index}")
        if self.subject is not None:
            where.append(self.subject)
        prefix = f"[{', '.join(where)}] " if where else ""
        return f"{prefix}{self.rule}: {self.message}"


def _check_bbox(bbox) -> Optional[str]:
    if bbox is None:
        return None
    if len(bbox) != 4:
        return f"bbox 应为 (x, y, w, h) 四元组, 收到 {len(bbox)} 个值"
    _, _, w, h = bbox
    if not (w > 0 and h > 0):
        return f"bbox 宽高必须为正, 收到 w={w}, h={h}"
    return None


def validate_annotation(ann: VideoAnnotation) -> List[Violation]:
    """检查一个视频标注的全部类型不变量

    无副作用、幂等。返回空列表当且仅当所有不变量成立；
    每条违规都指明帧、实体/三元组以及规则。
    """
    vid = ann.video_id
    violations: List[Violation] = [replace(v, video_id=vid) for v in ann.vocab.violations()]

    if not isinstance(ann.frame_count, int) or ann.frame_count < 1:
        violations.append(Violation("frame-count-positive",
                                    f"frame_count 必须 >= 1, 收到 {ann.frame_count}", video_id=vid))

    previous = None
    categories: Dict[EntityId, str] = {}
    for frame in ann.frames:
        t = frame.frame_index
        if t < 0 or t >= ann.frame_count:
            violations.append(Violation("frame-index-range",
                                        f"帧号 {t} 不在 [0, {ann.frame_count}) 内",
                                        frame_index=t, video_id=vid))
        if previous is not None and t <= previous:
            violations.append(Violation("frame-index-increasing",
                                        f"帧号 {t} 未严格大于前一帧 {previous}",
                                        frame_index=t, video_id=vid))
        previous = t

        present = set()
        for e in frame.entities:
            subject = f"entity={e.entity_id}"
            if e.entity_id in present:
                violations.append(Violation("entity-unique", "同一帧内实体 id 重复",
                                            frame_index=t, video_id=vid, subject=subject))
            present.add(e.entity_id)
            if e.frame_index != t:
                violations.append(Violation("entity-frame-index",
                                            f"实体记录的帧号 {e.frame_index} 与所在帧不一致",
                                            frame_index=t, video_id=vid, subject=subject))
            problem = _check_bbox(e.bbox)
            if problem:
                violations.append(Violation("bbox-positive", problem,
                                            frame_index=t, video_id=vid, subject=subject))
            known = categories.setdefault(e.entity_id, e.category)
            if known != e.category:
                violations.append(Violation("entity-stable",
                                            f"同一实体类别跨帧变化: '{known}' -> '{e.category}'",
                                            frame_index=t, video_id=vid, subject=subject))

        seen = set()
        for tr in frame.triplets:
            subject = f"triplet=({tr.subject_id}, {tr.object_id}, {tr.predicate})"
            if tr.subject_id == tr.object_id:
                violations.append(Violation("triplet-distinct-ends", "主语与宾语相同",
                                            frame_index=t, video_id=vid, subject=subject))
            if tr.predicate not in ann.vocab:
                violations.append(Violation("predicate-in-vocab",
                                            f"谓词 id {tr.predicate} 不在词表 (大小 {len(ann.vocab)}) 中",
                                            frame_index=t, video_id=vid, subject=subject))
            for role, eid in (("subject", tr.subject_id), ("object", tr.object_id)):
                if eid not in present:
                    violations.append(Violation("triplet-entity-present",
                                                f"{role} 实体 '{eid}' 不在本帧中",
                                                frame_index=t, video_id=vid, subject=subject))
            if not 0.0 <= tr.score <= 1.0:
                violations.append(Violation("triplet-score-range", f"置信度 {tr.score} 不在 [0, 1] 内",
                                            frame_index=t, video_id=vid, subject=subject))
            if tr.key in seen:
                violations.append(Violation("triplet-unique", "三元组 (subject, object, predicate) 重复",
                                            frame_index=t, video_id=vid, subject=subject))
            seen.add(tr.key)

    return violations


def validate_annotations(videos: Iterable[VideoAnnotation]) -> List[Violation]:
    """批量校验，并检查视频 id 唯一"""
    violations: List[Violation] = []
    ids = set()
    for ann in videos:
        if ann.video_id in ids:
            violations.append(Violation("video-id-unique", "视频 id 重复", video_id=ann.video_id))
        ids.add(ann.video_id)
        violations.extend(validate_annotation(ann))
    return violations
