"""统一超图：实体场景图 + 过程图，以及随机游走采样超边

节点按插入顺序编号（视频 -> 帧 -> 实体，谓词节点在首次出现时加入），
超边同样按插入顺序编号。incident_hyperedges 的返回顺序即插入顺序。
"""

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from jinja2 import Environment, FileSystemLoader, StrictUndefined
from loguru import logger

from hypersgg.core_model import EntityId, PredicateVocab, VideoAnnotation
from hypersgg.errors import ArgumentError, ConfigurationError, InvariantBreach
from hypersgg.procedural_graph import ProceduralGraph
from hypersgg.rng import check_seed, make_rng


class NodeKind(str, enum.Enum):
    ENTITY = "entity"
    PREDICATE = "predicate"


class EdgeOrigin(str, enum.Enum):
    SPATIAL = "spatial"
    TRANSITION = "transition"
    SAMPLED = "sampled"


@dataclass(frozen=True)
class HyperNode:
    """超图节点；实体节点以 (video_id, frame_index, entity_id) 标识，谓词节点以谓词 id 标识"""

    kind: NodeKind
    video_id: Optional[str] = None
    frame_index: Optional[int] = None
    entity_id: Optional[EntityId] = None
    predicate: Optional[int] = None

    @classmethod
    def entity(cls, video_id: str, frame_index: int, entity_id: EntityId) -> "HyperNode":
        return cls(NodeKind.ENTITY, video_id=video_id, frame_index=frame_index, entity_id=entity_id)

    @classmethod
    def of_predicate(cls, predicate: int) -> "HyperNode":
        return cls(NodeKind.PREDICATE, predicate=int(predicate))

    def to_dict(self, vocab: Optional[PredicateVocab] = None) -> Dict:
        if self.kind is NodeKind.ENTITY:
            return {"kind": "entity", "video_id": self.video_id,
                    "frame_index": self.frame_index, "entity_id": self.entity_id}
        data = {"kind": "predicate", "predicate": self.predicate}
        if vocab is not None:
            data["name"] = vocab.name(self.predicate)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "HyperNode":
        if data["kind"] == "entity":
            return cls.entity(data["video_id"], int(data["frame_index"]), str(data["entity_id"]))
        return cls.of_predicate(int(data["predicate"]))


@dataclass(frozen=True)
class Hyperedge:
    """超边：成员节点 id 集合 (>= 2)

    同一来源下成员集合唯一。ends 按字典序记录该成员集合上出现过的全部方向：
    空间边为 (subject, predicate, object)，转移边为 (r_m, r_n)；采样边为空。
    转移边的 weight 为各方向权重之和，只有一个方向时即 w(r_m, r_n)。
    """

    members: FrozenSet[int]
    origin: EdgeOrigin
    weight: Optional[float] = None
    ends: Tuple[Tuple[int, ...], ...] = ()

    @property
    def key(self) -> Tuple[EdgeOrigin, FrozenSet[int]]:
        return (self.origin, self.members)

    def merge(self, other: "Hyperedge") -> "Hyperedge":
        """合并同键超边的方向与权重"""
        if other.key != self.key:
            raise ArgumentError(f"只能合并成员集合与来源都相同的超边: {self.key} vs {other.key}")
        ends = tuple(sorted(set(self.ends) | set(other.ends)))
        if ends == self.ends:
            return self
        weight = self.weight
        if other.weight is not None:
            weight = other.weight if weight is None else weight + other.weight
        return Hyperedge(self.members, self.origin, weight, ends)

    def to_dict(self) -> Dict:
        data = {"members": sorted(self.members), "origin": self.origin.value, "weight": self.weight}
        if self.ends:
            data["ends"] = [list(end) for end in self.ends]
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "Hyperedge":
        weight = data.get("weight")
        return cls(frozenset(int(m) for m in data["members"]), EdgeOrigin(data["origin"]),
                   None if weight is None else float(weight),
                   tuple(tuple(int(e) for e in end) for end in data.get("ends", ())))


@dataclass(frozen=True, eq=False)
class Hypergraph:
    """不可变超图 H = (V_H, E_H) 与关联索引"""

    vocab: PredicateVocab
    nodes: Tuple[HyperNode, ...]
    edges: Tuple[Hyperedge, ...]
    node_index: Dict[HyperNode, int] = field(init=False, repr=False)
    incidence: Dict[int, Tuple[int, ...]] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "node_index", {node: i for i, node in enumerate(self.nodes)})
        incidence: Dict[int, List[int]] = {i: [] for i in range(len(self.nodes))}
        for e_id, edge in enumerate(self.edges):
            for member in sorted(edge.members):
                if member not in incidence:
                    raise ArgumentError(f"超边 {e_id} 引用了不存在的节点 {member}")
                incidence[member].append(e_id)
        object.__setattr__(self, "incidence", {k: tuple(v) for k, v in incidence.items()})

    def node_id(self, node: HyperNode) -> int:
        try:
            return self.node_index[node]
        except KeyError:
            raise ArgumentError(f"超图中不存在节点 {node}") from None

    def count(self, origin: Optional[EdgeOrigin] = None) -> int:
        if origin is None:
            return len(self.edges)
        return sum(1 for e in self.edges if e.origin is origin)

    def check_invariants(self) -> None:
        """关联索引与超边集合一致、同来源下成员集合不重复、成员数与方向合法"""
        keys = set()
        for e_id, edge in enumerate(self.edges):
            if len(edge.members) < 2:
                raise InvariantBreach(f"超边 {e_id} 成员少于 2 个")
            if edge.key in keys:
                raise InvariantBreach(f"超边 {e_id} 与已有超边重复")
            keys.add(edge.key)
            if any(set(end) != edge.members for end in edge.ends):
                raise InvariantBreach(f"超边 {e_id} 的方向与成员集合不一致")
            if edge.origin is EdgeOrigin.SPATIAL and len(edge.members) != 3:
                raise InvariantBreach(f"空间超边 {e_id} 必须恰有 3 个成员")
            if edge.origin is EdgeOrigin.TRANSITION:
                kinds = {self.nodes[m].kind for m in edge.members}
                if len(edge.members) != 2 or kinds != {NodeKind.PREDICATE}:
                    raise InvariantBreach(f"转移超边 {e_id} 必须恰为 2 个谓词节点")
            for member in edge.members:
                if e_id not in self.incidence.get(member, ()):
                    raise InvariantBreach(f"节点 {member} 的关联索引缺少超边 {e_id}")
        for node, edge_ids in self.incidence.items():
            for e_id in edge_ids:
                if node not in self.edges[e_id].members:
                    raise InvariantBreach(f"节点 {node} 的关联索引中有无效超边 {e_id}")

    def to_dict(self) -> Dict:
        return {
            "vocab": list(self.vocab.categories),
            "nodes": [n.to_dict(self.vocab) for n in self.nodes],
            "edges": [e.to_dict() for e in self.edges],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "Hypergraph":
        try:
            return cls(PredicateVocab(tuple(data["vocab"])),
                       tuple(HyperNode.from_dict(n) for n in data["nodes"]),
                       tuple(Hyperedge.from_dict(e) for e in data["edges"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigurationError(f"超图文件格式错误: {e}") from e


@dataclass(frozen=True)
class WalkConfig:
    """随机游走参数，默认值对应 60 条超边的配置 (N_w=60, N_l=7)"""

    num_walks: int = 60
    walk_length: int = 7
    seed: int = 0
    weighted_transitions: bool = False

    def __post_init__(self):
        if self.num_walks < 1:
            raise ConfigurationError(f"游走次数 N_w 必须 >= 1, 收到 {self.num_walks}")
        if self.walk_length < 1:
            raise ConfigurationError(f"游走长度 N_l 必须 >= 1, 收到 {self.walk_length}")
        check_seed(self.seed)


@dataclass(frozen=True)
class WalkTrace:
    """一次游走的轨迹：偶数位置为节点 id，奇数位置为超边 id"""

    walk_index: int
    sequence: Tuple[int, ...]
    stalled: bool = False

    @property
    def node_ids(self) -> Tuple[int, ...]:
        return self.sequence[0::2]

    @property
    def edge_ids(self) -> Tuple[int, ...]:
        return self.sequence[1::2]

    @property
    def candidate(self) -> FrozenSet[int]:
        """访问过的节点集合（重复访问不计重数）"""
        return frozenset(self.node_ids)


class _GraphBuilder:
    def __init__(self, vocab: PredicateVocab):
        self.vocab = vocab
        self.nodes: List[HyperNode] = []
        self.index: Dict[HyperNode, int] = {}
        self.edges: List[Hyperedge] = []
        self.positions: Dict[Tuple[EdgeOrigin, FrozenSet[int]], int] = {}

    def node(self, node: HyperNode) -> int:
        if node not in self.index:
            self.index[node] = len(self.nodes)
            self.nodes.append(node)
        return self.index[node]

    def edge(self, edge: Hyperedge) -> bool:
        """加入超边；同键超边合并方向，返回是否新建了超边"""
        position = self.positions.get(edge.key)
        if position is None:
            self.positions[edge.key] = len(self.edges)
            self.edges.append(edge)
            return True
        self.edges[position] = self.edges[position].merge(edge)
        return False

    def build(self) -> Hypergraph:
        return Hypergraph(self.vocab, tuple(self.nodes), tuple(self.edges))


def unify_hypergraph(videos: Sequence[VideoAnnotation], pg: ProceduralGraph) -> Hypergraph:
    """把所有帧的实体场景图与过程图合并成统一超图

    节点：所有帧的实体实例 + 三元组或过程图中出现的谓词节点（全局共享）。
    超边：每个三元组一条空间超边 {subject, predicate, object}，
    每个 w(m, n) > 0 一条带权转移超边。
    """
    vocab = pg.vocab
    for video in videos:
        if video.vocab != vocab:
            raise ConfigurationError(
                f"视频 {video.video_id} 的词表 {list(video.vocab.categories)} "
                f"与过程图词表 {list(vocab.categories)} 不一致")

    builder = _GraphBuilder(vocab)
    skipped = 0
    for video in videos:
        for frame in video.frames:
            for entity in frame.entities:
                builder.node(HyperNode.entity(video.video_id, frame.frame_index, entity.entity_id))
            for triplet in frame.triplets:
                subject = builder.node(HyperNode.entity(video.video_id, frame.frame_index, triplet.subject_id))
                predicate = builder.node(HyperNode.of_predicate(triplet.predicate))
                obj = builder.node(HyperNode.entity(video.video_id, frame.frame_index, triplet.object_id))
                added = builder.edge(Hyperedge(frozenset((subject, predicate, obj)), EdgeOrigin.SPATIAL,
                                               ends=((subject, predicate, obj),)))
                skipped += not added

    sources, targets = np.nonzero(pg.weights > 0)
    for m, n in zip(sources.tolist(), targets.tolist()):
        a = builder.node(HyperNode.of_predicate(m))
        b = builder.node(HyperNode.of_predicate(n))
        builder.edge(Hyperedge(frozenset((a, b)), EdgeOrigin.TRANSITION,
                               weight=float(pg.weights[m, n]), ends=((a, b),)))

    graph = builder.build()
    if skipped:
        logger.debug(f"{skipped} 条空间超边与已有成员集合相同, 已合并")
    logger.info(f"统一超图: {len(graph.nodes)} 个节点, {graph.count(EdgeOrigin.SPATIAL)} 条空间超边, "
                f"{graph.count(EdgeOrigin.TRANSITION)} 条转移超边")
    return graph


def incident_hyperedges(h: Hypergraph, node: Union[int, HyperNode]) -> List[int]:
    """包含该节点的全部超边 id，按插入顺序"""
    if isinstance(node, HyperNode):
        node = h.node_id(node)
    if node not in h.incidence:
        raise ArgumentError(f"超图中不存在节点 id {node}")
    return list(h.incidence[node])


def _edge_weight(edge: Hyperedge) -> float:
    if edge.origin is EdgeOrigin.TRANSITION and edge.weight is not None:
        return edge.weight
    return 1.0


def _walk(h: Hypergraph, cfg: WalkConfig, walk_index: int) -> WalkTrace:
    # 随机数消耗顺序：起点 1 次，之后每步 1 次
    rng = make_rng(cfg.seed, walk_index)
    sequence = [int(rng.integers(len(h.nodes)))]
    for j in range(1, cfg.walk_length + 1):
        current = sequence[j - 1]
        if j % 2 == 1:
            choices = h.incidence[current]
            if not choices:
                return WalkTrace(walk_index, tuple(sequence), stalled=True)
            if cfg.weighted_transitions:
                weights = np.array([_edge_weight(h.edges[e]) for e in choices])
                cumulative = np.cumsum(weights / weights.sum())
                pick = int(np.searchsorted(cumulative, rng.random(), side="right"))
                sequence.append(choices[min(pick, len(choices) - 1)])
            else:
                sequence.append(choices[int(rng.integers(len(choices)))])
        else:
            members = sorted(h.edges[current].members)
            sequence.append(members[int(rng.integers(len(members)))])
    return WalkTrace(walk_index, tuple(sequence))


def sample_walks(h: Hypergraph, cfg: WalkConfig) -> List[WalkTrace]:
    """执行 N_w 次节点/超边交替的随机游走

    第 i 次游走的随机流只取决于 (seed, i)，可并行执行而结果不变。
    游走只看输入超图，不包含本次调用中新采样的超边。
    """
    if not h.nodes:
        raise ArgumentError("超图没有节点，无法游走")
    return [_walk(h, cfg, i) for i in range(cfg.num_walks)]


def random_walk_construct(h: Hypergraph, cfg: WalkConfig) -> Hypergraph:
    """随机游走构造超边，返回新的超图 H'（输入不变）

    每次游走访问的节点集合 h_i 在 |h_i| >= 2 且其成员集合不在 E_H ∪ E_sampled 中时
    作为 sampled 超边加入。
    """
    existing = {edge.members for edge in h.edges}
    sampled: List[Hyperedge] = []
    for trace in sample_walks(h, cfg):
        candidate = trace.candidate
        if len(candidate) < 2 or candidate in existing:
            continue
        existing.add(candidate)
        sampled.append(Hyperedge(candidate, EdgeOrigin.SAMPLED))

    if len(sampled) < cfg.num_walks:
        logger.debug(f"采样得到 {len(sampled)} 条新超边 (N_w={cfg.num_walks})，其余被去重或退化")
    return Hypergraph(h.vocab, h.nodes, h.edges + tuple(sampled))


def hyperedge_count_sweep(h: Hypergraph, walk_counts: Iterable[int], walk_length: int = 7,
                          seed: int = 0) -> Dict[int, int]:
    """对不同 N_w 统计实际新增的采样超边数"""
    realized = {}
    for num_walks in walk_counts:
        grown = random_walk_construct(h, WalkConfig(num_walks=num_walks, walk_length=walk_length, seed=seed))
        realized[num_walks] = grown.count(EdgeOrigin.SAMPLED) - h.count(EdgeOrigin.SAMPLED)
    return realized


def _node_label(node: HyperNode, vocab: PredicateVocab) -> str:
    if node.kind is NodeKind.ENTITY:
        return f"{node.entity_id}@{node.video_id}:{node.frame_index}"
    return vocab.name(node.predicate)


def export_dot(h: Hypergraph, templates_dir: Union[str, Path]) -> str:
    """用 Jinja2 模板导出 DOT 文本；每条超边画成一个小点并连到成员"""
    env = Environment(loader=FileSystemLoader(str(templates_dir)), undefined=StrictUndefined,
                      keep_trailing_newline=True, trim_blocks=True, lstrip_blocks=True,
                      autoescape=False)
    template = env.get_template("hypergraph.dot.j2")
    nodes = [{"id": i, "label": _node_label(n, h.vocab).replace('"', '\\"'), "kind": n.kind.value}
             for i, n in enumerate(h.nodes)]
    edges = [{"id": i, "origin": e.origin.value, "members": sorted(e.members),
              "weight": "" if e.weight is None else format(e.weight, ".4g")}
             for i, e in enumerate(h.edges)]
    return template.render(nodes=nodes, edges=edges)
