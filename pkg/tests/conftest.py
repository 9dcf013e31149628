import sys
from pathlib import Path

import numpy as np
import pytest
from loguru import logger

# 与 scripts/ 下的脚本一样，把项目根目录加入 sys.path
PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from hypersgg.core_model import (EntityInstance, FrameSceneGraph, PredicateVocab, RelationshipTriplet,  # noqa: E402
                                 VideoAnnotation)
from hypersgg.procedural_graph import TransitionCounts, build_procedural_graph  # noqa: E402

HOLD, PLAY, RELEASE = 0, 1, 2


def frame(t, triplets, extra_entities=()):
    """由 (subject, object, predicate) 列表构造一帧，实体自动补齐"""
    ids = []
    for s, o, _ in triplets:
        for eid in (s, o):
            if eid not in ids:
                ids.append(eid)
    for eid in extra_entities:
        if eid not in ids:
            ids.append(eid)
    entities = tuple(EntityInstance(eid, f"cls_{eid}", t) for eid in ids)
    return FrameSceneGraph(t, entities, tuple(RelationshipTriplet(s, o, p) for s, o, p in triplets))


def video(vocab, frames, video_id="v0", frame_count=None):
    if frame_count is None:
        frame_count = (max(f.frame_index for f in frames) + 1) if frames else 1
    return VideoAnnotation(video_id, frame_count, tuple(frames), vocab)


def pair_sequence_video(vocab, sequence, video_id="v0", pair=("p1", "cup")):
    """一对实体按给定谓词序列逐帧变化的视频"""
    return video(vocab, [frame(t, [(pair[0], pair[1], p)]) for t, p in enumerate(sequence)], video_id)


def random_videos(rng, vocab_size, max_videos=5, max_frames=10, max_pairs=4, max_entities=4):
    """随机小规模标注：帧可缺失，实体对可在某些帧缺席，一帧内可有多个谓词"""
    vocab = PredicateVocab(tuple(f"r{i}" for i in range(vocab_size)))
    entity_ids = [f"e{i}" for i in range(max_entities)]
    all_pairs = [(a, b) for a in entity_ids for b in entity_ids if a != b]
    videos = []
    for v in range(int(rng.integers(1, max_videos + 1))):
        frame_count = int(rng.integers(1, max_frames + 1))
        chosen = rng.choice(len(all_pairs), size=int(rng.integers(1, max_pairs + 1)), replace=False)
        pairs = [all_pairs[int(i)] for i in chosen]
        frames = []
        for t in range(frame_count):
            if rng.random() < 0.15:
                continue
            triplets = []
            for s, o in pairs:
                if rng.random() < 0.2:
                    continue
                preds = rng.choice(vocab_size, size=int(rng.integers(1, min(2, vocab_size) + 1)), replace=False)
                triplets.extend((s, o, int(p)) for p in preds)
            frames.append(frame(t, triplets, extra_entities=entity_ids[:2]))
        videos.append(VideoAnnotation(f"v{v}", frame_count, tuple(frames), vocab))
    return vocab, videos


def pg_from_counts(vocab, counts, alpha=0.0):
    return build_procedural_graph(TransitionCounts(vocab, np.array(counts)), smoothing_alpha=alpha)


@pytest.fixture
def vocab3():
    return PredicateVocab(("hold", "play", "release"))


@pytest.fixture
def hold_pg(vocab3):
    """w(hold, play) = 0.75, w(hold, release) = 0.25；play、release 为吸收态"""
    return pg_from_counts(vocab3, [[0, 3, 1], [0, 0, 0], [0, 0, 0]])


@pytest.fixture
def toy_path():
    return PROJECT_ROOT / "data" / "toy_annotations.json"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(autouse=True)
def _no_env_seed(monkeypatch):
    monkeypatch.delenv("HYPERSGG_SEED", raising=False)


@pytest.fixture(autouse=True)
def _reset_logging():
    # CLI 测试会把 sink 绑定到被捕获的 stderr，每个测试后恢复
    yield
    logger.remove()
    logger.add(lambda message: sys.stderr.write(message), level="INFO")
