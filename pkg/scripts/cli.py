#!/usr/bin/env python3
"""
cli.py
hypersgg 命令行入口：合成数据、校验标注、构建过程图与超图、场景图预测、评估

退出码：0 成功，1 用法错误，2 数据/校验/配置/文件错误，3 内部不变量被破坏或未预期的异常
"""

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

# 导入项目配置
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..'))

from loguru import logger
from tqdm import tqdm

from config.loader import config_snapshot, load_config
from config.settings import Config
from hypersgg import __version__
from hypersgg.anticipation import AnticipationConfig, observed_frame_count, predict_future, read_predictions, \
    split_by_fraction, write_predictions
from hypersgg.core_model import PredicateVocab, VideoAnnotation
from hypersgg.errors import HyperSGGError, InvariantBreach, OutOfRangeError
from hypersgg.evaluation import RecallConfig, evaluate, write_report
from hypersgg.hypergraph import EdgeOrigin, WalkConfig, export_dot, random_walk_construct, unify_hypergraph
from hypersgg.ingest_synth import ANNOTATION_SCHEMA, SynthConfig, check_shared_vocab, generate_synthetic, \
    load_annotation_file, save_annotations
from hypersgg.jsonio import atomic_write_text, dumps, read_json, write_json
from hypersgg.logger import setup_logging
from hypersgg.procedural_graph import ProceduralGraph, build_procedural_graph, count_transitions
from hypersgg.rng import RNG_ALGORITHM

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    """命令行用法错误"""


class _Parser(argparse.ArgumentParser):
    # argparse 默认以退出码 2 结束进程，这里改为抛出异常由 main 映射为 1
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunManifest:
    """每个输出文件旁的 <out>.manifest.json，足以复现该输出"""

    command: str
    argv: List[str]
    config: Dict
    seeds: Dict
    inputs: List[str]
    outputs: List[str]
    version: str = __version__
    wall_time_seconds: float = 0.0
    created_at: str = field(default_factory=lambda: datetime.now().isoformat(timespec="seconds"))

    def to_dict(self) -> Dict:
        return {
            "command": self.command,
            "argv": list(self.argv),
            "config": self.config,
            "seeds": self.seeds,
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "version": self.version,
            "wall_time_seconds": self.wall_time_seconds,
            "created_at": self.created_at,
        }


def manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def write_manifest(out: Path, args, config: Config, inputs: Sequence[str], outputs: Sequence[Path],
                   started: float, seed: Optional[int] = None) -> Path:
    seeds = {"rng": RNG_ALGORITHM}
    if seed is not None:
        seeds["seed"] = seed
    manifest = RunManifest(
        command=args.command,
        argv=list(args.argv),
        config=config_snapshot(config),
        seeds=seeds,
        inputs=[str(p) for p in inputs],
        outputs=[str(p) for p in outputs],
        wall_time_seconds=round(time.perf_counter() - started, 6),
    )
    path = manifest_path(out)
    write_json(path, manifest.to_dict())
    logger.debug(f"写入 manifest: {path}")
    return path


def _fraction(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"不是数值: {text!r}") from None
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"观测比例必须在 (0, 1) 内, 收到 {value}")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"不是整数: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"必须 >= 1, 收到 {value}")
    return value


def _non_negative_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"不是数值: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"必须 >= 0, 收到 {value}")
    return value


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"种子必须是整数: {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"种子必须在 [0, 2^64) 内, 收到 {value}")
    return value


def apply_overrides(config: Config, args) -> Config:
    """命令行参数覆盖配置（未给出的参数为 None，不覆盖）"""
    mapping = {
        "fraction": "FRACTION",
        "num_walks": "NUM_WALKS",
        "walk_length": "WALK_LENGTH",
        "seed": "SEED",
        "constraint": "CONSTRAINT",
        "aggregation": "AGGREGATION",
        "smoothing_alpha": "SMOOTHING_ALPHA",
        "horizon": "HORIZON",
        "dominant": "DOMINANT",
    }
    for arg_name, field_name in mapping.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            setattr(config, field_name, value)
    if getattr(args, "persistence", False):
        config.PERSISTENCE = True
    return config


def load_inputs(paths: Sequence[str]) -> Tuple[PredicateVocab, List[VideoAnnotation]]:
    """读取多个标注文件，要求共用同一词表"""
    files = [(str(p), load_annotation_file(p)) for p in paths]
    vocab = check_shared_vocab(files)
    videos = [video for _, loaded in files for video in loaded.videos]
    return vocab, videos


def load_procedural_graph(path: str) -> ProceduralGraph:
    pg = ProceduralGraph.from_dict(read_json(path))
    pg.check_invariants()
    return pg


def cmd_gen_synth(args, config: Config) -> int:
    """生成合成马尔可夫场景图数据"""
    started = time.perf_counter()
    data = {}
    if args.synth_config:
        data = read_json(args.synth_config)
        if not isinstance(data, dict):
            raise HyperSGGError(f"合成配置 {args.synth_config} 顶层应为 JSON 对象")
    overrides = {
        "num_videos": args.num_videos,
        "frames_per_video": args.frames,
        "num_entities": args.num_entities,
        "num_pairs": args.num_pairs,
        "vocab_size": args.vocab_size,
        "p_stay": args.p_stay,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    if args.seed is not None or "seed" not in data:
        data["seed"] = config.SEED
    if args.dominant is not None or "dominant" not in data:
        data["dominant"] = config.DOMINANT
    data.setdefault("predicate_names", list(config.PREDICATES))

    synth = SynthConfig.from_dict(data)
    videos = generate_synthetic(synth, progress=not args.no_progress)

    out = Path(args.out)
    save_annotations(out, videos, synth.vocab)
    inputs = [args.synth_config] if args.synth_config else []
    write_manifest(out, args, config, inputs, [out], started, seed=synth.seed)
    logger.info(f"✓ 合成标注已写入 {out}")
    return EXIT_OK


def cmd_validate(args, config: Config) -> int:
    """校验标注文件（结构 + 不变量 + 词表一致）"""
    vocab, videos = load_inputs(args.input)
    frames = sum(len(v.frames) for v in videos)
    triplets = sum(len(f.triplets) for v in videos for f in v.frames)
    print(f"OK: {len(args.input)} 个文件, {len(videos)} 个视频, {frames} 帧, {triplets} 个三元组, "
          f"词表大小 {len(vocab)}")
    return EXIT_OK


def cmd_build_pg(args, config: Config) -> int:
    """统计转移并构建过程图"""
    started = time.perf_counter()
    vocab, videos = load_inputs(args.input)
    if not videos:
        logger.warning("视频列表为空，过程图所有谓词都是吸收态")

    counts = count_transitions(videos, vocab=vocab, workers=args.workers, progress=not args.no_progress)
    pg = build_procedural_graph(counts, smoothing_alpha=config.SMOOTHING_ALPHA)
    pg.check_invariants()

    out = Path(args.out)
    write_json(out, pg.to_dict())
    write_manifest(out, args, config, args.input, [out], started)
    logger.info(f"✓ 过程图已写入 {out} ({len(vocab)} 个谓词, {len(pg.absorbing)} 个吸收态)")
    return EXIT_OK


def cmd_build_hg(args, config: Config) -> int:
    """构建统一超图并随机游走采样超边"""
    started = time.perf_counter()
    _, videos = load_inputs(args.input)
    pg = load_procedural_graph(args.pg)

    walk = WalkConfig(num_walks=config.NUM_WALKS, walk_length=config.WALK_LENGTH, seed=config.SEED,
                      weighted_transitions=args.weighted_transitions)
    base = unify_hypergraph(videos, pg)
    graph = random_walk_construct(base, walk) if base.nodes else base
    graph.check_invariants()

    sampled = graph.count(EdgeOrigin.SAMPLED)
    if sampled < walk.num_walks:
        logger.warning(f"实际采样超边 {sampled} 条, 少于 N_w={walk.num_walks}")

    document = graph.to_dict()
    document.update({
        "num_walks": walk.num_walks,
        "walk_length": walk.walk_length,
        "seed": walk.seed,
        "weighted_transitions": walk.weighted_transitions,
        "sampled_edges": sampled,
    })
    out = Path(args.out)
    outputs = [out]
    write_json(out, document)
    if args.dot:
        dot_path = Path(args.dot)
        atomic_write_text(dot_path, export_dot(graph, config.TEMPLATES_DIR))
        outputs.append(dot_path)
    write_manifest(out, args, config, list(args.input) + [args.pg], outputs, started, seed=walk.seed)
    logger.info(f"✓ 超图已写入 {out}: {len(graph.nodes)} 个节点, {len(graph.edges)} 条超边 "
                f"(采样 {sampled} 条)")
    return EXIT_OK


def cmd_anticipate(args, config: Config) -> int:
    """按观测比例切分视频并预测未见帧"""
    started = time.perf_counter()
    _, videos = load_inputs(args.input)
    pg = load_procedural_graph(args.pg)
    cfg = AnticipationConfig(fraction=config.FRACTION, horizon=config.HORIZON,
                             persistence_enabled=config.PERSISTENCE,
                             top_k_candidates=args.top_k_candidates, compat_mode=args.compat)

    predictions = []
    for video in tqdm(videos, desc="预测未见帧", disable=args.no_progress):
        if video.frame_count < 2:
            logger.warning(f"视频 {video.video_id} 只有 {video.frame_count} 帧, 跳过")
            continue
        observed, _ = split_by_fraction(video, cfg.fraction)
        if not observed.frames:
            logger.warning(f"视频 {video.video_id} 的观测段没有标注帧, 跳过")
            continue
        cut = observed_frame_count(video.frame_count, cfg.fraction)
        predictions.extend(predict_future(observed, pg, cfg, observed_until=cut))

    out = Path(args.out)
    write_predictions(out, predictions)
    write_manifest(out, args, config, list(args.input) + [args.pg], [out], started)
    logger.info(f"✓ 预测已写入 {out}: {len(predictions)} 条记录")
    return EXIT_OK


def cmd_evaluate(args, config: Config) -> int:
    """计算 R@K / mR@K / NLL"""
    started = time.perf_counter()
    _, videos = load_inputs(args.input)
    predictions = read_predictions(args.predictions)

    if args.k:
        cfg = RecallConfig(k_values=tuple(args.k), constraint_mode=config.CONSTRAINT,
                           iou_threshold=args.iou_threshold, aggregation=config.AGGREGATION)
    else:
        cfg = RecallConfig(k_values=config.SGA_K_VALUES if args.task == "sga" else config.SGG_K_VALUES,
                           constraint_mode=config.CONSTRAINT, iou_threshold=args.iou_threshold,
                           aggregation=config.AGGREGATION)
    fraction = config.FRACTION if args.task == "sga" else None
    report = evaluate(videos, predictions, cfg, task=args.task, fraction=fraction)

    if args.out:
        out = Path(args.out)
        write_report(out, report, args.format)
        write_manifest(out, args, config, list(args.input) + [args.predictions], [out], started)
        logger.info(f"✓ 评估报告已写入 {out}")
    elif args.format == "json":
        print(dumps(report.to_dict()))
    elif args.format == "csv":
        print(report.to_csv(), end="")
    else:
        print(report.format_table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hypersgg", description='视频场景超图：过程图、超图构建、场景图预测与评估')
    parser.add_argument('--schema', action='store_true', help='打印标注文件的 JSON Schema 并退出')
    parser.add_argument('--version', action='version', version=f'hypersgg {__version__}')

    common = _Parser(add_help=False)
    common.add_argument('--config', help='JSON 配置文件')
    common.add_argument('--log-file', nargs='?', const='', default=None,
                        help='同时写入日志文件；不给路径时使用 log/<日期>.log')
    common.add_argument('--verbose', action='store_true', help='输出 DEBUG 日志')
    common.add_argument('--no-progress', action='store_true', help='不显示进度条')

    sub = parser.add_subparsers(dest='command', parser_class=_Parser)

    p = sub.add_parser('gen-synth', parents=[common], help='生成合成标注')
    p.add_argument('--out', required=True, help='输出标注文件')
    p.add_argument('--synth-config', help='合成参数 JSON 文件（命令行参数优先）')
    p.add_argument('--num-videos', type=_positive_int)
    p.add_argument('--frames', type=_positive_int, help='每个视频的帧数')
    p.add_argument('--num-entities', type=_positive_int)
    p.add_argument('--num-pairs', type=int)
    p.add_argument('--vocab-size', type=_positive_int)
    p.add_argument('--p-stay', type=float, help='保持当前谓词的概率')
    p.add_argument('--dominant', type=float, help='循环核中主导转移的概率')
    p.add_argument('--seed', type=_seed)
    p.set_defaults(handler=cmd_gen_synth)

    p = sub.add_parser('validate', parents=[common], help='校验标注文件')
    p.add_argument('--input', nargs='+', required=True)
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser('build-pg', parents=[common], help='构建过程图')
    p.add_argument('--input', nargs='+', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--smoothing-alpha', type=_non_negative_float, help='拉普拉斯平滑系数')
    p.add_argument('--workers', type=_positive_int, default=1, help='并行统计的线程数')
    p.set_defaults(handler=cmd_build_pg)

    p = sub.add_parser('build-hg', parents=[common], help='构建统一超图并随机游走采样超边')
    p.add_argument('--input', nargs='+', required=True)
    p.add_argument('--pg', required=True, help='过程图 JSON')
    p.add_argument('--out', required=True)
    p.add_argument('--num-walks', type=_positive_int)
    p.add_argument('--walk-length', type=_positive_int)
    p.add_argument('--seed', type=_seed)
    p.add_argument('--weighted-transitions', action='store_true', help='按转移权重选择转移超边')
    p.add_argument('--dot', help='同时导出 DOT 文件')
    p.set_defaults(handler=cmd_build_hg)

    p = sub.add_parser('anticipate', parents=[common], help='预测未见帧的场景图')
    p.add_argument('--input', nargs='+', required=True)
    p.add_argument('--pg', required=True, help='过程图 JSON')
    p.add_argument('--out', required=True, help='预测输出 (JSON Lines)')
    p.add_argument('--fraction', type=_fraction, help='观测比例 F, (0, 1)')
    p.add_argument('--horizon', type=_positive_int, help='预测的未见帧数，默认到视频结束')
    p.add_argument('--persistence', action='store_true', help='把未转移的剩余质量分给当前谓词')
    p.add_argument('--top-k-candidates', type=_positive_int)
    p.add_argument('--compat', choices=['uniform', 'frequency'], default='uniform')
    p.set_defaults(handler=cmd_anticipate)

    p = sub.add_parser('evaluate', parents=[common], help='计算 R@K / mR@K / NLL')
    p.add_argument('--input', nargs='+', required=True, help='GT 标注文件')
    p.add_argument('--predictions', required=True, help='预测 (JSON Lines)')
    p.add_argument('--out', help='报告输出路径；不给时打印到标准输出')
    p.add_argument('--format', choices=['json', 'csv', 'table'], default='json')
    p.add_argument('--task', choices=['sga', 'sgg'], default='sga')
    p.add_argument('--k', type=_positive_int, nargs='+')
    p.add_argument('--constraint', choices=['with', 'no'])
    p.add_argument('--aggregation', choices=['frame', 'video'])
    p.add_argument('--fraction', type=_fraction, help='SGA 评估时的观测比例')
    p.add_argument('--iou-threshold', type=float, help='按框 IoU 匹配实体（默认按 id）')
    p.set_defaults(handler=cmd_evaluate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数"""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help / --version
        return e.code if isinstance(e.code, int) else EXIT_OK

    if args.schema:
        print(json.dumps(ANNOTATION_SCHEMA, ensure_ascii=False, indent=2))
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    args.argv = argv

    try:
        config = load_config(args.config)
        setup_logging(verbose=args.verbose, log_file=args.log_file, log_dir=config.LOG_DIR)
        config = apply_overrides(config, args)
        return args.handler(args, config)
    except (UsageError, OutOfRangeError) as e:
        logger.error(str(e))
        return EXIT_USAGE
    except InvariantBreach as e:
        logger.error(f"内部不变量被破坏: {e}")
        return EXIT_INTERNAL
    except (HyperSGGError, json.JSONDecodeError) as e:
        logger.error(str(e))
        return EXIT_DATA
    except OSError as e:
        logger.error(f"文件错误: {e}")
        return EXIT_DATA
    except Exception as e:
        logger.exception(f"未处理的异常: {e}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    try:
        exit_code = main()
        sys.exit(exit_code)
    except KeyboardInterrupt:
        logger.info("用户中断操作")
        sys.exit(1)
