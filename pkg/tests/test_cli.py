import json
import time

import numpy as np
import pytest

from hypersgg.anticipation import write_predictions
from hypersgg.evaluation import ground_truth_predictions
from hypersgg.ingest_synth import load_annotations
from hypersgg.procedural_graph import ProceduralGraph
from scripts import cli


def run(*argv):
    return cli.main([str(a) for a in argv])


def read(path):
    return json.loads(path.read_text(encoding="utf-8"))


@pytest.fixture
def synth(tmp_path):
    path = tmp_path / "synth.json"
    assert run("gen-synth", "--out", path, "--num-videos", 3, "--frames", 20, "--seed", 5, "--no-progress") == 0
    return path


def test_schema_flag(capsys):
    assert run("--schema") == 0
    schema = json.loads(capsys.readouterr().out)
    assert schema["required"] == ["vocab", "videos"]


def test_no_command_is_usage_error():
    assert run() == 1
    assert run("explode") == 1


def test_build_pg_on_toy_fixture(tmp_path, toy_path):
    out = tmp_path / "pg.json"
    assert run("build-pg", "--input", toy_path, "--out", out, "--no-progress") == 0
    pg = ProceduralGraph.from_dict(read(out))
    assert pg.weights[0, 1] == 1.0
    assert pg.absorbing == {1, 2}

    manifest = read(tmp_path / "pg.json.manifest.json")
    assert manifest["command"] == "build-pg"
    assert manifest["inputs"] == [str(toy_path)] and manifest["outputs"] == [str(out)]
    assert manifest["config"]["fraction"] == 0.9 and manifest["seeds"]["rng"]


def test_build_pg_empty_video_list(tmp_path, capsys):
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"vocab": ["a", "b"], "videos": []}), encoding="utf-8")
    out = tmp_path / "pg.json"
    assert run("build-pg", "--input", empty, "--out", out) == 0
    assert read(out)["absorbing"] == [0, 1]
    assert "吸收态" in capsys.readouterr().err


def test_vocab_mismatch_exit_code(tmp_path, toy_path, capsys):
    other = tmp_path / "other.json"
    other.write_text(json.dumps({"vocab": ["sit", "stand"], "videos": []}), encoding="utf-8")
    assert run("build-pg", "--input", toy_path, other, "--out", tmp_path / "pg.json") == 2
    err = capsys.readouterr().err
    assert "release" in err and "stand" in err


def test_invalid_annotation_exit_code(tmp_path, toy_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"vocab": ["a"], "videos": [', encoding="utf-8")
    assert run("validate", "--input", bad) == 2
    assert run("validate", "--input", tmp_path / "missing.json") == 2

    typed = json.loads(toy_path.read_text(encoding="utf-8"))
    typed["videos"][0]["frames"][0]["entities"][0]["bbox"] = ["a", 1, 2, 3]
    wrong_type = tmp_path / "wrong_type.json"
    wrong_type.write_text(json.dumps(typed), encoding="utf-8")
    assert run("validate", "--input", wrong_type) == 2


def test_validate_ok(toy_path, capsys):
    assert run("validate", "--input", toy_path) == 0
    assert "OK" in capsys.readouterr().out


def test_invariant_breach_exit_code(tmp_path, toy_path, monkeypatch):
    def broken(counts, smoothing_alpha=0.0):
        return ProceduralGraph(counts.vocab, np.eye(len(counts.vocab)), frozenset())

    monkeypatch.setattr(cli, "build_procedural_graph", broken)
    assert run("build-pg", "--input", toy_path, "--out", tmp_path / "pg.json") == 3


@pytest.mark.parametrize("fraction", ["1.5", "0", "abc"])
def test_fraction_out_of_range_is_usage_error(tmp_path, toy_path, fraction):
    argv = ["anticipate", "--input", toy_path, "--pg", tmp_path / "pg.json", "--out", tmp_path / "p.jsonl",
            "--fraction", fraction]
    assert run(*argv) == 1


def test_config_file_fraction_out_of_range_is_usage_error(tmp_path, toy_path):
    config_file = tmp_path / "run.json"
    config_file.write_text(json.dumps({"fraction": 1.5}), encoding="utf-8")
    argv = ["anticipate", "--input", toy_path, "--pg", tmp_path / "pg.json", "--out", tmp_path / "p.jsonl",
            "--config", config_file]
    assert run(*argv) == 1


def test_anticipate_one_record_per_unseen_frame(tmp_path, synth):
    pg = tmp_path / "pg.json"
    assert run("build-pg", "--input", synth, "--out", pg) == 0

    out = tmp_path / "pred.jsonl"
    assert run("anticipate", "--input", synth, "--pg", pg, "--out", out, "--no-progress") == 0
    records = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
    assert [(r["video_id"], r["frame_index"]) for r in records] == [
        (f"synth_{v:04d}", t) for v in range(3) for t in (18, 19)]

    assert run("anticipate", "--input", synth, "--pg", pg, "--out", out, "--horizon", 1, "--fraction", 0.5) == 0
    records = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
    assert {r["frame_index"] for r in records} == {10}


def test_evaluate_hand_computed_recall(tmp_path):
    gt = tmp_path / "gt.json"
    gt.write_text(json.dumps({"vocab": ["hold", "sit", "play"], "videos": [{
        "video_id": "v", "frame_count": 1, "frames": [{
            "frame_index": 0,
            "entities": [{"entity_id": e, "category": e} for e in ("p1", "cup", "p2", "sofa")],
            "triplets": [["p1", "cup", 0], ["p2", "sofa", 1]]}]}]}), encoding="utf-8")
    preds = tmp_path / "pred.jsonl"
    preds.write_text(json.dumps({"video_id": "v", "frame_index": 0,
                                 "candidates": [["p1", "cup", 0, 0.9], ["p2", "sofa", 2, 0.8]]}) + "\n",
                     encoding="utf-8")
    out = tmp_path / "report.json"
    assert run("evaluate", "--input", gt, "--predictions", preds, "--task", "sgg", "--k", 10, "--out", out) == 0
    report = read(out)
    assert report["per_k"]["10"]["recall"] == 0.5
    assert report["per_k"]["10"]["mean_recall"] == 0.5


def test_evaluate_perfect_and_empty(tmp_path, toy_path, capsys):
    perfect = tmp_path / "perfect.jsonl"
    write_predictions(perfect, ground_truth_predictions(load_annotations(toy_path)))
    assert run("evaluate", "--input", toy_path, "--predictions", perfect, "--task", "sgg") == 0
    report = json.loads(capsys.readouterr().out)
    assert [v["recall"] for v in report["per_k"].values()] == [1.0, 1.0, 1.0]

    empty = tmp_path / "empty.jsonl"
    empty.write_text("", encoding="utf-8")
    assert run("evaluate", "--input", toy_path, "--predictions", empty, "--task", "sgg", "--format", "csv") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "task,k,constraint,recall,mean_recall"
    assert [line.split(",")[3] for line in lines[1:]] == ["0", "0", "0"]

    out = tmp_path / "report.json"
    assert run("evaluate", "--input", toy_path, "--predictions", empty, "--task", "sgg", "--out", out) == 0
    assert read(out)["frames_scored"] == 3


def test_evaluate_table(tmp_path, toy_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("", encoding="utf-8")
    assert run("evaluate", "--input", toy_path, "--predictions", empty, "--format", "table",
               "--constraint", "no", "--k", 10, 20) == 0
    out = capsys.readouterr().out
    assert "R@10" in out and "SGA no constraint" in out


def test_build_hg_reports_realized_count(tmp_path, toy_path):
    pg = tmp_path / "pg.json"
    assert run("build-pg", "--input", toy_path, "--out", pg) == 0
    out, dot = tmp_path / "hg.json", tmp_path / "hg.dot"
    assert run("build-hg", "--input", toy_path, "--pg", pg, "--out", out, "--num-walks", 12, "--seed", 3,
               "--dot", dot) == 0
    graph = read(out)
    assert (graph["num_walks"], graph["walk_length"], graph["seed"]) == (12, 7, 3)
    assert graph["sampled_edges"] == sum(1 for e in graph["edges"] if e["origin"] == "sampled") <= 12
    assert "graph hypergraph" in dot.read_text(encoding="utf-8")
    assert str(dot) in read(tmp_path / "hg.json.manifest.json")["outputs"]


def pipeline(workdir, num_videos=6, frames=40):
    workdir.mkdir()
    synth, pg, hg, pred, report = (workdir / name for name in
                                   ("synth.json", "pg.json", "hg.json", "pred.jsonl", "report.json"))
    common = ["--no-progress"]
    assert run("gen-synth", "--out", synth, "--num-videos", num_videos, "--frames", frames, "--seed", 17,
               *common) == 0
    assert run("build-pg", "--input", synth, "--out", pg, *common) == 0
    assert run("build-hg", "--input", synth, "--pg", pg, "--out", hg, "--seed", 17, *common) == 0
    assert run("anticipate", "--input", synth, "--pg", pg, "--out", pred, "--fraction", 0.7, *common) == 0
    assert run("evaluate", "--input", synth, "--predictions", pred, "--fraction", 0.7, "--out", report,
               *common) == 0
    return [synth, pg, hg, pred, report]


def test_pipeline_is_byte_identical(tmp_path):
    first = pipeline(tmp_path / "a")
    second = pipeline(tmp_path / "b")
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes(), a.name
        assert manifest_exists(a)
    assert read(first[-1])["frames_scored"] > 0


def manifest_exists(path):
    return cli.manifest_path(path).exists()


def test_full_size_pipeline_is_byte_identical_and_fast(tmp_path):
    runs = []
    for name in ("a", "b"):
        started = time.perf_counter()
        runs.append(pipeline(tmp_path / name, num_videos=50, frames=100))
        assert time.perf_counter() - started < 60
    for a, b in zip(*runs):
        assert a.read_bytes() == b.read_bytes(), a.name
    assert len(read(runs[0][0])["videos"]) == 50


def test_env_seed_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("HYPERSGG_SEED", "41")
    out = tmp_path / "synth.json"
    assert run("gen-synth", "--out", out, "--num-videos", 1, "--frames", 3) == 0
    assert read(cli.manifest_path(out))["seeds"]["seed"] == 41
