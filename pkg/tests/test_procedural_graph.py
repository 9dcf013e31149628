import json
import time

import numpy as np
import pytest
from conftest import HOLD, PLAY, RELEASE, frame, pair_sequence_video, pg_from_counts, random_videos, video

from hypersgg.core_model import PredicateVocab
from hypersgg.errors import ArgumentError, ConfigurationError, InvariantBreach
from hypersgg.ingest_synth import SynthConfig, generate_synthetic
from hypersgg.jsonio import dumps
from hypersgg.procedural_graph import (ABSORBING, ProceduralGraph, anticipate_horizon, anticipate_next,
                                       build_procedural_graph, count_transitions)


def brute_force_counts(videos, size):
    counts = np.zeros((size, size), dtype=np.int64)
    for v in videos:
        frames = {f.frame_index: f for f in v.frames}
        for t in frames:
            if t + 1 not in frames:
                continue
            for a in frames[t].triplets:
                for b in frames[t + 1].triplets:
                    if a.pair == b.pair:
                        counts[a.predicate, b.predicate] += 1
    return counts


def assert_row_stochastic(pg):
    assert np.all(np.diag(pg.weights) == 0.0)
    for m, total in enumerate(pg.weights.sum(axis=1)):
        assert abs(total - (0.0 if m in pg.absorbing else 1.0)) <= 1e-9


def test_hold_hold_play_sequence(vocab3):
    counts = count_transitions([pair_sequence_video(vocab3, [HOLD, HOLD, PLAY])]).counts
    expected = np.zeros((3, 3), dtype=np.int64)
    expected[HOLD, HOLD] = 1
    expected[HOLD, PLAY] = 1
    np.testing.assert_array_equal(counts, expected)


def test_single_frame_video_counts_nothing(vocab3):
    counts = count_transitions([pair_sequence_video(vocab3, [HOLD])])
    assert counts.counts.sum() == 0


def test_two_disjoint_pairs():
    vocab = PredicateVocab(("sit", "hold", "play"))
    v = video(vocab, [frame(0, [("a", "b", 0), ("p", "q", 1)]), frame(1, [("a", "b", 0), ("p", "q", 2)])])
    counts = count_transitions([v]).counts
    assert counts[0, 0] == 1 and counts[1, 2] == 1 and counts.sum() == 2


def test_gap_in_frames_breaks_transition(vocab3):
    v = video(vocab3, [frame(0, [("p1", "cup", HOLD)]), frame(2, [("p1", "cup", PLAY)])])
    assert count_transitions([v]).counts.sum() == 0


def test_vocab_mismatch(vocab3):
    other = PredicateVocab(("hold", "play"))
    with pytest.raises(ConfigurationError):
        count_transitions([pair_sequence_video(vocab3, [HOLD]), pair_sequence_video(other, [0], "v1")])
    with pytest.raises(ConfigurationError):
        count_transitions([])


def test_counts_match_brute_force_oracle(rng):
    started = time.perf_counter()
    for _ in range(200):
        size = int(rng.integers(1, 6))
        vocab, videos = random_videos(rng, size)
        counts = count_transitions(videos)
        oracle = brute_force_counts(videos, size)
        np.testing.assert_array_equal(counts.counts, oracle)
        np.testing.assert_array_equal(counts.from_totals, oracle.sum(axis=1))
        assert_row_stochastic(build_procedural_graph(counts))
    assert time.perf_counter() - started < 5

def test_parallel_counting_matches_sequential(rng):
    vocab, videos = random_videos(rng, 4, max_videos=5)
    sequential = count_transitions(videos)
    parallel = count_transitions(videos, workers=3)
    np.testing.assert_array_equal(sequential.counts, parallel.counts)


def test_build_normalizes_after_removing_self_loops(vocab3):
    pg = pg_from_counts(vocab3, [[0, 3, 1], [5, 0, 0], [0, 0, 0]])
    assert pg.weights[HOLD, PLAY] == 0.75 and pg.weights[HOLD, RELEASE] == 0.25
    assert pg.weights[PLAY, HOLD] == 1.0
    assert pg.absorbing == {RELEASE}


def test_self_only_row_is_absorbing(vocab3):
    pg = pg_from_counts(vocab3, [[5, 0, 0], [0, 0, 0], [0, 0, 0]])
    assert pg.absorbing == {HOLD, PLAY, RELEASE}
    assert pg.weights.sum() == 0.0
    pg.check_invariants()


def test_self_loops_scaled_out(vocab3):
    pg = pg_from_counts(vocab3, [[6, 3, 1], [0, 0, 0], [0, 0, 0]])
    assert pg.weights[HOLD, PLAY] == pytest.approx(0.75, abs=1e-15)
    assert_row_stochastic(pg)


def test_smoothing_fills_absorbing_rows(vocab3):
    pg = pg_from_counts(vocab3, [[0, 3, 1], [0, 0, 0], [0, 0, 0]], alpha=1.0)
    assert pg.absorbing == frozenset()
    assert pg.weights[HOLD, PLAY] == pytest.approx(4 / 6)
    np.testing.assert_allclose(pg.weights[PLAY], [0.5, 0.0, 0.5])
    with pytest.raises(ConfigurationError):
        pg_from_counts(vocab3, np.zeros((3, 3)), alpha=-1.0)


def test_anticipate_next_examples(hold_pg):
    assert anticipate_next(hold_pg, HOLD) == (PLAY, 0.75)
    best, score = anticipate_next(hold_pg, HOLD, compat=[1.0, 0.2, 0.9])
    assert best == RELEASE and score == pytest.approx(0.225)
    assert anticipate_next(hold_pg, PLAY) is ABSORBING


def test_anticipate_next_ties_and_errors(vocab3):
    pg = pg_from_counts(vocab3, [[0, 1, 1], [0, 0, 0], [0, 0, 0]])
    assert anticipate_next(pg, HOLD) == (PLAY, 0.5)
    assert anticipate_next(pg, HOLD, compat=[1.0, 0.0, 0.0]) is ABSORBING
    with pytest.raises(ArgumentError):
        anticipate_next(pg, 3)
    with pytest.raises(ArgumentError):
        anticipate_next(pg, HOLD, compat=[1.0, 1.0])


def test_argmax_is_scale_invariant(rng):
    vocab = PredicateVocab(tuple(f"r{i}" for i in range(5)))
    for _ in range(50):
        pg = pg_from_counts(vocab, rng.integers(0, 10, size=(5, 5)))
        current = int(rng.integers(5))
        compat = rng.random(5)
        base = anticipate_next(pg, current, compat)
        for c in (0.001, 0.5, 3.0, 1e6):
            scaled = anticipate_next(pg, current, compat * c)
            if base is ABSORBING:
                assert scaled is ABSORBING
            else:
                assert scaled[0] == base[0]
                assert scaled[1] == pytest.approx(base[1] * c)


def test_greedy_horizon_stops_at_absorbing(vocab3):
    pg = pg_from_counts(vocab3, [[0, 1, 0], [0, 0, 0], [0, 0, 0]])
    assert anticipate_horizon(pg, HOLD, 2, mode="greedy") == [PLAY]


def test_greedy_two_cycle(vocab3):
    pg = pg_from_counts(vocab3, [[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    assert anticipate_horizon(pg, HOLD, 2, mode="greedy") == [PLAY, HOLD]


def test_marginal_first_step_is_the_row(rng):
    vocab = PredicateVocab(tuple(f"r{i}" for i in range(4)))
    pg = pg_from_counts(vocab, rng.integers(0, 20, size=(4, 4)))
    for m in range(4):
        np.testing.assert_array_equal(anticipate_horizon(pg, m, 1, mode="marginal"), pg.weights[m])


def test_marginal_horizon_consistency(rng):
    vocab = PredicateVocab(tuple(f"r{i}" for i in range(5)))
    for _ in range(20):
        counts = rng.integers(0, 5, size=(5, 5))
        counts[int(rng.integers(5))] = 0
        pg = pg_from_counts(vocab, counts)
        for m in range(5):
            two = anticipate_horizon(pg, m, 2, mode="marginal", renormalize=False)
            chained = anticipate_horizon(pg, m, 1, mode="marginal") @ pg.weights
            np.testing.assert_allclose(two, chained, rtol=0, atol=1e-12)


def test_marginal_renormalizes_truncated_mass(hold_pg):
    truncated = anticipate_horizon(hold_pg, HOLD, 2, mode="marginal", renormalize=False)
    assert truncated.sum() == 0.0
    assert anticipate_horizon(hold_pg, HOLD, 2, mode="marginal").sum() == 0.0
    with pytest.raises(ArgumentError):
        anticipate_horizon(hold_pg, HOLD, 0)
    with pytest.raises(ArgumentError):
        anticipate_horizon(hold_pg, HOLD, 1, mode="beam")


def test_json_round_trip_is_exact(rng):
    vocab = PredicateVocab(("hold", "play", "release", "看"))
    pg = pg_from_counts(vocab, rng.integers(0, 7, size=(4, 4)))
    restored = ProceduralGraph.from_dict(json.loads(dumps(pg.to_dict())))
    assert restored.vocab == pg.vocab
    assert restored.absorbing == pg.absorbing
    np.testing.assert_array_equal(restored.weights, pg.weights)


def test_check_invariants_detects_self_loop(vocab3):
    with pytest.raises(InvariantBreach):
        ProceduralGraph(vocab3, np.eye(3), frozenset()).check_invariants()


def test_recovers_synthetic_kernel():
    started = time.perf_counter()
    cfg = SynthConfig(num_videos=60, frames_per_video=101, num_entities=5, num_pairs=10, vocab_size=6,
                      dominant=0.7, p_stay=0.0, seed=11)
    counts = count_transitions(generate_synthetic(cfg))
    assert counts.from_totals.min() >= 9000
    assert np.all(np.diag(counts.counts) == 0)

    pg = build_procedural_graph(counts)
    agreement = np.mean(np.argmax(pg.weights, axis=1) == np.argmax(cfg.kernel, axis=1))
    assert agreement >= 0.99
    assert np.abs(pg.weights - cfg.kernel).sum(axis=1).max() <= 0.05
    assert time.perf_counter() - started < 10
