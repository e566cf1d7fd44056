from __future__ import annotations

import itertools
import json

import numpy as np
import pytest

from skilloop.episodes import episode_to_dict
from skilloop.learner import generate_pretraining_data
from skilloop.skills import base_library
from skilloop.store import (
    LANGUAGE_DIM,
    EpisodeStore,
    SamplerConfig,
    diversity_report,
    embed,
    embed_flagged,
    format_report,
    load,
    load_many,
    mixed_sampler,
    proprio_stats,
    proprio_vector,
    transition_weights,
)
from skilloop.world import reset


@pytest.fixture(scope="module")
def library():
    return base_library()


@pytest.fixture(scope="module")
def captions(library):
    return tuple(library.channel_map())


@pytest.fixture(scope="module")
def episodes(library):
    return generate_pretraining_data(library, episodes_per_pair=3, steps=12, seed=4)


# ---------------------------------------------------------------------------
# Shards


class TestShards:
    def test_round_trip_is_field_identical(self, tmp_path, episodes, captions):
        store = EpisodeStore(tmp_path / "a.jsonl", captions)
        store.extend(episodes[:4])
        result = load(store.path)
        assert result.skipped == 0
        assert result.captions == captions
        assert [episode_to_dict(e) for e in result] == [
            episode_to_dict(e) for e in episodes[:4]
        ]

    def test_filter_by_source(self, tmp_path, episodes, captions):
        store = EpisodeStore(tmp_path / "b.jsonl", captions)
        tagged = episodes[0]
        tagged.source = "self-improvement"
        store.append(tagged)
        store.extend(episodes[1:3])
        got = load(store.path, source="self-improvement")
        assert [e.episode_id for e in got] == [tagged.episode_id]
        assert len(load(store.path, source="pretraining")) == 2
        tagged.source = "pretraining"

    def test_filter_by_skill_and_success(self, tmp_path, episodes, captions):
        store = EpisodeStore(tmp_path / "c.jsonl", captions)
        store.extend(episodes[:6])
        caption = episodes[0].segments[0].caption
        for episode in load(store.path, skill=caption):
            assert any(seg.caption == caption for seg in episode.segments)
        for episode in load(store.path, success=True):
            assert episode.success

    def test_truncated_final_record_skipped_with_count(self, tmp_path, episodes, captions):
        store = EpisodeStore(tmp_path / "d.jsonl", captions)
        store.extend(episodes[:3])
        with store.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps({"kind": "episode", "id": "half"})[:40])
        result = load(store.path)
        assert result.skipped == 1
        assert [e.episode_id for e in result] == [e.episode_id for e in episodes[:3]]

    def test_append_only_reload_stable(self, tmp_path, episodes, captions):
        store = EpisodeStore(tmp_path / "e.jsonl", captions)
        store.append(episodes[0])
        first = [e.episode_id for e in load(store.path)]
        store.append(episodes[1])
        second = [e.episode_id for e in load(store.path)]
        assert second[: len(first)] == first

    def test_channel_mismatch_rejected(self, tmp_path, episodes):
        store = EpisodeStore(tmp_path / "f.jsonl", ("only channel",))
        with pytest.raises(ValueError, match="channels"):
            store.append(episodes[0])

    def test_reopening_validates_captions(self, tmp_path, episodes, captions):
        path = tmp_path / "g.jsonl"
        EpisodeStore(path, captions).append(episodes[0])
        reopened = EpisodeStore(path)
        assert reopened.captions == captions
        with pytest.raises(ValueError, match="created for channels"):
            EpisodeStore(path, ("something else",))

    def test_new_shard_requires_captions(self, tmp_path):
        with pytest.raises(ValueError, match="channel list"):
            EpisodeStore(tmp_path / "h.jsonl")

    def test_load_many_merges_shards(self, tmp_path, episodes, captions):
        a = EpisodeStore(tmp_path / "w0.jsonl", captions)
        b = EpisodeStore(tmp_path / "w1.jsonl", captions)
        a.extend(episodes[:2])
        b.extend(episodes[2:5])
        merged = load_many([a.path, b.path])
        assert len(merged) == 5
        assert merged.captions == captions


# ---------------------------------------------------------------------------
# Mixed sampling


class TestMixedSampler:
    def test_share_frequencies_within_two_percent(self, episodes):
        datasets = {"pre": episodes[:9], "self": episodes[9:]}
        config = SamplerConfig(shares={"pre": 0.7, "self": 0.3})
        stream = mixed_sampler(datasets, config, seed=1)
        draws = list(itertools.islice(stream, 100_000))
        share = sum(s.dataset == "pre" for s in draws) / len(draws)
        assert abs(share - 0.7) < 0.02

    def test_new_skill_up_weighting(self, episodes):
        new_caption = episodes[0].segments[0].caption
        config = SamplerConfig(
            shares={"pre": 1.0},
            new_skills=frozenset({new_caption}),
            new_skill_share=0.5,
        )
        stream = mixed_sampler({"pre": episodes}, config, seed=2)
        draws = list(itertools.islice(stream, 20_000))
        share = sum(s.caption == new_caption for s in draws) / len(draws)
        assert abs(share - 0.5) < 0.02

    def test_small_dataset_repeats_to_fill_share(self, episodes):
        datasets = {"big": episodes[:12], "tiny": episodes[:1]}
        config = SamplerConfig(shares={"big": 0.5, "tiny": 0.5})
        draws = list(itertools.islice(mixed_sampler(datasets, config, seed=3), 4000))
        tiny = [s for s in draws if s.dataset == "tiny"]
        assert abs(len(tiny) / len(draws) - 0.5) < 0.03
        assert {s.episode_id for s in tiny} == {episodes[0].episode_id}

    def test_deterministic_stream(self, episodes):
        config = SamplerConfig(shares={"pre": 1.0})
        a = list(itertools.islice(mixed_sampler({"pre": episodes}, config, seed=9), 200))
        b = list(itertools.islice(mixed_sampler({"pre": episodes}, config, seed=9), 200))
        assert a == b

    def test_transitions_are_consistent(self, episodes):
        config = SamplerConfig(shares={"pre": 1.0})
        for sample in itertools.islice(mixed_sampler({"pre": episodes}, config, seed=5), 50):
            episode = next(e for e in episodes if e.episode_id == sample.episode_id)
            assert sample.next_state in [s.state for s in episode.steps]
            assert set(sample.rewards) == set(episode.steps[0].rewards)

    def test_empty_dataset_rejected(self, episodes):
        config = SamplerConfig(shares={"pre": 0.5, "ghost": 0.5})
        with pytest.raises(ValueError, match="ghost"):
            next(mixed_sampler({"pre": episodes, "ghost": []}, config, seed=0))

    def test_bad_configs_rejected(self):
        with pytest.raises(ValueError, match="sum to 1"):
            SamplerConfig(shares={"a": 0.5, "b": 0.4})
        with pytest.raises(ValueError, match="positive"):
            SamplerConfig(shares={"a": 1.5, "b": -0.5})
        with pytest.raises(ValueError, match="between 0 and 1"):
            SamplerConfig(shares={"a": 1.0}, new_skill_share=1.0)


class TestTransitionWeights:
    def test_weights_sum_to_one_when_segments_tile(self, episodes):
        config = SamplerConfig(shares={"pre": 0.7, "self": 0.3})
        weights = transition_weights({"pre": episodes[:9], "self": episodes[9:]}, config)
        assert len(weights) == sum(len(e.steps) for e in episodes)
        assert weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_matches_empirical_draw_frequencies(self, episodes):
        # steps repeat content, so aggregate per episode where identity is
        # unambiguous; within a segment weights are uniform by construction
        new_caption = episodes[0].segments[0].caption
        config = SamplerConfig(
            shares={"pre": 0.6, "self": 0.4},
            new_skills=frozenset({new_caption}),
            new_skill_share=0.5,
        )
        datasets = {"pre": episodes[:9], "self": episodes[9:]}
        weights = transition_weights(datasets, config)
        expected, cursor = {}, 0
        for name in config.shares:
            for episode in datasets[name]:
                expected[episode.episode_id] = weights[
                    cursor : cursor + len(episode.steps)
                ].sum()
                cursor += len(episode.steps)
        draws = 60_000
        counts: dict[str, int] = {}
        for sample in itertools.islice(mixed_sampler(datasets, config, seed=7), draws):
            counts[sample.episode_id] = counts.get(sample.episode_id, 0) + 1
        for episode_id, share in expected.items():
            assert counts.get(episode_id, 0) / draws == pytest.approx(share, abs=0.005)

    def test_uncovered_steps_get_zero(self, episodes):
        episode = episodes[0]
        trimmed = episode.segments[0]
        episode.segments[0] = type(trimmed)(trimmed.caption, 2, trimmed.end)
        try:
            weights = transition_weights(
                {"pre": [episode]}, SamplerConfig(shares={"pre": 1.0})
            )
            assert weights[0] == weights[1] == 0.0
            assert (weights[2:] > 0).all()
        finally:
            episode.segments[0] = trimmed

    def test_missing_dataset_rejected(self, episodes):
        config = SamplerConfig(shares={"pre": 0.5, "ghost": 0.5})
        with pytest.raises(ValueError, match="ghost"):
            transition_weights({"pre": episodes, "ghost": []}, config)


# ---------------------------------------------------------------------------
# Embeddings


class TestEmbeddings:
    def test_all_modalities_unit_norm(self, episodes):
        state = reset(seed=0)
        stats = proprio_stats(s.state for e in episodes[:3] for s in e.steps)
        for modality, datum in [
            ("language", "stack red on green"),
            ("scene", state),
            ("proprioception", state),
        ]:
            vector = embed(modality, datum, stats)
            assert np.linalg.norm(vector) == pytest.approx(1.0, abs=1e-9)

    def test_language_embedding_properties(self):
        a = embed("language", "stack red on green")
        b = embed("language", "stack red on green")
        c = embed("language", "stack red on blue")
        assert a.shape == (LANGUAGE_DIM,)
        np.testing.assert_array_equal(a, b)
        assert np.linalg.norm(a - c) > 0

    def test_zero_input_maps_to_flagged_basis_vector(self):
        vector, flagged = embed_flagged("language", "")
        assert flagged
        assert vector[0] == 1.0 and np.linalg.norm(vector) == 1.0

    def test_proprioception_requires_stats(self):
        with pytest.raises(ValueError, match="statistics"):
            embed("proprioception", reset(seed=0))

    def test_unknown_modality_rejected(self):
        with pytest.raises(ValueError, match="modality"):
            embed("smell", "?")

    def test_proprio_vector_reads_state(self):
        state = reset(seed=0)
        vector = proprio_vector(state)
        assert vector.shape == (5,)
        assert vector[3] == state.aperture


# ---------------------------------------------------------------------------
# Diversity report


class TestDiversityReport:
    def test_self_comparison_is_identical(self, episodes):
        report = diversity_report(episodes, episodes, seed=0, max_points=300)
        for modality in ("proprioception", "scene", "language"):
            assert report.baseline[modality] == report.comparison[modality]

    def test_repeated_caption_set_has_zero_language_spread(self, episodes):
        single = [e for e in episodes if e.segments[0].caption == episodes[0].segments[0].caption]
        report = diversity_report(episodes, single, seed=0, max_points=300)
        assert report.comparison["language"].mean_pairwise_l2 == 0.0
        assert report.baseline["language"].mean_pairwise_l2 > 0.0

    def test_permutation_invariant(self, episodes):
        shuffled = list(episodes)
        np.random.default_rng(7).shuffle(shuffled)
        a = diversity_report(episodes, episodes[:6], seed=0, max_points=200)
        b = diversity_report(shuffled, episodes[:6], seed=0, max_points=200)
        assert a == b

    def test_deterministic_given_seed(self, episodes):
        a = diversity_report(episodes, episodes[:6], seed=3, max_points=200)
        b = diversity_report(episodes, episodes[:6], seed=3, max_points=200)
        assert a == b

    def test_metrics_nonnegative(self, episodes):
        report = diversity_report(episodes, episodes[:6], seed=0, max_points=200)
        for metrics in (*report.baseline.values(), *report.comparison.values()):
            assert metrics.mean_pairwise_l2 >= 0.0
            assert metrics.mean_centroid_distance >= 0.0

    def test_too_few_distinct_points_rejected(self, episodes):
        single = episodes[:1]
        with pytest.raises(ValueError, match="distinct"):
            diversity_report(single, episodes, seed=0, max_points=50)

    def test_report_renders_table(self, episodes):
        report = diversity_report(episodes, episodes[:6], seed=0, max_points=200)
        text = format_report(report)
        assert "pairwise L2" in text and "language" in text
        assert len(text.splitlines()) >= 8
        as_dict = report.to_dict()
        assert set(as_dict["baseline"]) == {"proprioception", "scene", "language"}
