from __future__ import annotations

import pytest

from skilloop.rewards import UnknownRewardError
from skilloop.skills import (
    BASE_CAPTIONS,
    COMPOSITE_CAPTIONS,
    DuplicateSkillError,
    SkillLibrary,
    SkillSpec,
    base_library,
    composite_skills,
    hold_over_skills,
)


class TestStandardSets:
    def test_base_library_has_eighteen_skills(self):
        lib = base_library()
        assert len(lib) == 18
        assert "grasp anything" in lib
        assert "stack blue on green" in lib
        assert lib.get("reach red").reward_id == "reach_red"
        assert lib.get("stack red on green").reward_id == "stack_red_green"

    def test_composites_are_six_per_family(self):
        specs = composite_skills()
        assert len(specs) == 18
        families = {}
        for s in specs:
            families.setdefault(s.reward_id.rsplit("_", 3)[0], []).append(s.caption)
        assert sorted(families) == ["inverse_pyramid", "pyramid", "triple_stack"]
        assert all(len(v) == 6 for v in families.values())
        assert "stack green on blue and red on green" in families["triple_stack"]
        assert ("build a pyramid with red on top and green and blue at the bottom"
                in families["pyramid"])
        assert ("build an inverted pyramid with green and blue at the top and red at the bottom"
                in families["inverse_pyramid"])

    def test_hold_skills_map_to_place(self):
        specs = hold_over_skills()
        assert len(specs) == 6
        by_caption = {s.caption: s.reward_id for s in specs}
        assert by_caption["hold red over green"] == "place_red_green"

    def test_caption_constants_match_factories(self):
        assert base_library().captions() == BASE_CAPTIONS
        assert [s.caption for s in composite_skills()] == COMPOSITE_CAPTIONS


class TestLibrary:
    def test_available_filters_on_converged(self):
        lib = base_library()
        for caption in lib.captions()[:6]:
            lib.mark_converged(caption)
        assert len(lib.available()) == 18
        assert lib.available(converged_only=True) == lib.captions()[:6]

    def test_mark_converged_idempotent_and_one_way(self):
        lib = base_library()
        lib.mark_converged("reach red")
        lib.mark_converged("reach red")
        assert lib.get("reach red").converged

    def test_mark_unknown_caption_raises(self):
        with pytest.raises(KeyError):
            base_library().mark_converged("juggle")

    def test_add_duplicate_raises(self):
        lib = base_library()
        with pytest.raises(DuplicateSkillError):
            lib.add(SkillSpec("reach red", "reach_red"))

    def test_add_validates_reward_id(self):
        lib = base_library()
        with pytest.raises(UnknownRewardError):
            lib.add(SkillSpec("polish red", "polish_red"))

    def test_round_trip(self, tmp_path):
        lib = base_library()
        lib.mark_converged("open gripper")
        for spec in composite_skills():
            lib.add(spec)
        path = tmp_path / "library.jsonl"
        lib.save(path)
        loaded = SkillLibrary.load(path)
        assert loaded.captions() == lib.captions()
        assert loaded.get("open gripper").converged
        assert not loaded.get("reach red").converged

    def test_subset_preserves_flags(self):
        lib = base_library()
        lib.mark_converged("open gripper")
        sub = lib.subset(["open gripper", "reach red"])
        assert sub.captions() == ["open gripper", "reach red"]
        assert sub.get("open gripper").converged
