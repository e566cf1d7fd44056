"""Curriculum planning pipeline tests."""

from __future__ import annotations

import pytest

from skilloop import gateway
from skilloop.curriculum import Curriculum, History, Plan, PlanningError, TrialRecord
from skilloop.mock_backend import COLD_START_TASK, ScriptedBackend, proposal_pool
from skilloop.skills import base_library

SCENE = (
    "red at cell (1, 1, 0) on the floor; green at cell (3, 5, 0) on the floor; "
    "blue at cell (6, 2, 0) on the floor; gripper at cell (4, 4, 2), aperture 1.0, "
    "holding nothing"
)


def converged_base():
    library = base_library()
    for caption in library.captions():
        library.mark_converged(caption)
    return library


def make_curriculum(**kwargs):
    return Curriculum(converged_base(), ScriptedBackend(seed=0), **kwargs)


# ---------------------------------------------------------------------------
# History


def test_history_counts_and_expansion():
    history = History()
    history.record("task a", True)
    history.record("task a", True)
    history.record("task b", False)
    history.record("task a", False)
    assert history.records() == [TrialRecord("task a", 2, 1), TrialRecord("task b", 0, 1)]
    assert history.successes_expanded() == ["task a", "task a"]
    # expansion follows first-attempt order of the tasks, not event order
    assert history.failures_expanded() == ["task a", "task b"]
    assert history.attempted("task b")
    assert not history.attempted("task c")


def test_history_display_compacts_repeats():
    history = History()
    for _ in range(5):
        history.record("tower", False)
    history.record("tower", True)
    history.record("stack", True)
    assert history.failures_display() == ["tower (x5)"]
    assert history.successes_display() == ["tower", "stack"]


def test_history_round_trip():
    history = History()
    history.record("a", True)
    history.record("b", False)
    history.record("b", False)
    clone = History.from_dict(history.to_dict())
    assert clone.records() == history.records()


# ---------------------------------------------------------------------------
# Happy-path planning


def test_cold_start_plan_is_grounded_tower():
    curriculum = make_curriculum()
    plan = curriculum.next_plan(SCENE)
    assert plan.plan_id == 0
    assert plan.proposal == COLD_START_TASK
    assert plan.steps == ("stack green on red", "stack blue on green")
    assert plan.retrieved_skills == ("stack green on red", "stack blue on green")
    assert not plan.discarded
    assert plan.proposal_reasoning
    assert plan.decomposition_reasoning
    assert len(plan.retrieval_reasonings) == 2
    # one proposition, one decomposition, one retrieval per step
    assert curriculum.calls_made == 4


def test_outcomes_feed_the_next_proposal():
    curriculum = make_curriculum()
    plan = curriculum.next_plan(SCENE)
    curriculum.record_outcome(plan, success=True)
    follow_up = curriculum.next_plan(SCENE)
    assert follow_up.proposal == "stack the red object on top of the green object"
    assert follow_up.retrieved_skills == ("stack red on green",)
    assert follow_up.plan_id == 1


def test_prompts_receive_expanded_history():
    captured = {}

    class SpyBackend(ScriptedBackend):
        def complete(self, bundle, *, temperature=0.0, call_index=0):
            if bundle.kind == "proposition":
                captured["successes"] = list(bundle.slots["successful_trials"])
                captured["failures"] = list(bundle.slots["failed_trials"])
            return super().complete(
                bundle, temperature=temperature, call_index=call_index
            )

    curriculum = Curriculum(converged_base(), SpyBackend(seed=0))
    plan = curriculum.next_plan(SCENE)
    for _ in range(3):
        curriculum.record_outcome(plan, success=True)
    curriculum.record_outcome(plan, success=False)
    curriculum.next_plan(SCENE)
    assert captured["successes"] == [plan.proposal] * 3
    assert captured["failures"] == [plan.proposal]


# ---------------------------------------------------------------------------
# Discards


def seed_history_through(curriculum, tasks):
    for task in tasks:
        curriculum.history.record(task, success=True)


def test_unmatched_steps_discard_the_plan():
    curriculum = make_curriculum()
    pool = proposal_pool()
    seed_history_through(curriculum, [t for t in pool if "next to" not in t])
    plan = curriculum.build_plan(SCENE)
    assert plan.discarded
    assert "no skill matches step" in plan.discard_reason
    assert plan.proposal == "put the red object next to the green object"
    assert plan.retrieved_skills == ()


def test_next_plan_records_discards_and_moves_on():
    curriculum = make_curriculum()
    pool = proposal_pool()
    attempted = [t for t in pool if "next to" not in t]
    seed_history_through(curriculum, attempted)
    for task in attempted:
        if "pyramid" in task or "tower" in task:
            curriculum.history.record(task, success=False)
    plan = curriculum.next_plan(SCENE)
    assert not plan.discarded
    assert "pyramid" in plan.proposal or "tower" in plan.proposal
    assert len(curriculum.discards) == 3
    line_failures = [
        record for record in curriculum.history.records() if "next to" in record.task
    ]
    assert [r.failures for r in line_failures] == [1, 1, 1]
    assert curriculum.rejections == []


def test_endless_discards_abort_the_round():
    class StubbornBackend(ScriptedBackend):
        def complete(self, bundle, *, temperature=0.0, call_index=0):
            if bundle.kind == "proposition":
                return gateway.render_response("again", "fold the towel")
            return super().complete(
                bundle, temperature=temperature, call_index=call_index
            )

    curriculum = Curriculum(
        converged_base(), StubbornBackend(seed=0), max_consecutive_discards=4
    )
    with pytest.raises(PlanningError, match="4 consecutive"):
        curriculum.next_plan(SCENE)
    record = curriculum.history.records()[0]
    assert record == TrialRecord("fold the towel", 0, 4)


def test_hallucinated_retrieval_answer_discards():
    class HallucinatingBackend(ScriptedBackend):
        def complete(self, bundle, *, temperature=0.0, call_index=0):
            if bundle.kind == "retrieval":
                return gateway.render_response("sure", "levitate the red object")
            return super().complete(
                bundle, temperature=temperature, call_index=call_index
            )

    curriculum = Curriculum(converged_base(), HallucinatingBackend(seed=0))
    plan = curriculum.build_plan(SCENE)
    assert plan.discarded
    assert "not an available skill" in plan.discard_reason


def test_empty_decomposition_discards():
    class EmptyBackend(ScriptedBackend):
        def complete(self, bundle, *, temperature=0.0, call_index=0):
            if bundle.kind == "decomposition":
                return gateway.render_response("nothing to do", [])
            return super().complete(
                bundle, temperature=temperature, call_index=call_index
            )

    plan = Curriculum(converged_base(), EmptyBackend(seed=0)).build_plan(SCENE)
    assert plan.discarded
    assert plan.discard_reason == "decomposition produced no steps"


# ---------------------------------------------------------------------------
# Malformed completions


class FlakyBackend(ScriptedBackend):
    """Returns garbage for the first ``bad_calls`` completions of a kind."""

    def __init__(self, seed=0, bad_kind="proposition", bad_calls=1, garbage="static"):
        super().__init__(seed=seed)
        self.bad_kind = bad_kind
        self.remaining = bad_calls
        self.garbage = garbage

    def complete(self, bundle, *, temperature=0.0, call_index=0):
        if bundle.kind == self.bad_kind and self.remaining > 0:
            self.remaining -= 1
            return self.garbage
        return super().complete(bundle, temperature=temperature, call_index=call_index)


def test_parse_failures_retry_and_log_rejections():
    backend = FlakyBackend(bad_kind="proposition", bad_calls=2)
    curriculum = Curriculum(converged_base(), backend)
    plan = curriculum.next_plan(SCENE)
    assert not plan.discarded
    assert [r.kind for r in curriculum.rejections] == ["proposition", "proposition"]
    assert curriculum.history.records() == []
    assert curriculum.calls_made == 6


def test_prose_list_answer_is_rejected_then_retried():
    prose = gateway.render_response(
        "All three objects are on the bottom of the basket, so stack them",
        "All three objects are on the bottom of the basket",
    )
    backend = FlakyBackend(bad_kind="decomposition", bad_calls=1, garbage=prose)
    curriculum = Curriculum(converged_base(), backend)
    plan = curriculum.next_plan(SCENE)
    assert not plan.discarded
    assert [r.kind for r in curriculum.rejections] == ["decomposition"]
    assert "bracketed list" in curriculum.rejections[0].error


def test_persistent_parse_failures_raise():
    backend = FlakyBackend(bad_kind="proposition", bad_calls=99)
    curriculum = Curriculum(converged_base(), backend, max_parse_retries=3)
    with pytest.raises(PlanningError, match="proposition failed to parse 3 times"):
        curriculum.next_plan(SCENE)
    assert len(curriculum.rejections) == 3


# ---------------------------------------------------------------------------
# Plan serialization


def test_plan_round_trip():
    curriculum = make_curriculum()
    plan = curriculum.next_plan(SCENE)
    clone = Plan.from_dict(plan.to_dict())
    assert clone == plan
