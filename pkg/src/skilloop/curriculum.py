"""Task proposal, decomposition, and retrieval orchestration.

The curriculum drives the planner side of the improvement loop: it asks the
completion backend for a task, breaks the task into steps, and grounds each
step in an executable skill from the library. A plan whose steps cannot all
be grounded is discarded, and the discarded proposal is recorded as a failed
trial so the proposer moves on instead of re-proposing it forever.

Malformed completions are retried a bounded number of times and logged as
rejections; they never enter the trial history, which only tracks tasks that
were actually attempted or discarded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from . import gateway
from .skills import SkillLibrary

NO_MATCH_ANSWER = "none"


class PlanningError(RuntimeError):
    """The planner cannot make progress (persistent parse failures or discards)."""


@dataclass(frozen=True)
class TrialRecord:
    task: str
    successes: int = 0
    failures: int = 0


class History:
    """Per-task outcome counts, in first-attempt order.

    Prompts receive the expanded form (one entry per trial); reports use the
    compact ``task (xN)`` form.
    """

    def __init__(self) -> None:
        self._counts: dict[str, list[int]] = {}

    def record(self, task: str, success: bool) -> None:
        counts = self._counts.setdefault(task, [0, 0])
        counts[0 if success else 1] += 1

    def attempted(self, task: str) -> bool:
        return task in self._counts

    def records(self) -> list[TrialRecord]:
        return [
            TrialRecord(task, successes, failures)
            for task, (successes, failures) in self._counts.items()
        ]

    def successes_expanded(self) -> list[str]:
        return [t for t, (s, _) in self._counts.items() for _ in range(s)]

    def failures_expanded(self) -> list[str]:
        return [t for t, (_, f) in self._counts.items() for _ in range(f)]

    @staticmethod
    def _display(task: str, count: int) -> str:
        return task if count == 1 else f"{task} (x{count})"

    def successes_display(self) -> list[str]:
        return [self._display(t, s) for t, (s, _) in self._counts.items() if s]

    def failures_display(self) -> list[str]:
        return [self._display(t, f) for t, (_, f) in self._counts.items() if f]

    def to_dict(self) -> dict:
        return {"records": [[t, s, f] for t, (s, f) in self._counts.items()]}

    @classmethod
    def from_dict(cls, payload: Mapping) -> "History":
        history = cls()
        for task, successes, failures in payload["records"]:
            history._counts[task] = [int(successes), int(failures)]
        return history


@dataclass(frozen=True)
class Plan:
    """A grounded attempt: one proposal, its steps, and the skill per step."""

    plan_id: int
    proposal: str
    steps: tuple[str, ...]
    retrieved_skills: tuple[str, ...]
    proposal_reasoning: str = ""
    decomposition_reasoning: str = ""
    retrieval_reasonings: tuple[str, ...] = ()
    discarded: bool = False
    discard_reason: str = ""

    def to_dict(self) -> dict:
        return {
            "plan_id": self.plan_id,
            "proposal": self.proposal,
            "steps": list(self.steps),
            "retrieved_skills": list(self.retrieved_skills),
            "proposal_reasoning": self.proposal_reasoning,
            "decomposition_reasoning": self.decomposition_reasoning,
            "retrieval_reasonings": list(self.retrieval_reasonings),
            "discarded": self.discarded,
            "discard_reason": self.discard_reason,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "Plan":
        return cls(
            plan_id=int(payload["plan_id"]),
            proposal=str(payload["proposal"]),
            steps=tuple(payload["steps"]),
            retrieved_skills=tuple(payload["retrieved_skills"]),
            proposal_reasoning=str(payload.get("proposal_reasoning", "")),
            decomposition_reasoning=str(payload.get("decomposition_reasoning", "")),
            retrieval_reasonings=tuple(payload.get("retrieval_reasonings", ())),
            discarded=bool(payload.get("discarded", False)),
            discard_reason=str(payload.get("discard_reason", "")),
        )


@dataclass(frozen=True)
class Rejection:
    kind: str
    call_index: int
    error: str


class Curriculum:
    """Builds executable plans from the library and the trial history."""

    def __init__(
        self,
        library: SkillLibrary,
        backend: gateway.Backend,
        *,
        temperature: float = 0.0,
        max_parse_retries: int = 3,
        max_consecutive_discards: int = 10,
    ) -> None:
        self.library = library
        self.backend = backend
        self.temperature = temperature
        self.max_parse_retries = max_parse_retries
        self.max_consecutive_discards = max_consecutive_discards
        self.history = History()
        self.rejections: list[Rejection] = []
        self.discards: list[Plan] = []
        self._call_index = 0
        self._plan_id = 0

    # -- backend plumbing ---------------------------------------------------

    @property
    def calls_made(self) -> int:
        return self._call_index

    def _ask(self, kind: str, evaluation: Mapping[str, object]) -> gateway.ParsedResponse:
        """One backend call with bounded retries on malformed completions."""
        last_error: gateway.ParseError | None = None
        for _ in range(self.max_parse_retries):
            call_index = self._call_index
            self._call_index += 1
            try:
                return gateway.complete(
                    self.backend,
                    kind,
                    evaluation,
                    temperature=self.temperature,
                    call_index=call_index,
                )
            except gateway.ParseError as error:
                last_error = error
                self.rejections.append(Rejection(kind, call_index, str(error)))
        raise PlanningError(
            f"{kind} failed to parse {self.max_parse_retries} times in a row: "
            f"{last_error}"
        )

    def _ask_list(self, kind: str, evaluation: Mapping[str, object]) -> tuple[list[str], str]:
        """Like _ask, but the answer must be a bracketed list."""
        last_error: gateway.ParseError | None = None
        for _ in range(self.max_parse_retries):
            call_index = self._call_index
            self._call_index += 1
            try:
                parsed = gateway.complete(
                    self.backend,
                    kind,
                    evaluation,
                    temperature=self.temperature,
                    call_index=call_index,
                )
                return gateway.parse_answer_list(parsed.answer), parsed.reasoning
            except gateway.ParseError as error:
                last_error = error
                self.rejections.append(Rejection(kind, call_index, str(error)))
        raise PlanningError(
            f"{kind} failed to parse {self.max_parse_retries} times in a row: "
            f"{last_error}"
        )

    # -- planning -----------------------------------------------------------

    def propose(self, scene: str) -> gateway.ParsedResponse:
        return self._ask(
            "proposition",
            {
                "image_observation": scene,
                "successful_trials": self.history.successes_expanded(),
                "failed_trials": self.history.failures_expanded(),
            },
        )

    def decompose(self, task: str, scene: str) -> tuple[list[str], str]:
        return self._ask_list(
            "decomposition",
            {
                "task": task,
                "image_observation": scene,
                "available_skills": self.library.available(converged_only=True),
            },
        )

    def retrieve(self, step: str) -> gateway.ParsedResponse:
        return self._ask(
            "retrieval",
            {
                "query_skill": step,
                "available_skills": self.library.available(converged_only=True),
            },
        )

    def build_plan(self, scene: str) -> Plan:
        """One proposal pipeline; returns a discarded Plan when grounding fails."""
        plan_id = self._plan_id
        self._plan_id += 1
        proposal = self.propose(scene)
        steps, decomposition_reasoning = self.decompose(proposal.answer, scene)

        def discarded(reason: str, skills=(), reasonings=()) -> Plan:
            return Plan(
                plan_id=plan_id,
                proposal=proposal.answer,
                steps=tuple(steps),
                retrieved_skills=tuple(skills),
                proposal_reasoning=proposal.reasoning,
                decomposition_reasoning=decomposition_reasoning,
                retrieval_reasonings=tuple(reasonings),
                discarded=True,
                discard_reason=reason,
            )

        if not steps:
            return discarded("decomposition produced no steps")
        available = set(self.library.available(converged_only=True))
        skills: list[str] = []
        reasonings: list[str] = []
        for step in steps:
            retrieval = self.retrieve(step)
            reasonings.append(retrieval.reasoning)
            if retrieval.answer == NO_MATCH_ANSWER:
                return discarded(f"no skill matches step {step!r}", skills, reasonings)
            if retrieval.answer not in available:
                return discarded(
                    f"retrieval answered {retrieval.answer!r}, which is not an "
                    f"available skill",
                    skills,
                    reasonings,
                )
            skills.append(retrieval.answer)
        return Plan(
            plan_id=plan_id,
            proposal=proposal.answer,
            steps=tuple(steps),
            retrieved_skills=tuple(skills),
            proposal_reasoning=proposal.reasoning,
            decomposition_reasoning=decomposition_reasoning,
            retrieval_reasonings=tuple(reasonings),
        )

    def next_plan(self, scene: str) -> Plan:
        """Build plans until one survives grounding.

        Each discarded proposal is recorded as a failed trial so the proposer
        does not loop on it; a long run of discards aborts the round.
        """
        for _ in range(self.max_consecutive_discards):
            plan = self.build_plan(scene)
            if not plan.discarded:
                return plan
            self.history.record(plan.proposal, success=False)
            self.discards.append(plan)
        raise PlanningError(
            f"{self.max_consecutive_discards} consecutive proposals were "
            "discarded; the proposer cannot find an executable task"
        )

    def record_outcome(self, plan: Plan, success: bool) -> None:
        self.history.record(plan.proposal, success)
