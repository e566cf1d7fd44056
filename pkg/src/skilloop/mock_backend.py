"""Deterministic scripted stand-in for the completion model.

``ScriptedBackend`` answers the four planner prompt kinds from the raw slot
values carried on each prompt bundle, formatted exactly like a remote model
would (reasoning block plus final answer line). Its behaviour is a pure
function of the constructor seed, the call index, and the prompt contents,
so whole improvement runs replay byte-for-byte.

Policies:

* proposition: walk a fixed pool of structure-building tasks (two-block
  stacks, three-level towers, pyramids, lines), proposing the first task not
  yet attempted; when everything has been tried, re-propose the most-failed
  task for practice. With a positive temperature the choice is sampled from
  the top few candidates instead of the first.
* decomposition: rewrite a task into steps the available skills can cover,
  preferring a single composite skill, then two-step stack plans, then raw
  gripper motions.
* retrieval: lexical match of the query against library captions with a
  color-sequence gate; answers ``none`` when nothing scores high enough.
* analysis: delegate to the deterministic curve heuristic.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from . import analysis, gateway
from .world import COLORS

_COLOR = "(red|green|blue)"

_TOWER_RE = re.compile(
    rf"^build a three-level tower with {_COLOR} on top of {_COLOR} on top of {_COLOR}$"
)
_PYRAMID_RE = re.compile(
    rf"^build a pyramid with {_COLOR} on top and {_COLOR} and {_COLOR} at the bottom$"
)
_PUT_BESIDE_RE = re.compile(rf"^put the {_COLOR} object next to the {_COLOR} object$")
_LINE_RE = re.compile(r"^build a line with ")
_PAIR_BESIDE_RE = re.compile(rf"the {_COLOR} object next to the {_COLOR} object")
_STACK_LONG_RE = re.compile(rf"^stack the {_COLOR} object on top of the {_COLOR} object$")
_STACK_SHORT_RE = re.compile(rf"^stack {_COLOR} on {_COLOR}$")
_GRASP_RE = re.compile(rf"^grasp (?:the )?{_COLOR}(?: object)?$")
_LIFT_RE = re.compile(rf"^lift (?:the )?{_COLOR}(?: object)?(?: up)?$")


def proposal_pool() -> list[str]:
    """Candidate tasks in a fixed exploration order."""
    pool = [
        f"stack the {a} object on top of the {b} object"
        for a in COLORS
        for b in COLORS
        if a != b
    ]
    pool += [
        f"build a three-level tower with {top} on top of {mid} on top of {low}"
        for top, mid, low in permutations(("blue", "green", "red"))
    ]
    pool += [
        f"build a pyramid with {top} on top and {left} and {right} at the bottom"
        for top, left, right in permutations(COLORS)
    ]
    pool += [
        f"put the {a} object next to the {b} object"
        for a, b in (("red", "green"), ("green", "blue"), ("red", "blue"))
    ]
    return pool


COLD_START_TASK = "build a three-level tower with blue on top of green on top of red"


# ---------------------------------------------------------------------------
# Retrieval scoring

_STOPWORDS = frozenset(
    {
        "the", "a", "an", "object", "objects", "one", "ones", "it", "its",
        "is", "are", "to", "of", "with", "at", "and", "or", "then", "up",
        "by", "can", "robot", "i", "you", "that", "this", "please",
    }
)


def normalize_caption(text: str) -> list[str]:
    """Tokenize a caption for lexical matching.

    Collapses the common phrasings ("on top of" vs "on", "next to" vs
    "beside"), strips punctuation and filler words, and treats "reach above"
    as the spatial relation "above".
    """
    text = text.lower()
    text = text.replace("on top of", "on")
    text = text.replace("next to", "beside")
    text = re.sub(r"[^\w\s]", " ", text)
    tokens = [tok for tok in text.split() if tok not in _STOPWORDS]
    if "above" in tokens and "reach" in tokens:
        tokens = [tok for tok in tokens if tok != "reach"]
    return tokens


def _color_sequence(tokens: list[str]) -> tuple[str, ...]:
    return tuple(tok for tok in tokens if tok in COLORS)


def score_match(query: str, caption: str) -> float:
    """Token Jaccard similarity, zeroed when the color sequences differ."""
    query_tokens = normalize_caption(query)
    caption_tokens = normalize_caption(caption)
    if _color_sequence(query_tokens) != _color_sequence(caption_tokens):
        return 0.0
    query_set, caption_set = set(query_tokens), set(caption_tokens)
    union = query_set | caption_set
    if not union:
        return 0.0
    return len(query_set & caption_set) / len(union)


def retrieve(query: str, captions: list[str], threshold: float = 0.5) -> str | None:
    """Best-scoring caption at or above the threshold; ties keep library order."""
    best_caption, best_score = None, 0.0
    for caption in captions:
        score = score_match(query, caption)
        if score >= threshold and score > best_score:
            best_caption, best_score = caption, score
    return best_caption


# ---------------------------------------------------------------------------
# Decomposition


def _grab_release(mover: str, base: str) -> list[str]:
    return [f"above {mover}", "close gripper", f"above {base}", "open gripper"]


def decompose(
    task: str,
    available: list[str],
    *,
    temperature: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[list[str], str]:
    """Rewrite ``task`` into executable steps, returning (steps, reasoning)."""
    skills = set(available)

    def stacks_known(*pairs: tuple[str, str]) -> bool:
        return all(f"stack {a} on {b}" in skills for a, b in pairs)

    match = _TOWER_RE.match(task)
    if match:
        top, mid, low = match.groups()
        composite = f"stack {mid} on {low} and {top} on {mid}"
        if composite in skills:
            return [composite], (
                f"One available skill already builds {mid} on {low} and then "
                f"{top} on {mid}, which is exactly this tower"
            )
        if stacks_known((mid, low), (top, mid)):
            expanded = (
                temperature > 0.0
                and rng is not None
                and float(rng.random()) < temperature
            )
            if expanded:
                return _grab_release(mid, low) + _grab_release(top, mid), (
                    f"Neither stack is certain, so spell out each one: carry "
                    f"{mid} over {low}, drop it, then carry {top} over {mid}"
                )
            return [f"stack {mid} on {low}", f"stack {top} on {mid}"], (
                f"A tower is two stacks: first {mid} on {low}, then {top} on {mid}"
            )
        return _grab_release(mid, low) + _grab_release(top, mid), (
            "No stacking skill is available, so move each block with raw "
            "gripper motions"
        )

    match = _PYRAMID_RE.match(task)
    if match:
        top, left, right = match.groups()
        composite = f"build a pyramid with {top} on top and {left} and {right} at the bottom"
        if composite in skills:
            return [composite], "One available skill builds this pyramid directly"
        if stacks_known((top, left), (top, right)):
            return [f"stack {top} on {left}", f"stack {top} on {right}"], (
                f"Rest {top} on {left} first, then work it across toward "
                f"{right} so it bridges both"
            )
        return _grab_release(top, left), (
            f"Without stacking skills, carry {top} over {left} and release it"
        )

    if _LINE_RE.match(task):
        pairs = _PAIR_BESIDE_RE.findall(task)
        steps = [f"put the {a} object next to the {b} object" for a, b in pairs]
        return steps, "Place each pair side by side to form the line"

    match = _PUT_BESIDE_RE.match(task)
    if match:
        return [task], "Placing one block beside another is already a single motion"

    match = _STACK_LONG_RE.match(task) or _STACK_SHORT_RE.match(task)
    if match:
        mover, base = match.groups()
        if f"stack {mover} on {base}" in skills:
            return [f"stack {mover} on {base}"], (
                f"The library already stacks {mover} on {base}"
            )
        return _grab_release(mover, base), (
            f"No stacking skill yet, so grab {mover}, carry it over {base}, "
            "and let go"
        )

    match = _GRASP_RE.match(task)
    if match:
        color = match.group(1)
        return [f"above {color}", "close gripper"], (
            f"Move the gripper above the {color} block, then close it"
        )

    match = _LIFT_RE.match(task)
    if match:
        color = match.group(1)
        return [f"lift {color}"], f"Lifting the {color} block is a known motion"

    return [task], "The task is not recognised, so pass it through unchanged"


# ---------------------------------------------------------------------------
# Proposition


def propose(
    successes: list[str],
    failures: list[str],
    *,
    temperature: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[str, str]:
    """Pick the next task to attempt, returning (task, reasoning)."""
    if not successes and not failures:
        return COLD_START_TASK, (
            "Nothing has been attempted yet; a three-level tower is the most "
            "interesting structure the three blocks allow"
        )
    pool = proposal_pool()
    attempted = set(successes) | set(failures)
    fresh = [task for task in pool if task not in attempted]
    if fresh:
        candidates = fresh
        reason = (
            f"{len(attempted)} structures have been attempted; "
            "try one that has not been built yet"
        )
    else:
        failure_counts = Counter(failures)
        if failure_counts:
            top = max(failure_counts.values())
            candidates = [task for task in pool if failure_counts[task] == top]
            reason = (
                f"Every structure has been attempted; the most-failed one "
                f"({top} failures) needs practice"
            )
        else:
            success_counts = Counter(successes)
            low = min(success_counts[task] for task in pool)
            candidates = [task for task in pool if success_counts[task] == low]
            reason = "Every structure succeeds; revisit the least-practiced one"
    if temperature > 0.0 and rng is not None and len(candidates) > 1:
        choice = candidates[int(rng.integers(min(3, len(candidates))))]
    else:
        choice = candidates[0]
    return choice, reason


# ---------------------------------------------------------------------------
# Backend


@dataclass
class ScriptedBackend:
    """Planner backend with fully deterministic, replayable behaviour."""

    seed: int = 0
    calls: list[tuple[str, int]] = field(default_factory=list, repr=False)

    def complete(
        self,
        bundle: gateway.PromptBundle,
        *,
        temperature: float = 0.0,
        call_index: int = 0,
    ) -> str:
        self.calls.append((bundle.kind, call_index))
        rng = np.random.default_rng((self.seed, call_index))
        slots = bundle.slots
        if bundle.kind == "proposition":
            task, reasoning = propose(
                list(slots["successful_trials"]),
                list(slots["failed_trials"]),
                temperature=temperature,
                rng=rng,
            )
            return gateway.render_response(reasoning, task)
        if bundle.kind == "decomposition":
            steps, reasoning = decompose(
                str(slots["task"]),
                list(slots["available_skills"]),
                temperature=temperature,
                rng=rng,
            )
            return gateway.render_response(reasoning, steps)
        if bundle.kind == "retrieval":
            captions = [str(c) for c in slots["available_skills"]]
            found = retrieve(str(slots["query_skill"]), captions)
            if found is None:
                return gateway.render_response(
                    "No library skill describes this configuration", "none"
                )
            return gateway.render_response(
                f"Among {len(captions)} skills, {found} matches the query best",
                found,
            )
        if bundle.kind == "analysis":
            judgment = analysis.judge_heuristic(slots["curve_points"])
            return gateway.render_response(
                judgment.reason, "YES" if judgment.converged else "NO"
            )
        raise ValueError(f"unsupported prompt kind {bundle.kind!r}")
