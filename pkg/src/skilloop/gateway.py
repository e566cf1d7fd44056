"""Prompt assembly, transport, and response parsing for the planner.

The planner talks to a text-completion backend through four prompt kinds:
task proposition, task decomposition, skill retrieval, and convergence
analysis. The wording of instructions, few-shot exemplars, and slot layouts
lives in package data files (``prompts/``) so that every backend, including
the scripted one used for offline runs, sees exactly the same prompts.

A completion is expected to contain a free-form reasoning block followed by
a final answer line::

    Reasoning: <why>.
    A: <answer>.

``parse`` recovers the two fields, ``parse_answer_list`` additionally
interprets a bracketed answer such as ``[above green, close gripper]``.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Mapping, Protocol, Sequence, runtime_checkable

import requests

PROMPT_KINDS = ("proposition", "decomposition", "retrieval", "analysis")

_REASONING_PREFIX = "Reasoning:"
_ANSWER_PREFIX = "A:"


class MissingSlotError(KeyError):
    """A prompt template slot has no value in the supplied mapping."""


class ParseError(ValueError):
    """A completion does not follow the reasoning/answer response format."""


class TransportError(RuntimeError):
    """The completion endpoint could not produce a response."""


# ---------------------------------------------------------------------------
# Template data


def _data(name: str) -> str:
    return (
        resources.files(__package__)
        .joinpath("prompts", name)
        .read_text(encoding="utf-8")
    )


@lru_cache(maxsize=1)
def load_templates() -> dict:
    """Slot layouts and the shared response format, keyed by prompt kind."""
    return json.loads(_data("templates.json"))


@lru_cache(maxsize=1)
def _exemplar_data() -> dict:
    return json.loads(_data("exemplars.json"))


def load_exemplars(kind: str) -> list[dict]:
    """Default few-shot exemplars for ``kind``, as slot mappings."""
    return [dict(shot) for shot in _exemplar_data()[kind]]


def render_value(value: object) -> str:
    """Render a slot value: strings pass through, sequences become ``[a, b]``."""
    if isinstance(value, str):
        return value
    if isinstance(value, Sequence):
        return "[" + ", ".join(render_value(item) for item in value) + "]"
    return str(value)


class _SlotMap(dict):
    def __missing__(self, key: str) -> str:
        raise MissingSlotError(key)


def _fill(template: str, values: Mapping[str, object]) -> str:
    rendered = _SlotMap({key: render_value(val) for key, val in values.items()})
    return template.format_map(rendered)


# ---------------------------------------------------------------------------
# Prompt bundles


@dataclass(frozen=True)
class PromptBundle:
    """One fully rendered prompt plus the raw slot values that produced it.

    ``text()`` is what a remote completion model receives. ``slots`` keeps
    the pre-render values (candidate lists, curve points, ...) so scripted
    backends can answer without re-parsing prose.
    """

    kind: str
    instruction: str
    exemplars: tuple[str, ...]
    evaluation: str
    slots: Mapping[str, object] = field(default_factory=dict)

    def text(self) -> str:
        return "\n\n".join((self.instruction, *self.exemplars, self.evaluation))


def assemble(
    kind: str,
    evaluation: Mapping[str, object],
    exemplars: Sequence[Mapping[str, object]] | None = None,
) -> PromptBundle:
    """Build the prompt for ``kind`` around the evaluation slot values.

    Raises MissingSlotError if a required evaluation slot is absent; extra
    keys are carried along in ``slots`` but not rendered.
    """
    if kind not in PROMPT_KINDS:
        raise KeyError(f"unknown prompt kind {kind!r}")
    spec = load_templates()[kind]
    missing = sorted(set(spec["evaluation_slots"]) - set(evaluation))
    if missing:
        raise MissingSlotError(f"{kind} prompt is missing slots: {', '.join(missing)}")
    if exemplars is None:
        exemplars = load_exemplars(kind)
    instruction = _data(spec["instruction_file"]).strip()
    shots = tuple(_fill(spec["exemplar_format"], shot) for shot in exemplars)
    rendered = _fill(spec["evaluation_format"], evaluation)
    return PromptBundle(
        kind=kind,
        instruction=instruction,
        exemplars=shots,
        evaluation=rendered,
        slots=dict(evaluation),
    )


def render_response(reasoning: str, answer: object) -> str:
    """Format a reasoning/answer pair the way completions are expected to."""
    template = load_templates()["response_format"]
    return template.format(reasoning=reasoning, answer=render_value(answer))


# ---------------------------------------------------------------------------
# Response parsing


@dataclass(frozen=True)
class ParsedResponse:
    reasoning: str
    answer: str


def _strip_period(text: str) -> str:
    return text[:-1].rstrip() if text.endswith(".") else text


def parse(text: str) -> ParsedResponse:
    """Extract the reasoning block and final answer from a completion.

    The answer is the last line starting with ``A:``; the reasoning is the
    last ``Reasoning:`` block before it and may span multiple lines. One
    trailing period is stripped from each field. Raises ParseError when
    either field is missing or empty.
    """
    lines = text.splitlines()
    answer_index = None
    for index in range(len(lines) - 1, -1, -1):
        if lines[index].strip().startswith(_ANSWER_PREFIX):
            answer_index = index
            break
    if answer_index is None:
        raise ParseError("completion has no 'A:' answer line")
    answer_body = lines[answer_index].strip()[len(_ANSWER_PREFIX) :]
    answer = _strip_period(answer_body.strip())
    reasoning_index = None
    for index in range(answer_index - 1, -1, -1):
        if lines[index].strip().startswith(_REASONING_PREFIX):
            reasoning_index = index
            break
    if reasoning_index is None:
        raise ParseError("completion has no 'Reasoning:' block before the answer")
    block = [lines[reasoning_index].strip()[len(_REASONING_PREFIX) :].strip()]
    block.extend(line.strip() for line in lines[reasoning_index + 1 : answer_index])
    reasoning = _strip_period("\n".join(block).strip())
    if not answer:
        raise ParseError("completion has an empty answer")
    if not reasoning:
        raise ParseError("completion has an empty reasoning block")
    return ParsedResponse(reasoning=reasoning, answer=answer)


def parse_answer_list(answer: str) -> list[str]:
    """Interpret an answer as a bracketed, comma-separated list of items.

    Answers that are not wrapped in brackets raise ParseError, including the
    common failure where scene prose leaks into the answer field.
    """
    text = answer.strip()
    if not (text.startswith("[") and text.endswith("]")):
        raise ParseError(f"expected a bracketed list answer, got {answer!r}")
    inner = text[1:-1].strip()
    if not inner:
        return []
    return [item.strip() for item in inner.split(",")]


# ---------------------------------------------------------------------------
# Backends


@runtime_checkable
class Backend(Protocol):
    """Anything that can turn a prompt bundle into completion text."""

    def complete(
        self, bundle: PromptBundle, *, temperature: float = 0.0, call_index: int = 0
    ) -> str: ...


@dataclass
class RemoteBackend:
    """HTTP completion endpoint speaking a small JSON contract.

    POSTs ``{"model", "prompt", "temperature", "call_index"}`` and expects
    ``{"completion": "..."}`` back. Transient failures are retried with
    exponential backoff before raising TransportError.
    """

    url: str
    model: str = "default"
    timeout: float = 60.0
    max_attempts: int = 3
    backoff: float = 0.5

    def complete(
        self, bundle: PromptBundle, *, temperature: float = 0.0, call_index: int = 0
    ) -> str:
        payload = {
            "model": self.model,
            "prompt": bundle.text(),
            "temperature": temperature,
            "call_index": call_index,
        }
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                response = requests.post(self.url, json=payload, timeout=self.timeout)
                response.raise_for_status()
                return str(response.json()["completion"])
            except (requests.RequestException, KeyError, ValueError) as error:
                last_error = error
                if attempt + 1 < self.max_attempts:
                    time.sleep(self.backoff * (2**attempt))
        raise TransportError(
            f"completion request to {self.url} failed "
            f"after {self.max_attempts} attempts: {last_error}"
        )


def complete(
    backend: Backend,
    kind: str,
    evaluation: Mapping[str, object],
    *,
    exemplars: Sequence[Mapping[str, object]] | None = None,
    temperature: float = 0.0,
    call_index: int = 0,
) -> ParsedResponse:
    """Assemble the prompt, run the backend, and parse the completion."""
    bundle = assemble(kind, evaluation, exemplars=exemplars)
    raw = backend.complete(bundle, temperature=temperature, call_index=call_index)
    return parse(raw)
