"""Skill catalog: captions joined to reward ids, with a one-way converged flag.

Captions are the only key other modules use to refer to skills, so they must
stay verbatim everywhere (plans, reports, reward channels, checkpoints).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path

from .rewards import parse_reward_id
from .world import COLORS

__all__ = [
    "BASE_CAPTIONS",
    "COMPOSITE_CAPTIONS",
    "DuplicateSkillError",
    "HOLD_CAPTIONS",
    "SkillLibrary",
    "SkillSpec",
    "base_library",
    "composite_skills",
    "hold_over_skills",
]


class DuplicateSkillError(ValueError):
    """Raised when a caption is added twice."""


@dataclass
class SkillSpec:
    caption: str
    reward_id: str
    converged: bool = False


@dataclass
class SkillLibrary:
    skills: list[SkillSpec] = field(default_factory=list)

    def __contains__(self, caption: str) -> bool:
        return any(s.caption == caption for s in self.skills)

    def __len__(self) -> int:
        return len(self.skills)

    def captions(self) -> list[str]:
        return [s.caption for s in self.skills]

    def get(self, caption: str) -> SkillSpec:
        for s in self.skills:
            if s.caption == caption:
                return s
        raise KeyError(caption)

    def channel_map(self) -> dict[str, str]:
        return {s.caption: s.reward_id for s in self.skills}

    def available(self, converged_only: bool = False) -> list[str]:
        return [s.caption for s in self.skills if s.converged or not converged_only]

    def add(self, spec: SkillSpec) -> "SkillLibrary":
        if spec.caption in self:
            raise DuplicateSkillError(f"caption already present: {spec.caption!r}")
        parse_reward_id(spec.reward_id)
        self.skills.append(spec)
        return self

    def mark_converged(self, caption: str) -> "SkillLibrary":
        # One-way: a skill is never un-marked.
        self.get(caption).converged = True
        return self

    def subset(self, captions: list[str]) -> "SkillLibrary":
        keep = set(captions)
        return SkillLibrary([SkillSpec(s.caption, s.reward_id, s.converged)
                             for s in self.skills if s.caption in keep])

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for s in self.skills:
                rec = {"caption": s.caption, "reward_id": s.reward_id, "converged": s.converged}
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SkillLibrary":
        lib = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                lib.add(
                    SkillSpec(rec["caption"], rec["reward_id"], bool(rec.get("converged", False)))
                )
        return lib


def _color_pairs() -> list[tuple[str, str]]:
    return [(a, b) for a in COLORS for b in COLORS if a != b]


def _caption_table() -> list[tuple[str, str]]:
    rows: list[tuple[str, str]] = [
        ("grasp anything", "grasp_anything"),
        ("open gripper", "open_gripper"),
        ("close gripper", "close_gripper"),
    ]
    rows += [(f"reach {c}", f"reach_{c}") for c in COLORS]
    rows += [(f"above {c}", f"above_{c}") for c in COLORS]
    rows += [(f"lift {c}", f"lift_{c}") for c in COLORS]
    rows += [(f"stack {a} on {b}", f"stack_{a}_{b}") for a, b in _color_pairs()]
    return rows


BASE_CAPTIONS = [caption for caption, _ in _caption_table()]

HOLD_CAPTIONS = [f"hold {a} over {b}" for a, b in _color_pairs()]


def _composite_table() -> list[tuple[str, str]]:
    rows: list[tuple[str, str]] = []
    # top x rests on y which rests on z
    for x, y, z in permutations(COLORS):
        rows.append((f"stack {y} on {z} and {x} on {y}", f"triple_stack_{x}_{y}_{z}"))
    # x bridges over y and z
    for x, y, z in permutations(COLORS):
        rows.append(
            (f"build a pyramid with {x} on top and {y} and {z} at the bottom",
             f"pyramid_{x}_{y}_{z}")
        )
    # x and z rest on y
    for x, y, z in permutations(COLORS):
        rows.append(
            (f"build an inverted pyramid with {x} and {z} at the top and {y} at the bottom",
             f"inverse_pyramid_{x}_{y}_{z}")
        )
    return rows


COMPOSITE_CAPTIONS = [caption for caption, _ in _composite_table()]


def base_library(converged: bool = False) -> SkillLibrary:
    """The 18 starting skills: gripper primitives, per-color reach/above/lift,
    and the six two-object stacks."""
    lib = SkillLibrary()
    for caption, reward_id in _caption_table():
        lib.add(SkillSpec(caption, reward_id, converged))
    return lib


def hold_over_skills() -> list[SkillSpec]:
    """Holding one object at the resting point over another (grasped place)."""
    return [
        SkillSpec(f"hold {a} over {b}", f"place_{a}_{b}") for a, b in _color_pairs()
    ]


def composite_skills() -> list[SkillSpec]:
    """The 18 multi-object structures: towers, pyramids, inverted pyramids."""
    return [SkillSpec(caption, reward_id) for caption, reward_id in _composite_table()]
