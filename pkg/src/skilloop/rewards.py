"""Shaped reward family over world states, plus relabeling and plan judging.

Every reward is a pure function of a single state, clipped to [0, 1].
Distance-shaped terms use 1 - tanh(d / scale) so they peak at 1 exactly on
target and decay smoothly; binary terms come straight from the gripper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from .episodes import Episode, Step
from .world import COLORS, WorldState, XY_CELL_M, Z_CELL_M

__all__ = [
    "DEFAULT_PARAMS",
    "RewardParams",
    "SegmentMismatchError",
    "SuccessCriteria",
    "UnknownRewardError",
    "compute",
    "judge_success",
    "parse_reward_id",
    "relabel",
]


class UnknownRewardError(ValueError):
    """Raised when a reward id does not name a known reward."""


class SegmentMismatchError(ValueError):
    """Raised when an episode's segments do not line up with a plan."""


@dataclass(frozen=True)
class RewardParams:
    distance_scale: float = 0.10      # tanh decay scale, meters
    above_offset: float = 0.10        # hover target height over an object, meters
    place_offset: float = 0.04        # resting height of one cube on another, meters
    lift_floor: float = 0.05          # lift reward is 0 at or below this height
    lift_span: float = 0.05           # and saturates at floor + span


@dataclass(frozen=True)
class SuccessCriteria:
    per_skill: float = 0.5   # strict lower bound for every executed segment
    final: float = 0.95      # strict lower bound for the last segment


DEFAULT_PARAMS = RewardParams()

# family name -> number of color arguments
_ARITY = {
    "open_gripper": 0,
    "close_gripper": 0,
    "grasp_anything": 0,
    "reach": 1,
    "above": 1,
    "lift": 1,
    "place": 2,
    "stack": 2,
    "triple_stack": 3,
    "pyramid": 3,
    "inverse_pyramid": 3,
}
_FAMILIES = sorted(_ARITY, key=len, reverse=True)


def parse_reward_id(reward_id: str) -> tuple[str, tuple[str, ...]]:
    for family in _FAMILIES:
        if reward_id == family:
            colors: tuple[str, ...] = ()
        elif reward_id.startswith(family + "_"):
            colors = tuple(reward_id[len(family) + 1 :].split("_"))
        else:
            continue
        if len(colors) != _ARITY[family]:
            continue
        if any(c not in COLORS for c in colors):
            continue
        if len(set(colors)) != len(colors):
            raise UnknownRewardError(f"repeated color in reward id: {reward_id!r}")
        return family, colors
    raise UnknownRewardError(f"unknown reward id: {reward_id!r}")


def _delta_m(a: tuple[int, int, int], b: tuple[int, int, int], dz_extra: float) -> float:
    dx = (a[0] - b[0]) * XY_CELL_M
    dy = (a[1] - b[1]) * XY_CELL_M
    dz = (a[2] - b[2]) * Z_CELL_M - dz_extra
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def _shaped(distance: float, scale: float) -> float:
    return 1.0 - math.tanh(distance / scale)


def _clip(value: float) -> float:
    return min(1.0, max(0.0, value))


def compute(reward_id: str, state: WorldState, params: RewardParams = DEFAULT_PARAMS) -> float:
    family, colors = parse_reward_id(reward_id)

    if family == "open_gripper":
        return _clip(state.aperture)
    if family == "close_gripper":
        return _clip(1.0 - state.aperture)
    if family == "grasp_anything":
        return 1.0 if state.grasp_sensor else 0.0
    if family == "reach":
        d = _delta_m(state.tcp, state.objects[colors[0]], 0.0)
        return _clip(_shaped(d, params.distance_scale))
    if family == "above":
        d = _delta_m(state.tcp, state.objects[colors[0]], params.above_offset)
        return _clip(_shaped(d, params.distance_scale))
    if family == "lift":
        z = state.objects[colors[0]][2] * Z_CELL_M
        return _clip((z - params.lift_floor) / params.lift_span)
    if family == "place":
        d = _delta_m(state.objects[colors[0]], state.objects[colors[1]], params.place_offset)
        return _clip(_shaped(d, params.distance_scale))
    if family == "stack":
        if state.grasp_sensor:
            return 0.0
        return compute(f"place_{colors[0]}_{colors[1]}", state, params)
    if family == "triple_stack":
        x, y, z = colors
        return _clip(
            compute(f"stack_{x}_{y}", state, params) * compute(f"stack_{y}_{z}", state, params)
        )
    if family == "pyramid":
        x, y, z = colors
        return _clip(
            compute(f"stack_{x}_{y}", state, params) * compute(f"stack_{x}_{z}", state, params)
        )
    # inverse_pyramid: x and z rest on y
    x, y, z = colors
    return _clip(
        compute(f"stack_{x}_{y}", state, params) * compute(f"stack_{z}_{y}", state, params)
    )


def _channel_map(library) -> dict[str, str]:
    if hasattr(library, "channel_map"):
        return library.channel_map()
    if isinstance(library, Mapping):
        return dict(library)
    raise TypeError(f"cannot derive caption -> reward id map from {type(library)!r}")


def relabel(episode: Episode, library, params: RewardParams = DEFAULT_PARAMS) -> Episode:
    """Return a copy of the episode carrying one reward channel per library skill.

    Existing channels are kept as-is, so relabeling is idempotent and never
    rewrites history; only missing captions are computed from the stored states.
    """
    channels = _channel_map(library)
    for reward_id in channels.values():
        parse_reward_id(reward_id)  # unknown ids fail before any work is done
    steps = []
    for s in episode.steps:
        rewards = dict(s.rewards)
        for caption, reward_id in channels.items():
            if caption not in rewards:
                rewards[caption] = compute(reward_id, s.state, params)
        steps.append(Step(state=s.state, action=s.action, rewards=rewards))
    return Episode(
        episode_id=episode.episode_id,
        seed=episode.seed,
        source=episode.source,
        success=episode.success,
        initial_state=episode.initial_state,
        segments=list(episode.segments),
        steps=steps,
    )


def judge_success(
    episode: Episode,
    plan,
    criteria: SuccessCriteria = SuccessCriteria(),
) -> tuple[bool, dict[str, float]]:
    """Score an executed plan: every segment-final reward must clear the
    per-skill bar and the last segment the (stricter) final bar.

    ``plan`` is either a caption sequence or an object with retrieved_skills.
    """
    captions: Sequence[str] = getattr(plan, "retrieved_skills", plan)
    seg_captions = [seg.caption for seg in episode.segments]
    if list(captions) != seg_captions:
        raise SegmentMismatchError(
            f"plan captions {list(captions)!r} do not match segments {seg_captions!r}"
        )
    finals: dict[str, float] = {}
    ok = True
    for i, seg in enumerate(episode.segments):
        if not (0 < seg.end <= len(episode.steps)) or seg.start >= seg.end:
            raise SegmentMismatchError(f"segment {seg} out of episode range")
        last = episode.steps[seg.end - 1].rewards
        if seg.caption not in last:
            raise SegmentMismatchError(f"no reward channel for segment {seg.caption!r}")
        value = last[seg.caption]
        finals[seg.caption] = value
        bar = criteria.final if i == len(episode.segments) - 1 else criteria.per_skill
        if not value > bar:
            ok = False
    return ok, finals
