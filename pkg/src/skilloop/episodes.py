"""Episode records: per-step state snapshots, actions, and named reward channels."""

from __future__ import annotations

from dataclasses import dataclass, field

from .world import Cell, WorldState

__all__ = ["Episode", "Segment", "Step", "episode_from_dict", "episode_to_dict"]


@dataclass(frozen=True)
class Segment:
    caption: str
    start: int
    end: int  # exclusive step index


@dataclass
class Step:
    state: WorldState  # state after the action was applied
    action: int
    rewards: dict[str, float] = field(default_factory=dict)


@dataclass
class Episode:
    episode_id: str
    seed: int
    source: str
    success: bool
    initial_state: WorldState
    segments: list[Segment]
    steps: list[Step]

    def __len__(self) -> int:
        return len(self.steps)

    def transitions(self):
        """Yield (state_before, action, rewards, state_after) tuples."""
        prev = self.initial_state
        for s in self.steps:
            yield prev, s.action, s.rewards, s.state
            prev = s.state


def _state_to_dict(state: WorldState) -> dict:
    return {
        "o": {color: list(cell) for color, cell in state.objects.items()},
        "t": list(state.tcp),
        "ap": state.aperture,
        "h": state.held,
    }


def _state_from_dict(d: dict) -> WorldState:
    def cell(v) -> Cell:
        return (int(v[0]), int(v[1]), int(v[2]))

    held = d["h"]
    return WorldState(
        objects={color: cell(v) for color, v in d["o"].items()},
        tcp=cell(d["t"]),
        aperture=float(d["ap"]),
        grasp_sensor=held is not None,
        held=held,
    )


def episode_to_dict(ep: Episode) -> dict:
    return {
        "id": ep.episode_id,
        "seed": ep.seed,
        "source": ep.source,
        "success": ep.success,
        "init": _state_to_dict(ep.initial_state),
        "segments": [[seg.caption, seg.start, seg.end] for seg in ep.segments],
        "steps": [
            {"s": _state_to_dict(s.state), "a": s.action, "r": s.rewards} for s in ep.steps
        ],
    }


def episode_from_dict(d: dict) -> Episode:
    return Episode(
        episode_id=d["id"],
        seed=int(d["seed"]),
        source=d["source"],
        success=bool(d["success"]),
        initial_state=_state_from_dict(d["init"]),
        segments=[Segment(c, int(a), int(b)) for c, a, b in d["segments"]],
        steps=[
            Step(
                state=_state_from_dict(s["s"]),
                action=int(s["a"]),
                rewards={k: float(v) for k, v in s["r"].items()},
            )
            for s in d["steps"]
        ],
    )
