"""Convergence analysis of per-skill learning curves.

A learning curve is a list of ``(learner_step, episode_return)`` points.
``judge_heuristic`` gives a deterministic verdict from the curve shape;
``judge_llm`` asks a completion backend the same question and fails closed
when the response cannot be parsed. ``sweep`` applies a judge across a skill
library, flipping skills to converged exactly once: a skill never leaves the
converged set, so later noisy verdicts cannot shrink the usable library.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import gateway
from .skills import SkillLibrary

Point = Sequence[float]


@dataclass(frozen=True)
class AnalysisConfig:
    """Shape thresholds for the curve heuristic.

    The trailing window is ``window_fraction`` of the curve (at least two
    points). Slopes are measured as fitted rise across that window and
    compared against fractions of ``max_return``, the ceiling of the episode
    return scale.
    """

    min_points: int = 8
    window_fraction: float = 0.25
    flat_rise_fraction: float = 0.02
    level_fraction: float = 0.9
    max_return: float = 400.0

    @property
    def flat_rise(self) -> float:
        return self.flat_rise_fraction * self.max_return


@dataclass(frozen=True)
class ConvergenceJudgment:
    skill: str
    converged: bool
    reason: str
    source: str
    points_seen: int
    deferred: bool = False


def _window_rise(xs: np.ndarray, ys: np.ndarray) -> float:
    """Fitted rise over the window: least-squares slope times the x-span."""
    if xs[-1] == xs[0]:
        return 0.0
    slope = np.polyfit(xs, ys, 1)[0]
    return float(slope * (xs[-1] - xs[0]))


def judge_heuristic(
    points: Sequence[Point], config: AnalysisConfig | None = None, skill: str = ""
) -> ConvergenceJudgment:
    """Deterministic convergence verdict from the curve shape.

    A curve counts as converged when it is flat at its own ceiling, or when
    it peaked before the trailing window and is no longer rising (training
    past its peak has nothing left to gain). Short or still-rising curves
    are not converged.
    """
    config = config or AnalysisConfig()

    def verdict(converged: bool, reason: str) -> ConvergenceJudgment:
        return ConvergenceJudgment(
            skill=skill,
            converged=converged,
            reason=reason,
            source="heuristic",
            points_seen=len(points),
        )

    if len(points) < config.min_points:
        return verdict(False, "curve too short to judge")
    xs = np.asarray([p[0] for p in points], dtype=float)
    ys = np.asarray([p[1] for p in points], dtype=float)
    window = max(2, math.ceil(config.window_fraction * len(points)))
    rise = _window_rise(xs[-window:], ys[-window:])
    flat = abs(rise) < config.flat_rise
    level = float(np.mean(ys[-window:])) >= config.level_fraction * float(np.max(ys))
    rising = rise >= config.flat_rise
    peak_index = int(np.argmax(ys))
    peaked_early = peak_index <= len(points) - 1 - window
    if flat and level:
        return verdict(True, "flat at its ceiling")
    if not rising and peaked_early:
        return verdict(True, "past its peak and no longer improving")
    if rising:
        return verdict(False, "still rising")
    return verdict(False, "unsettled")


def render_curve(points: Sequence[Point], max_return: float = 400.0) -> bytes:
    """Render a learning curve to PNG bytes with a fixed return axis."""
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    figure = plt.figure(figsize=(4.0, 3.0), dpi=100)
    try:
        axes = figure.add_subplot(111)
        axes.plot(xs, ys, color="tab:blue", linewidth=1.5)
        axes.set_xlabel("learner steps")
        axes.set_ylabel("episode return")
        axes.set_ylim(0.0, max_return)
        figure.tight_layout()
        buffer = io.BytesIO()
        figure.savefig(buffer, format="png", metadata={"Software": "skilloop"})
        return buffer.getvalue()
    finally:
        plt.close(figure)


def judge_llm(
    backend: gateway.Backend,
    points: Sequence[Point],
    *,
    skill: str = "",
    temperature: float = 0.0,
    call_index: int = 0,
) -> ConvergenceJudgment:
    """Ask a completion backend for a convergence verdict.

    Fails closed: a response that cannot be parsed, or whose answer is not a
    clear yes/no, defers the decision and leaves the skill unconverged.
    """
    evaluation = {
        "reward_plot_image": "[reward curve plot]",
        "curve_points": [list(p) for p in points],
    }
    try:
        parsed = gateway.complete(
            backend,
            "analysis",
            evaluation,
            temperature=temperature,
            call_index=call_index,
        )
    except gateway.ParseError as error:
        return ConvergenceJudgment(
            skill=skill,
            converged=False,
            reason=f"judgment deferred: {error}",
            source="model",
            points_seen=len(points),
            deferred=True,
        )
    answer = parsed.answer.strip().upper()
    if answer not in ("YES", "NO"):
        return ConvergenceJudgment(
            skill=skill,
            converged=False,
            reason=f"judgment deferred: ambiguous answer {parsed.answer!r}",
            source="model",
            points_seen=len(points),
            deferred=True,
        )
    return ConvergenceJudgment(
        skill=skill,
        converged=answer == "YES",
        reason=parsed.reasoning,
        source="model",
        points_seen=len(points),
    )


def sweep(
    library: SkillLibrary,
    curves: Mapping[str, Sequence[Point]],
    judge: Callable[..., ConvergenceJudgment] | None = None,
) -> list[ConvergenceJudgment]:
    """Judge every unconverged skill that has a curve; convergence is one-way.

    Already-converged skills are skipped, so a skill that later looks noisy
    never drops back out of the usable set.
    """
    judge = judge or judge_heuristic
    judgments = []
    for spec in library.skills:
        if spec.converged or spec.caption not in curves:
            continue
        judgment = judge(curves[spec.caption], skill=spec.caption)
        judgments.append(judgment)
        if judgment.converged:
            library.mark_converged(spec.caption)
    return judgments


def save_judgments(path: str | Path, judgments: Iterable[ConvergenceJudgment]) -> None:
    """Append judgments to a JSONL log."""
    with open(path, "a", encoding="utf-8") as handle:
        for judgment in judgments:
            handle.write(json.dumps(asdict(judgment)) + "\n")


def load_judgments(path: str | Path) -> list[ConvergenceJudgment]:
    judgments = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                judgments.append(ConvergenceJudgment(**json.loads(line)))
    return judgments
