"""Operator entry points: pretrain, collect, improve, analyze, report.

Every subcommand is also callable in-process (the ``cmd_*`` functions take a
``RunConfig`` and return a result object), so tests and notebooks drive the
exact code paths the console script uses.
"""

from __future__ import annotations

import argparse
import json
import multiprocessing
import sys
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Sequence

from . import analysis as analysis_lib
from . import bus as bus_lib
from . import rewards as reward_lib
from . import store as store_lib
from . import world
from .analysis import ConvergenceJudgment
from .config import ConfigError, RunConfig
from .curriculum import Curriculum, Plan, PlanningError
from .gateway import RemoteBackend, TransportError
from .learner import (
    QPolicy,
    TransitionTable,
    evaluate,
    fit,
    generate_pretraining_data,
    make_evaluator,
)
from .mock_backend import ScriptedBackend
from .skills import COMPOSITE_CAPTIONS, SkillLibrary, SkillSpec, base_library, composite_skills

__all__ = [
    "EXIT_CONFIG",
    "EXIT_DATA",
    "EXIT_OK",
    "EXIT_TRANSPORT",
    "AnalyzeResult",
    "CollectRun",
    "DataError",
    "ImproveResult",
    "PretrainResult",
    "ReportRun",
    "cmd_analyze",
    "cmd_collect",
    "cmd_improve",
    "cmd_pretrain",
    "cmd_report",
    "main",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRANSPORT = 3
EXIT_DATA = 4

REMOTE_URL_VAR = "SKILLOOP_REMOTE_URL"
PRETRAIN_SHARD = "expert.jsonl"
STACK_PAIRS = 6  # ordered color pairs the expert generator round-robins over
PLAN_TIMEOUT = 600.0  # seconds before a fleet is declared stuck
JOIN_TIMEOUT = 60.0


class DataError(RuntimeError):
    """An artifact a command depends on is missing or malformed."""


# ---------------------------------------------------------------------------
# Shared plumbing


def _ensure_layout(config: RunConfig) -> None:
    for name in ("stores", "checkpoints", "curves", "reports"):
        config.paths.resolve(name).mkdir(parents=True, exist_ok=True)


def _library_path(config: RunConfig) -> Path:
    return config.paths.resolve("library")


def _load_library(config: RunConfig) -> SkillLibrary:
    path = _library_path(config)
    if not path.exists():
        raise DataError(f"skill library not found: {path} (run pretrain first)")
    return SkillLibrary.load(path)


def _load_checkpoint(config: RunConfig, filename: str) -> QPolicy:
    path = config.paths.checkpoint(filename)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path} (run pretrain first)")
    return QPolicy.load(path)


def _make_backend(config: RunConfig):
    if config.backend == "mock":
        return ScriptedBackend(seed=config.seed)
    import os

    url = os.environ.get(REMOTE_URL_VAR)
    if not url:
        raise ConfigError(
            f"backend 'remote' needs the completion endpoint (with any "
            f"credentials) in ${REMOTE_URL_VAR}"
        )
    return RemoteBackend(url)


def _write_curves(path: Path, curves: dict[str, list[tuple[int, float]]]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for skill in sorted(curves):
            for update_count, value in curves[skill]:
                record = {
                    "skill": skill,
                    "update_count": int(update_count),
                    "return": float(value),
                }
                fh.write(json.dumps(record) + "\n")


def _read_curves(path: Path, at: int | None = None) -> dict[str, list[tuple[int, float]]]:
    if not path.exists():
        raise DataError(f"curve log not found: {path}")
    curves: dict[str, list[tuple[int, float]]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            point = (int(record["update_count"]), float(record["return"]))
            if at is not None and point[0] > at:
                continue
            curves.setdefault(record["skill"], []).append(point)
    return {skill: sorted(points) for skill, points in curves.items()}


def _shard_paths(config: RunConfig, tag: str) -> list[Path]:
    directory = config.paths.store_dir(tag)
    paths = sorted(directory.glob("*.jsonl")) if directory.is_dir() else []
    if not paths:
        raise DataError(f"dataset {tag!r} has no shards under {directory}")
    return paths


def _final_curve_point(config: RunConfig, result, transitions: int):
    """One evaluation point per skill for fits run without interval evals."""
    if result.curves and any(result.curves.values()):
        return result.curves
    if result.sweeps_run == 0 or config.train.eval_episodes <= 0:
        return result.curves
    evaluator = make_evaluator(
        result.policy.channels,
        episodes=config.train.eval_episodes,
        max_steps=config.train.eval_max_steps,
        seed=config.seed,
    )
    update_count = result.sweeps_run * transitions
    return {ch: [(update_count, value)] for ch, value in evaluator(result.policy).items()}


def _fit_evaluator(config: RunConfig, channels: Sequence[str]):
    if config.train.eval_interval <= 0 or config.train.eval_episodes <= 0:
        return None
    return make_evaluator(
        channels,
        episodes=config.train.eval_episodes,
        max_steps=config.train.eval_max_steps,
        seed=config.seed,
    )


# ---------------------------------------------------------------------------
# pretrain


@dataclass
class PretrainResult:
    checkpoint: Path
    curve_log: Path
    library: Path
    episodes: int
    sweeps_run: int


def cmd_pretrain(config: RunConfig) -> PretrainResult:
    """Generate expert stacking data and fit the base-skill policy.

    The base skills are trained on a fixed curriculum until the sweep budget
    is spent, so they enter the library already usable; ``analyze`` remains
    available for post-hoc convergence studies and restricted snapshots.
    """
    _ensure_layout(config)
    library = base_library(converged=True)
    episodes = generate_pretraining_data(
        library,
        episodes_per_pair=max(1, config.budget // STACK_PAIRS),
        steps=config.train.segment_steps,
        epsilon=config.train.epsilon,
        seed=config.seed,
    )
    store_dir = config.paths.store_dir("pretraining")
    store_dir.mkdir(parents=True, exist_ok=True)
    shard_path = store_dir / PRETRAIN_SHARD
    if shard_path.exists():
        raise DataError(f"{shard_path} already exists; use a fresh run root")
    store_lib.EpisodeStore(shard_path, captions=tuple(library.channel_map())).extend(episodes)

    table = TransitionTable.from_episodes(episodes, library)
    result = fit(
        table,
        discount=config.train.discount,
        sweeps=config.train.iterations,
        eval_interval=config.train.eval_interval,
        evaluator=_fit_evaluator(config, table.channels),
    )
    checkpoint = config.paths.checkpoint(config.active_checkpoint)
    result.policy.save(checkpoint)
    curve_log = config.paths.resolve("curves") / "pretrain.jsonl"
    _write_curves(curve_log, _final_curve_point(config, result, len(table)))
    library.save(_library_path(config))
    return PretrainResult(
        checkpoint=checkpoint,
        curve_log=curve_log,
        library=_library_path(config),
        episodes=len(episodes),
        sweeps_run=result.sweeps_run,
    )


# ---------------------------------------------------------------------------
# collect


@dataclass
class CollectRun:
    store_dir: Path
    shards: list[Path]
    history_path: Path
    plans: list[Plan]
    discards: list[Plan]
    episodes: int


def _worker_entry(
    host: str,
    port: int,
    checkpoint: str,
    library_path: str,
    shard: str,
    worker_id: str,
    jitter: float,
    source: str,
    per_skill: float,
    final: float,
) -> None:
    policy = QPolicy.load(checkpoint)
    library = SkillLibrary.load(library_path)
    criteria = reward_lib.SuccessCriteria(per_skill=per_skill, final=final)
    bus_lib.worker_run(
        (host, int(port)),
        policy,
        library,
        shard,
        worker_id,
        jitter=float(jitter),
        source=source,
        criteria=criteria,
    )


def cmd_collect(config: RunConfig) -> CollectRun:
    """Drive the plan -> broadcast -> report loop until the episode budget.

    One broker and ``config.workers`` worker processes; each worker owns one
    shard so no two processes ever write the same file.
    """
    _ensure_layout(config)
    library = _load_library(config)
    if config.skills_exclude:
        unknown = [c for c in config.skills_exclude if c not in library]
        if unknown:
            raise ConfigError(f"skills-exclude names unknown captions: {unknown}")
        excluded = set(config.skills_exclude)
        library = library.subset([c for c in library.captions() if c not in excluded])
    if not library.available(converged_only=True):
        raise DataError("no converged skills to plan with; run pretrain (and analyze) first")
    checkpoint = config.paths.checkpoint(config.active_checkpoint)
    if not checkpoint.exists():
        raise DataError(f"checkpoint not found: {checkpoint} (run pretrain first)")

    tag = config.collect_source
    store_dir = config.paths.store_dir(tag)
    store_dir.mkdir(parents=True, exist_ok=True)
    worker_ids = [f"w{i:02d}" for i in range(config.workers)]
    shards = [store_dir / f"{wid}.jsonl" for wid in worker_ids]
    existing = [str(p) for p in shards if p.exists()]
    if existing:
        raise DataError(
            f"shards already exist under {store_dir} (appending would mix runs): {existing}"
        )
    stores_root = config.paths.resolve("stores")
    library_snapshot = stores_root / f"{tag}-library.jsonl"
    library.save(library_snapshot)

    backend = _make_backend(config)
    curriculum = Curriculum(library, backend, temperature=config.temperature)
    per_plan = config.workers * config.repetitions
    plans_needed = config.budget // per_plan

    context = multiprocessing.get_context("spawn")
    processes: list[multiprocessing.process.BaseProcess] = []
    executed: list[Plan] = []
    plan_rows: list[dict] = []
    episodes = 0
    broker = bus_lib.Broker()
    try:
        broker.start()
        processes = [
            context.Process(
                target=_worker_entry,
                args=(
                    broker.host,
                    broker.port,
                    str(checkpoint),
                    str(library_snapshot),
                    str(shard),
                    wid,
                    config.jitter,
                    tag,
                    config.criteria.per_skill,
                    config.criteria.final,
                ),
                daemon=True,
            )
            for wid, shard in zip(worker_ids, shards)
        ]
        for process in processes:
            process.start()
        if not broker.wait_for_workers(config.workers, timeout=JOIN_TIMEOUT):
            raise TransportError(
                f"only {broker.worker_count()} of {config.workers} workers "
                f"joined within {JOIN_TIMEOUT:.0f}s"
            )
        for index in range(plans_needed):
            scene = world.describe(world.reset(config.seed * 7919 + index)).to_text()
            plan = curriculum.next_plan(scene)
            plan_id = broker.broadcast_plan(
                plan,
                repetitions=config.repetitions,
                segment_steps=config.train.segment_steps,
            )
            result = broker.collect_reports(plan_id, timeout=PLAN_TIMEOUT)
            if result.timed_out or len(result) < per_plan:
                raise DataError(
                    f"plan {plan_id}: {len(result)} of {per_plan} reports "
                    f"arrived before the {PLAN_TIMEOUT:.0f}s timeout"
                )
            for report in result:
                curriculum.record_outcome(plan, report.success)
            episodes += sum(1 for r in result if not r.error)
            executed.append(plan)
            plan_rows.append(
                {
                    **plan.to_dict(),
                    "successes": sum(1 for r in result if r.success),
                    "reports": len(result),
                }
            )
    finally:
        broker.stop()
        for process in processes:
            process.join(timeout=10.0)
            if process.is_alive():
                process.terminate()

    if episodes != config.budget:
        raise DataError(
            f"stored {episodes} episodes but the budget was {config.budget}; "
            "a worker reported errors"
        )
    history_path = stores_root / f"{tag}-history.json"
    history_path.write_text(
        json.dumps(curriculum.history.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    with (stores_root / f"{tag}-plans.jsonl").open("w", encoding="utf-8") as fh:
        for row in plan_rows:
            fh.write(json.dumps(row) + "\n")
    with (stores_root / f"{tag}-discards.jsonl").open("w", encoding="utf-8") as fh:
        for plan in curriculum.discards:
            fh.write(json.dumps(plan.to_dict()) + "\n")
    return CollectRun(
        store_dir=store_dir,
        shards=shards,
        history_path=history_path,
        plans=executed,
        discards=list(curriculum.discards),
        episodes=episodes,
    )


# ---------------------------------------------------------------------------
# improve


@dataclass
class ImproveResult:
    checkpoint: Path
    curve_log: Path
    library: Path
    datasets: dict[str, int]
    transitions: int
    sweeps_run: int
    added_skills: list[str]


def cmd_improve(config: RunConfig) -> ImproveResult:
    """Add the composite skills, relabel every store, refit on the mixture.

    The fit treats mixed-sampler draw probabilities as per-sweep inclusion
    probabilities, so dataset shares and new-skill up-weighting shape the
    value estimates without materializing a resampled dataset. Composites
    are trained to the full sweep budget here, so they enter the usable set
    immediately.
    """
    _ensure_layout(config)
    library = _load_library(config)
    added = []
    for spec in composite_skills():
        if spec.caption not in library:
            library.add(spec)
            added.append(spec.caption)
        library.mark_converged(spec.caption)

    if config.mixing.shares is not None:
        if set(config.mixing.shares) != set(config.improve_datasets):
            raise ConfigError(
                f"mixing shares {sorted(config.mixing.shares)} must name exactly "
                f"the improve datasets {sorted(config.improve_datasets)}"
            )
        shares = {tag: float(config.mixing.shares[tag]) for tag in config.improve_datasets}
    else:
        shares = {tag: 1.0 / len(config.improve_datasets) for tag in config.improve_datasets}

    datasets: dict[str, list] = {}
    for tag in config.improve_datasets:
        loaded = store_lib.load_many(_shard_paths(config, tag))
        if not loaded.episodes:
            raise DataError(f"dataset {tag!r} contains no episodes")
        datasets[tag] = [
            reward_lib.relabel(episode, library, config.reward_params) for episode in loaded
        ]

    sampler = store_lib.SamplerConfig(
        shares=shares,
        new_skills=frozenset(COMPOSITE_CAPTIONS),
        new_skill_share=config.mixing.new_skill_share,
    )
    weights = store_lib.transition_weights(datasets, sampler)
    ordered = [episode for tag in config.improve_datasets for episode in datasets[tag]]
    table = TransitionTable.from_episodes(ordered, library)
    result = fit(
        table,
        discount=config.train.discount,
        sweeps=config.train.iterations,
        eval_interval=config.train.eval_interval,
        evaluator=_fit_evaluator(config, table.channels),
        inclusion=weights,
        inclusion_seed=config.seed,
    )
    checkpoint = config.paths.checkpoint(config.improve_checkpoint)
    result.policy.save(checkpoint)
    curve_log = (
        config.paths.resolve("curves") / f"improve-{Path(config.improve_checkpoint).stem}.jsonl"
    )
    _write_curves(curve_log, _final_curve_point(config, result, len(table)))
    library.save(_library_path(config))
    return ImproveResult(
        checkpoint=checkpoint,
        curve_log=curve_log,
        library=_library_path(config),
        datasets={tag: len(eps) for tag, eps in datasets.items()},
        transitions=len(table),
        sweeps_run=result.sweeps_run,
        added_skills=added,
    )


# ---------------------------------------------------------------------------
# analyze


@dataclass
class AnalyzeResult:
    judgments: list[ConvergenceJudgment]
    judgment_log: Path
    library: Path
    converged: list[str]


def cmd_analyze(config: RunConfig, at: int | None = None) -> AnalyzeResult:
    """Judge convergence from a curve log; one-way marks the library.

    With ``at``, only curve points at or below that update count are seen and
    the verdicts go to a fresh ``library-at-<at>.jsonl`` snapshot instead of
    the live library — the snapshot starts fully unconverged, so it reflects
    exactly what the curves up to that cutoff support.
    """
    _ensure_layout(config)
    library = _load_library(config)
    curves = _read_curves(config.paths.resolve("curves") / config.analyze_curves, at=at)
    judge = partial(analysis_lib.judge_heuristic, config=config.analysis)
    if at is None:
        target = library
        library_out = _library_path(config)
    else:
        target = SkillLibrary(
            [SkillSpec(s.caption, s.reward_id, False) for s in library.skills]
        )
        library_out = Path(config.paths.root) / f"library-at-{at}.jsonl"
    judgments = analysis_lib.sweep(target, curves, judge)
    target.save(library_out)
    judgment_log = config.paths.resolve("judgments")
    analysis_lib.save_judgments(judgment_log, judgments)
    return AnalyzeResult(
        judgments=judgments,
        judgment_log=judgment_log,
        library=library_out,
        converged=[j.skill for j in judgments if j.converged],
    )


# ---------------------------------------------------------------------------
# report


def _family(caption: str) -> str:
    if caption.startswith("build a pyramid"):
        return "pyramid"
    if caption.startswith("build an inverted pyramid"):
        return "inverted pyramid"
    if caption.startswith("stack") and " and " in caption:
        return "triple stack"
    return "basic"


@dataclass
class ReportRun:
    diversity_text: Path
    diversity_json: Path
    performance_text: Path
    performance_json: Path
    checkpoints: list[str]


def cmd_report(config: RunConfig) -> ReportRun:
    """Write the dataset-diversity table and per-skill returns per checkpoint."""
    _ensure_layout(config)
    library = _load_library(config)
    reports_dir = config.paths.resolve("reports")

    baseline = store_lib.load_many(_shard_paths(config, "pretraining")).episodes
    comparison = store_lib.load_many(_shard_paths(config, config.collect_source)).episodes
    if not baseline or not comparison:
        raise DataError("diversity needs non-empty pretraining and collection stores")
    diversity = store_lib.diversity_report(baseline, comparison, seed=config.seed)
    diversity_text = reports_dir / "diversity.txt"
    diversity_text.write_text(store_lib.format_report(diversity) + "\n", encoding="utf-8")
    diversity_json = reports_dir / "diversity.json"
    diversity_json.write_text(
        json.dumps(diversity.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    checkpoint_dir = config.paths.resolve("checkpoints")
    checkpoint_paths = sorted(checkpoint_dir.glob("*.npz"))
    if not checkpoint_paths:
        raise DataError(f"no checkpoints under {checkpoint_dir}")
    episodes = config.train.eval_episodes if config.train.eval_episodes > 0 else 3
    returns: dict[str, dict[str, float]] = {}
    for path in checkpoint_paths:
        policy = QPolicy.load(path)
        supported = [c for c in library.captions() if c in policy.channels]
        returns[path.stem] = {
            caption: evaluate(
                policy,
                caption,
                episodes=episodes,
                max_steps=config.train.eval_max_steps,
                seed=config.seed,
                jitter=config.jitter,
            )
            for caption in supported
        }

    families: dict[str, dict[str, float]] = {}
    for name, rows in returns.items():
        groups: dict[str, list[float]] = {}
        for caption, value in rows.items():
            groups.setdefault(_family(caption), []).append(value)
        families[name] = {fam: sum(vs) / len(vs) for fam, vs in sorted(groups.items())}

    performance_json = reports_dir / "performance.json"
    performance_json.write_text(
        json.dumps({"checkpoints": returns, "families": families}, indent=2, sort_keys=True)
        + "\n",
        encoding="utf-8",
    )
    names = [p.stem for p in checkpoint_paths]
    width = max(len(c) for c in library.captions()) + 2
    lines = [f"{'skill':<{width}}" + "".join(f"{name:>14}" for name in names)]
    lines.append("-" * (width + 14 * len(names)))
    for caption in library.captions():
        cells = "".join(
            f"{returns[name][caption]:>14.2f}" if caption in returns[name] else f"{'-':>14}"
            for name in names
        )
        lines.append(f"{caption:<{width}}" + cells)
    lines.append("")
    lines.append(f"{'family mean':<{width}}")
    for family in sorted({_family(c) for c in library.captions()}):
        cells = "".join(
            f"{families[name][family]:>14.2f}" if family in families[name] else f"{'-':>14}"
            for name in names
        )
        lines.append(f"{family:<{width}}" + cells)
    performance_text = reports_dir / "performance.txt"
    performance_text.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return ReportRun(
        diversity_text=diversity_text,
        diversity_json=diversity_json,
        performance_text=performance_text,
        performance_json=performance_json,
        checkpoints=names,
    )


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skilloop",
        description="Curriculum-driven skill learning loop, one subcommand per stage.",
    )
    parser.add_argument(
        "--config", metavar="FILE", default=None, help="run config JSON; defaults when omitted"
    )
    parser.add_argument(
        "--dump-config",
        action="store_true",
        help="print the fully-resolved config as JSON and exit",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    descriptions = {
        "pretrain": "generate expert data and fit the base-skill policy",
        "collect": "run the plan/broadcast/report loop against a worker fleet",
        "improve": "add composite skills, relabel stores, refit on the mixture",
        "analyze": "judge convergence from curve logs and mark the library",
        "report": "write diversity and per-skill performance tables",
    }
    for name, text in descriptions.items():
        sub = subparsers.add_parser(name, help=text, description=text)
        sub.add_argument("--seed", type=int, default=None)
        sub.add_argument("--backend", choices=("mock", "remote"), default=None)
        sub.add_argument("--temperature", type=float, default=None)
        sub.add_argument("--workers", type=int, default=None)
        sub.add_argument("--repetitions", type=int, default=None)
        sub.add_argument("--budget", type=int, default=None)
        sub.add_argument(
            "--skills-exclude",
            nargs="*",
            default=None,
            metavar="CAPTION",
            help="captions removed from the library for this run",
        )
        if name == "analyze":
            sub.add_argument(
                "--at",
                type=int,
                default=None,
                help="only use curve points at or below this update count",
            )
    return parser


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    changes = {}
    for name in ("seed", "backend", "temperature", "workers", "repetitions", "budget"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    exclude = getattr(args, "skills_exclude", None)
    if exclude is not None:
        changes["skills_exclude"] = tuple(exclude)
    return config.override(**changes) if changes else config


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = RunConfig.load(args.config) if args.config else RunConfig()
        config = _apply_overrides(config, args)
        if args.dump_config:
            sys.stdout.write(config.dumps())
            return EXIT_OK
        if not args.command:
            parser.print_usage(sys.stderr)
            print("skilloop: pick a subcommand (or --dump-config)", file=sys.stderr)
            return EXIT_CONFIG
        if args.command == "pretrain":
            pre = cmd_pretrain(config)
            print(
                f"pretrain: {pre.episodes} episodes, {pre.sweeps_run} sweeps "
                f"-> {pre.checkpoint}"
            )
        elif args.command == "collect":
            run = cmd_collect(config)
            print(
                f"collect: {run.episodes} episodes over {len(run.plans)} plans "
                f"({len(run.discards)} discards) -> {run.store_dir}"
            )
        elif args.command == "improve":
            imp = cmd_improve(config)
            print(
                f"improve: {imp.transitions} transitions from "
                f"{sum(imp.datasets.values())} episodes -> {imp.checkpoint}"
            )
        elif args.command == "analyze":
            ana = cmd_analyze(config, at=args.at)
            print(
                f"analyze: {len(ana.converged)} of {len(ana.judgments)} judged "
                f"skills converged -> {ana.library}"
            )
        elif args.command == "report":
            rep = cmd_report(config)
            print(
                f"report: wrote {rep.diversity_text.name} and "
                f"{rep.performance_text.name} under {rep.diversity_text.parent}"
            )
    except ConfigError as error:
        print(f"skilloop: config error: {error}", file=sys.stderr)
        return EXIT_CONFIG
    except TransportError as error:
        print(f"skilloop: transport error: {error}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (DataError, PlanningError) as error:
        print(f"skilloop: data error: {error}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as error:
        print(f"skilloop: data error: {error}", file=sys.stderr)
        return EXIT_DATA
    except OSError as error:  # socket-level failures from the bus
        print(f"skilloop: transport error: {error}", file=sys.stderr)
        return EXIT_TRANSPORT
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
