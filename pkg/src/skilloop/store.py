"""Episode persistence, dataset mixing, and embedding-space diversity metrics.

Episodes live in newline-delimited JSON shards, one writer per shard, with a
header record naming the reward channels so later training runs can tell at
a glance whether a shard needs relabeling. Readers merge shards and skip
(but count) corrupt records, so a crash mid-write costs at most the final
record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from . import world as world_lib
from .episodes import Episode, episode_from_dict, episode_to_dict
from .world import WorldState

__all__ = [
    "DiversityReport",
    "EpisodeStore",
    "LANGUAGE_DIM",
    "LoadResult",
    "MODALITIES",
    "Sample",
    "SamplerConfig",
    "SetMetrics",
    "diversity_report",
    "embed",
    "embed_flagged",
    "format_report",
    "load",
    "load_many",
    "mixed_sampler",
    "proprio_stats",
    "proprio_vector",
    "transition_weights",
]

STORE_VERSION = 1


# ---------------------------------------------------------------------------
# Shard files


class EpisodeStore:
    """Append-only JSONL shard of episodes, owned by a single writer.

    The first record is a header carrying the format version and the reward
    channel set; every appended episode must carry exactly those channels on
    every step.
    """

    def __init__(self, path: str | Path, captions: Sequence[str] | None = None):
        self.path = Path(path)
        if self.path.exists():
            header = self._read_header()
            self.captions = tuple(header["captions"])
            if captions is not None and tuple(captions) != self.captions:
                raise ValueError(
                    f"shard {self.path} was created for channels {self.captions}, "
                    f"not {tuple(captions)}"
                )
        else:
            if captions is None:
                raise ValueError("a new shard needs the reward channel list")
            self.captions = tuple(captions)
            header = {
                "kind": "header",
                "version": STORE_VERSION,
                "captions": list(self.captions),
            }
            with self.path.open("w", encoding="utf-8") as fh:
                fh.write(json.dumps(header) + "\n")

    def _read_header(self) -> dict:
        with self.path.open("r", encoding="utf-8") as fh:
            first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError:
            header = {}
        if header.get("kind") != "header" or "captions" not in header:
            raise ValueError(f"{self.path} is not an episode shard (bad header)")
        return header

    def append(self, episode: Episode) -> None:
        want = set(self.captions)
        for index, step in enumerate(episode.steps):
            if set(step.rewards) != want:
                raise ValueError(
                    f"episode {episode.episode_id!r} step {index} carries channels "
                    f"{sorted(step.rewards)}, shard expects {sorted(want)}"
                )
        record = {"kind": "episode", **episode_to_dict(episode)}
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")

    def extend(self, episodes: Iterable[Episode]) -> None:
        for episode in episodes:
            self.append(episode)


@dataclass
class LoadResult:
    episodes: list[Episode]
    skipped: int  # corrupt or truncated records dropped
    captions: tuple[str, ...]

    def __iter__(self) -> Iterator[Episode]:
        return iter(self.episodes)

    def __len__(self) -> int:
        return len(self.episodes)


def _matches(episode: Episode, source, skill, success) -> bool:
    if source is not None and episode.source != source:
        return False
    if success is not None and episode.success != success:
        return False
    if skill is not None and all(seg.caption != skill for seg in episode.segments):
        return False
    return True


def load(
    path: str | Path,
    *,
    source: str | None = None,
    skill: str | None = None,
    success: bool | None = None,
) -> LoadResult:
    """Read one shard, filtering by source tag, segment caption, or outcome."""
    path = Path(path)
    episodes: list[Episode] = []
    skipped = 0
    captions: tuple[str, ...] = ()
    with path.open("r", encoding="utf-8") as fh:
        for index, line in enumerate(fh):
            try:
                record = json.loads(line)
                if index == 0 and record.get("kind") == "header":
                    captions = tuple(record["captions"])
                    continue
                if record.get("kind") != "episode":
                    raise ValueError("not an episode record")
                episode = episode_from_dict(record)
            except (ValueError, KeyError, TypeError):
                skipped += 1
                continue
            if _matches(episode, source, skill, success):
                episodes.append(episode)
    return LoadResult(episodes=episodes, skipped=skipped, captions=captions)


def load_many(
    paths: Sequence[str | Path],
    *,
    source: str | None = None,
    skill: str | None = None,
    success: bool | None = None,
) -> LoadResult:
    """Merge several shards (workers each own one) into a single result."""
    episodes: list[Episode] = []
    skipped = 0
    captions: tuple[str, ...] = ()
    for path in paths:
        result = load(path, source=source, skill=skill, success=success)
        episodes.extend(result.episodes)
        skipped += result.skipped
        captions = captions or result.captions
    return LoadResult(episodes=episodes, skipped=skipped, captions=captions)


# ---------------------------------------------------------------------------
# Mixed sampling across datasets


@dataclass(frozen=True)
class SamplerConfig:
    """Batch-mixing recipe: dataset shares plus an up-weight for new skills.

    ``shares`` maps dataset name to its draw probability (must sum to 1);
    within a dataset, segments whose caption is in ``new_skills`` receive
    ``new_skill_share`` of the draws (when the dataset has both kinds).
    """

    shares: Mapping[str, float]
    new_skills: frozenset[str] = frozenset()
    new_skill_share: float = 0.5

    def __post_init__(self) -> None:
        if not self.shares:
            raise ValueError("at least one dataset share is required")
        total = sum(self.shares.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"dataset shares must sum to 1, got {total}")
        if any(v <= 0 for v in self.shares.values()):
            raise ValueError("dataset shares must be positive")
        if not 0.0 < self.new_skill_share < 1.0:
            raise ValueError("new_skill_share must lie strictly between 0 and 1")


class Sample(NamedTuple):
    dataset: str
    episode_id: str
    caption: str
    state: WorldState
    action: int
    rewards: dict[str, float]
    next_state: WorldState


def _segment_pools(episodes: Sequence[Episode], new_skills: frozenset[str]):
    new, old = [], []
    for episode in episodes:
        for segment in episode.segments:
            target = new if segment.caption in new_skills else old
            target.append((episode, segment))
    return new, old


def mixed_sampler(
    datasets: Mapping[str, Sequence[Episode]],
    config: SamplerConfig,
    seed: int = 0,
) -> Iterator[Sample]:
    """Endless transition stream honoring dataset shares and skill up-weights.

    Draws sample with replacement, so a small dataset simply repeats until
    it fills its share. Deterministic for a given seed.
    """
    names = list(config.shares)
    for name in names:
        if not datasets.get(name):
            raise ValueError(f"dataset {name!r} is empty or missing")
    pools = {name: _segment_pools(datasets[name], config.new_skills) for name in names}
    shares = np.array([config.shares[name] for name in names], dtype=np.float64)
    cumulative = np.cumsum(shares / shares.sum())
    rng = np.random.default_rng(seed)
    while True:
        name = names[int(np.searchsorted(cumulative, rng.random()))]
        new, old = pools[name]
        if new and old:
            pool = new if float(rng.random()) < config.new_skill_share else old
        else:
            pool = new or old
        episode, segment = pool[int(rng.integers(len(pool)))]
        index = int(rng.integers(segment.start, segment.end))
        before = episode.initial_state if index == 0 else episode.steps[index - 1].state
        step = episode.steps[index]
        yield Sample(
            dataset=name,
            episode_id=episode.episode_id,
            caption=segment.caption,
            state=before,
            action=step.action,
            rewards=step.rewards,
            next_state=step.state,
        )


def transition_weights(
    datasets: Mapping[str, Sequence[Episode]],
    config: SamplerConfig,
) -> np.ndarray:
    """Per-step draw probabilities under ``mixed_sampler``, as one flat array.

    Order matches the datasets concatenated in ``config.shares`` order with
    episodes and steps in sequence, so the array aligns with a transition
    table built from the same concatenation. Steps no segment covers get
    weight zero. Probabilities sum to 1 when segments tile every episode.
    """
    weights: list[np.ndarray] = []
    for name in config.shares:
        episodes = datasets.get(name)
        if not episodes:
            raise ValueError(f"dataset {name!r} is empty or missing")
        new, old = _segment_pools(episodes, config.new_skills)
        for episode in episodes:
            per_step = np.zeros(len(episode.steps), dtype=np.float64)
            for segment in episode.segments:
                is_new = segment.caption in config.new_skills
                pool = new if is_new else old
                if new and old:
                    pool_share = config.new_skill_share if is_new else 1.0 - config.new_skill_share
                else:
                    pool_share = 1.0
                per_step[segment.start : segment.end] += (
                    config.shares[name] * pool_share / (len(pool) * (segment.end - segment.start))
                )
            weights.append(per_step)
    return np.concatenate(weights) if weights else np.zeros(0, dtype=np.float64)


# ---------------------------------------------------------------------------
# Embeddings


MODALITIES = ("proprioception", "scene", "language")
LANGUAGE_DIM = 256


def proprio_vector(state: WorldState) -> np.ndarray:
    """Raw proprioception reading: gripper position (meters), aperture, grasp."""
    x, y, z = world_lib.cell_to_meters(state.tcp)
    return np.array([x, y, z, state.aperture, float(state.grasp_sensor)])


def proprio_stats(states: Iterable[WorldState]) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and standard deviation over a baseline set."""
    matrix = np.stack([proprio_vector(s) for s in states])
    return matrix.mean(axis=0), matrix.std(axis=0)


def _scene_vector(state: WorldState) -> np.ndarray:
    scale = np.array(
        [world_lib.GRID_XY - 1, world_lib.GRID_XY - 1, world_lib.GRID_Z - 1],
        dtype=np.float64,
    )
    parts = [np.asarray(state.objects[color]) / scale for color in world_lib.COLORS]
    parts.append(np.asarray(state.tcp) / scale)
    return np.concatenate(parts)


def _trigram_vector(caption: str) -> np.ndarray:
    import zlib

    vector = np.zeros(LANGUAGE_DIM)
    text = caption.lower()
    for i in range(len(text) - 2):
        gram = text[i : i + 3].encode("utf-8")
        vector[zlib.crc32(gram) % LANGUAGE_DIM] += 1.0
    return vector


def embed_flagged(
    modality: str,
    datum,
    stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, bool]:
    """Unit-normalized embedding plus a flag for degenerate (zero) inputs.

    A zero vector cannot be normalized; it maps to the first canonical basis
    vector and the flag comes back True.
    """
    if modality == "language":
        raw = _trigram_vector(datum)
    elif modality == "scene":
        raw = _scene_vector(datum)
    elif modality == "proprioception":
        if stats is None:
            raise ValueError("proprioception embeddings need baseline statistics")
        vec = proprio_vector(datum) if isinstance(datum, WorldState) else np.asarray(datum, dtype=np.float64)
        mean, std = stats
        raw = (vec - mean) / np.where(std > 0, std, 1.0)
    else:
        raise ValueError(f"unknown modality {modality!r}")
    norm = float(np.linalg.norm(raw))
    if norm == 0.0:
        basis = np.zeros_like(raw)
        basis[0] = 1.0
        return basis, True
    return raw / norm, False


def embed(
    modality: str,
    datum,
    stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    return embed_flagged(modality, datum, stats)[0]


# ---------------------------------------------------------------------------
# Diversity metrics


@dataclass(frozen=True)
class SetMetrics:
    mean_pairwise_l2: float
    mean_centroid_distance: float


@dataclass(frozen=True)
class DiversityReport:
    """Per-modality spread of two episode sets in embedding space.

    Centroids are k-means clusters (k=5) fit on the baseline set only; both
    sets are scored against them.
    """

    baseline: dict[str, SetMetrics]
    comparison: dict[str, SetMetrics]
    degenerate_embeddings: int = 0

    def to_dict(self) -> dict:
        def unpack(metrics: dict[str, SetMetrics]) -> dict:
            return {
                name: {
                    "mean_pairwise_l2": m.mean_pairwise_l2,
                    "mean_centroid_distance": m.mean_centroid_distance,
                }
                for name, m in metrics.items()
            }

        return {
            "baseline": unpack(self.baseline),
            "comparison": unpack(self.comparison),
            "degenerate_embeddings": self.degenerate_embeddings,
        }


def format_report(report: DiversityReport) -> str:
    lines = [
        f"{'modality':<16} {'set':<12} {'pairwise L2':>12} {'centroid dist':>14}",
        "-" * 56,
    ]
    for modality in MODALITIES:
        for label, metrics in (("baseline", report.baseline), ("comparison", report.comparison)):
            m = metrics[modality]
            lines.append(
                f"{modality:<16} {label:<12} {m.mean_pairwise_l2:>12.4f} "
                f"{m.mean_centroid_distance:>14.4f}"
            )
    if report.degenerate_embeddings:
        lines.append(f"degenerate embeddings: {report.degenerate_embeddings}")
    return "\n".join(lines)


def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator, iters: int = 100) -> np.ndarray:
    """Seeded farthest-point init, then capped Lloyd iterations."""
    centroids = points[[int(rng.integers(len(points)))]]
    while len(centroids) < k:
        gaps = np.linalg.norm(points[:, None, :] - centroids[None], axis=2).min(axis=1)
        centroids = np.vstack([centroids, points[int(np.argmax(gaps))]])
    for _ in range(iters):
        assign = np.linalg.norm(points[:, None, :] - centroids[None], axis=2).argmin(axis=1)
        updated = np.vstack(
            [
                points[assign == c].mean(axis=0) if np.any(assign == c) else centroids[c]
                for c in range(k)
            ]
        )
        if np.allclose(updated, centroids):
            break
        centroids = updated
    return centroids


def _mean_pairwise(points: np.ndarray, rng: np.random.Generator, max_pairs: int) -> float:
    n = len(points)
    if n < 2:
        return 0.0
    total = n * (n - 1) // 2
    if total <= max_pairs:
        acc = 0.0
        for i in range(n - 1):
            acc += float(np.linalg.norm(points[i + 1 :] - points[i], axis=1).sum())
        return acc / total
    left = rng.integers(n, size=max_pairs)
    right = rng.integers(n, size=max_pairs)
    keep = left != right
    return float(np.linalg.norm(points[left[keep]] - points[right[keep]], axis=1).mean())


def _mean_centroid(points: np.ndarray, centroids: np.ndarray) -> float:
    distances = np.linalg.norm(points[:, None, :] - centroids[None], axis=2).min(axis=1)
    return float(distances.mean())


def _modality_points(
    episodes: Sequence[Episode],
    modality: str,
    stats,
    rng: np.random.Generator,
    max_points: int,
) -> tuple[np.ndarray, int]:
    ordered = sorted(episodes, key=lambda ep: ep.episode_id)
    degenerate = 0
    if modality == "language":
        data = [seg.caption for ep in ordered for seg in ep.segments]
    else:
        data = [step.state for ep in ordered for step in ep.steps]
    if len(data) > max_points:
        picks = rng.choice(len(data), size=max_points, replace=False)
        data = [data[int(i)] for i in sorted(picks)]
    rows = []
    for datum in data:
        vector, flagged = embed_flagged(modality, datum, stats)
        degenerate += flagged
        rows.append(vector)
    return np.stack(rows), degenerate


def diversity_report(
    baseline: Sequence[Episode],
    comparison: Sequence[Episode],
    seed: int = 0,
    *,
    max_points: int = 2000,
    max_pairs: int = 100_000,
) -> DiversityReport:
    """Score two episode sets per modality; clusters are fit on the baseline.

    Deterministic for a given seed and invariant to episode order: episodes
    are canonically sorted by id before any seeded subsampling.
    """
    if not baseline or not comparison:
        raise ValueError("both episode sets must be non-empty")
    # canonical episode order makes every seeded draw and float reduction
    # independent of how callers happened to order the sets
    baseline = sorted(baseline, key=lambda ep: ep.episode_id)
    comparison = sorted(comparison, key=lambda ep: ep.episode_id)
    stats = proprio_stats(step.state for ep in baseline for step in ep.steps)
    base_metrics: dict[str, SetMetrics] = {}
    cmp_metrics: dict[str, SetMetrics] = {}
    degenerate = 0
    for m_index, modality in enumerate(MODALITIES):
        m_stats = stats if modality == "proprioception" else None
        base_points, flagged_b = _modality_points(
            baseline, modality, m_stats, np.random.default_rng((seed, m_index, 0)), max_points
        )
        cmp_points, flagged_c = _modality_points(
            comparison, modality, m_stats, np.random.default_rng((seed, m_index, 0)), max_points
        )
        degenerate += flagged_b + flagged_c
        if len(np.unique(base_points, axis=0)) < 5:
            raise ValueError(
                f"baseline has fewer than 5 distinct {modality} points; cannot fit clusters"
            )
        centroids = _kmeans(base_points, k=5, rng=np.random.default_rng((seed, m_index, 1)))
        base_metrics[modality] = SetMetrics(
            mean_pairwise_l2=_mean_pairwise(
                base_points, np.random.default_rng((seed, m_index, 2)), max_pairs
            ),
            mean_centroid_distance=_mean_centroid(base_points, centroids),
        )
        cmp_metrics[modality] = SetMetrics(
            mean_pairwise_l2=_mean_pairwise(
                cmp_points, np.random.default_rng((seed, m_index, 2)), max_pairs
            ),
            mean_centroid_distance=_mean_centroid(cmp_points, centroids),
        )
    return DiversityReport(
        baseline=base_metrics, comparison=cmp_metrics, degenerate_embeddings=degenerate
    )
