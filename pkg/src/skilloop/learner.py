"""Multi-skill fitted Q-learning over abstracted lattice states.

The learner trains one action-value table per reward channel from a shared
pool of transitions. States are abstracted to gripper-relative object
offsets (plus gripper height, held object, and aperture), which collapses
absolute workspace position so experience transfers across the lattice.

``fit`` runs synchronous mean-target sweeps: every sweep recomputes
``Q(s, a)`` as the mean of ``r + discount * max Q(s')`` over all recorded
transitions from ``(s, a)``. With one transition per state-action pair this
is exactly value iteration, which the tests pin against an independent
implementation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import rewards as reward_lib
from . import world as world_lib
from .episodes import Episode, Segment, Step
from .world import Action, WorldState

KEY_DIM = 17
N_ACTIONS = len(Action)

_CLIP = 2  # relative offsets saturate here; far objects keep only direction

_TRAVEL_Z = world_lib.GRID_Z - 2  # lateral carries happen above any stack


def _clip_offset(value: int) -> int:
    return max(-_CLIP, min(_CLIP, value))


def abstract_state(state: WorldState) -> tuple[int, ...]:
    """Abstraction key: gripper height, clipped per-object offsets, held,
    aperture, the stacking arrangement, and wall contact.

    Object positions are taken relative to the gripper and clipped to a
    small box, so the key is invariant to horizontal translation and far
    objects collapse to a direction. That makes experience reusable across
    layouts: precise coordinates only matter within grasping range. The
    support mask keeps which object rests on which, which clipped offsets
    can no longer express, and gripper height stays absolute because lifting
    and placing care about it. Wall-contact flags restore the one bit of
    absolute position that matters: at a wall some moves are no-ops, and a
    key that cannot see the wall would alias those states with open field.
    """
    tx, ty, tz = state.tcp
    key = [tz]
    for color in world_lib.COLORS:
        x, y, z = state.objects[color]
        key.extend((_clip_offset(x - tx), _clip_offset(y - ty), _clip_offset(z - tz)))
    key.append(-1 if state.held is None else world_lib.COLORS.index(state.held))
    key.append(int(round(state.aperture / world_lib.APERTURE_STEP)))
    mask = 0
    bit = 0
    for a in world_lib.COLORS:
        ax, ay, az = state.objects[a]
        for b in world_lib.COLORS:
            if a == b:
                continue
            bx, by, bz = state.objects[b]
            if (ax, ay, az) == (bx, by, bz + 1):
                mask |= 1 << bit
            bit += 1
    key.append(mask)
    last = world_lib.GRID_XY - 1
    key.extend((int(tx == 0), int(tx == last), int(ty == 0), int(ty == last)))
    return tuple(key)


@dataclass(frozen=True)
class TrainConfig:
    """Learner hyperparameters, all desk-scale knobs in one place."""

    discount: float = 0.98
    iterations: int = 200         # mean-target sweep budget
    eval_interval: int = 0        # sweeps between curve points; 0 = no curves
    eval_episodes: int = 3
    epsilon: float = 0.2          # exploration noise for scripted collection
    seed: int = 0
    segment_steps: int = 50       # open-loop duration per plan segment
    eval_max_steps: int = 400

    def __post_init__(self) -> None:
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie strictly in (0, 1), got {self.discount}")
        if self.eval_max_steps != 400:
            # the analysis module scales every curve to a 400-point ceiling
            raise ValueError("eval_max_steps is pinned to 400 by the curve-scaling contract")


# ---------------------------------------------------------------------------
# Transition data


def _channel_map(library) -> dict[str, str]:
    """Caption -> reward id, from a skill library or a plain mapping."""
    if hasattr(library, "channel_map"):
        return library.channel_map()
    if isinstance(library, Mapping):
        return dict(library)
    raise TypeError(f"cannot derive caption -> reward id map from {type(library)!r}")


@dataclass
class TransitionTable:
    """Flat arrays of abstracted transitions shared by every reward channel.

    Channels are skill captions (the join key used throughout); the parallel
    ``reward_ids`` names the reward each caption is scored by.
    """

    states: np.ndarray  # int32 [n]
    actions: np.ndarray  # int32 [n]
    next_states: np.ndarray  # int32 [n]
    rewards: np.ndarray  # float32 [n, channels]
    channels: tuple[str, ...]
    n_states: int
    n_actions: int = N_ACTIONS
    keys: np.ndarray | None = None  # int16 [n_states, KEY_DIM]
    reward_ids: tuple[str, ...] | None = None

    def __len__(self) -> int:
        return int(len(self.actions))

    @classmethod
    def from_episodes(cls, episodes: Iterable[Episode], library) -> "TransitionTable":
        channel_map = _channel_map(library)
        channels = tuple(channel_map)
        index: dict[tuple[int, ...], int] = {}

        def state_id(key: tuple[int, ...]) -> int:
            found = index.get(key)
            if found is None:
                found = len(index)
                index[key] = found
            return found

        states, actions, next_states, rows = [], [], [], []
        for episode in episodes:
            for before, action, step_rewards, after in episode.transitions():
                try:
                    row = [step_rewards[ch] for ch in channels]
                except KeyError as missing:
                    raise KeyError(
                        f"episode {episode.episode_id!r} lacks reward channel "
                        f"{missing.args[0]!r}; relabel it first"
                    ) from None
                states.append(state_id(abstract_state(before)))
                actions.append(int(action))
                next_states.append(state_id(abstract_state(after)))
                rows.append(row)
        keys = np.array(list(index), dtype=np.int16).reshape(len(index), KEY_DIM)
        return cls(
            states=np.asarray(states, dtype=np.int32),
            actions=np.asarray(actions, dtype=np.int32),
            next_states=np.asarray(next_states, dtype=np.int32),
            rewards=np.asarray(rows, dtype=np.float32).reshape(len(rows), len(channels)),
            channels=channels,
            n_states=len(index),
            keys=keys,
            reward_ids=tuple(channel_map.values()),
        )

    @classmethod
    def from_arrays(
        cls,
        states: Sequence[int],
        actions: Sequence[int],
        next_states: Sequence[int],
        rewards: np.ndarray,
        channels: Sequence[str],
        *,
        n_states: int | None = None,
        n_actions: int = N_ACTIONS,
    ) -> "TransitionTable":
        """Assemble a table directly; used for small synthetic decision problems."""
        states = np.asarray(states, dtype=np.int32)
        next_states = np.asarray(next_states, dtype=np.int32)
        rewards = np.asarray(rewards, dtype=np.float32)
        if rewards.ndim == 1:
            rewards = rewards[:, None]
        return cls(
            states=states,
            actions=np.asarray(actions, dtype=np.int32),
            next_states=next_states,
            rewards=rewards,
            channels=tuple(channels),
            n_states=int(n_states if n_states is not None else
                         max(states.max(), next_states.max()) + 1),
            n_actions=n_actions,
        )


# ---------------------------------------------------------------------------
# Policies


def _key_features(keys: np.ndarray, focus: tuple[str, ...]) -> np.ndarray:
    """Embed keys for nearest-neighbour lookup, weighted for a reward channel.

    Offsets, gripper height, and aperture compare by L1 distance, with the
    offsets of the channel's own objects (``focus``) upweighted and the rest
    damped: when matching states for a red-object skill, where red sits
    matters and the others barely do. The held object is one-hot (holding
    red is no closer to holding green than to holding nothing) and
    support-mask bits are unpacked, both upweighted so structural mismatches
    dominate small positional ones.
    """
    keys = np.atleast_2d(keys)
    numeric = keys[:, :10].astype(np.float32)  # tz + the 9 clipped offsets
    weights = np.ones(10, dtype=np.float32)
    for slot, color in enumerate(world_lib.COLORS):
        weights[1 + 3 * slot : 4 + 3 * slot] = 2.0 if color in focus else 0.4
    aperture = keys[:, 11:12].astype(np.float32)
    held = keys[:, 10].astype(np.int64)
    held_onehot = (held[:, None] == np.arange(-1, 3)[None, :]).astype(np.float32)
    mask = keys[:, 12].astype(np.int64)
    bits = ((mask[:, None] >> np.arange(6)[None, :]) & 1).astype(np.float32)
    walls = keys[:, 13:17].astype(np.float32)
    return np.concatenate(
        [numeric * weights, aperture, 1.5 * held_onehot, 2.0 * bits, walls], axis=1
    )


@dataclass
class QPolicy:
    """Greedy per-channel policy over the abstracted state table.

    Channels are skill captions; ``reward_ids`` gives the reward behind each
    caption (defaults to the captions themselves, for tables whose channel
    names already are reward ids).
    """

    channels: tuple[str, ...]
    q: np.ndarray  # float64 [channels, states, actions]
    keys: np.ndarray | None = None  # int16 [states, KEY_DIM]
    reward_ids: tuple[str, ...] | None = None
    key_index: dict[tuple[int, ...], int] = field(init=False, repr=False)
    _features: dict[tuple[str, ...], np.ndarray] = field(init=False, repr=False)
    _nearest: dict[tuple, int] = field(init=False, repr=False)
    _focus: dict[str, tuple[str, ...]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.reward_ids is None:
            self.reward_ids = self.channels
        if len(self.reward_ids) != len(self.channels):
            raise ValueError("reward_ids and channels must align one to one")
        self.key_index = {}
        self._features = {}
        self._nearest = {}
        self._focus = {}
        if self.keys is not None:
            self.key_index = {tuple(int(v) for v in row): i for i, row in enumerate(self.keys)}

    def channel_index(self, channel: str) -> int:
        return self.channels.index(channel)

    def reward_id(self, channel: str) -> str:
        return self.reward_ids[self.channel_index(channel)]

    def _channel_focus(self, channel: str) -> tuple[str, ...]:
        focus = self._focus.get(channel)
        if focus is None:
            focus = tuple(sorted(reward_lib.parse_reward_id(self.reward_id(channel))[1]))
            self._focus[channel] = focus
        return focus

    def state_row(self, state: WorldState, channel: str) -> int:
        """Table row for a state: exact key match, else nearest known key."""
        key = abstract_state(state)
        row = self.key_index.get(key)
        if row is not None:
            return row
        focus = self._channel_focus(channel)
        row = self._nearest.get((key, focus))
        if row is not None:
            return row
        features = self._features.get(focus)
        if features is None:
            features = _key_features(self.keys, focus)
            self._features[focus] = features
        query = _key_features(np.asarray(key, dtype=np.int16), focus)
        row = int(np.abs(features - query).sum(axis=1).argmin())
        self._nearest[(key, focus)] = row
        return row

    def act(
        self,
        state: WorldState,
        channel: str,
        epsilon: float = 0.0,
        rng: np.random.Generator | None = None,
    ) -> Action:
        """Greedy action for the channel, uniform random with prob. epsilon.

        Unseen states fall back to the nearest known key; ties break toward
        the first action in enum order.
        """
        if self.keys is None:
            raise RuntimeError("this policy has no state keys; it cannot act in the world")
        if epsilon > 0.0:
            if rng is None:
                raise ValueError("epsilon-greedy action needs an rng")
            if float(rng.random()) < epsilon:
                return Action(int(rng.integers(N_ACTIONS)))
        values = self.q[self.channel_index(channel), self.state_row(state, channel)]
        return Action(int(np.argmax(values)))

    def save(self, path: str | Path) -> None:
        if self.keys is None:
            raise RuntimeError("refusing to save a policy without state keys")
        meta = {
            "channels": list(self.channels),
            "reward_ids": list(self.reward_ids),
            "version": 1,
        }
        np.savez_compressed(
            path,
            q=self.q.astype(np.float64),
            keys=self.keys.astype(np.int16),
            meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        )

    @classmethod
    def load(cls, path: str | Path) -> "QPolicy":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            return cls(
                channels=tuple(meta["channels"]),
                q=data["q"].astype(np.float64),
                keys=data["keys"].astype(np.int16),
                reward_ids=tuple(meta["reward_ids"]),
            )


# ---------------------------------------------------------------------------
# Fitting


@dataclass
class FitResult:
    policy: QPolicy
    curves: dict[str, list[tuple[int, float]]]
    sweeps_run: int


def fit(
    table: TransitionTable,
    *,
    discount: float = 0.98,
    sweeps: int = 200,
    tol: float = 1e-6,
    eval_interval: int = 0,
    evaluator: Callable[[QPolicy], Mapping[str, float]] | None = None,
    initial_q: np.ndarray | None = None,
    inclusion: np.ndarray | None = None,
    inclusion_seed: int = 0,
) -> FitResult:
    """Synchronous mean-target sweeps until convergence or the sweep budget.

    Learning-curve points are appended every ``eval_interval`` sweeps when an
    evaluator is supplied; the x-coordinate is the cumulative number of
    per-channel backups (transitions processed for that channel so far).

    ``inclusion`` turns dataset-mixing weights into per-sweep membership:
    transition ``i`` joins a sweep with probability ``inclusion[i]`` (scaled
    so the largest weight is certain), and a state-action pair whose
    transitions all sit out keeps its previous value that sweep. Relative
    draw frequencies from the sampler are thereby preserved without ever
    materializing a resampled dataset.
    """
    n_states, n_actions = table.n_states, table.n_actions
    n_channels = len(table.channels)
    q = np.zeros((n_channels, n_states, n_actions), dtype=np.float64)
    if initial_q is not None:
        if initial_q.shape != q.shape:
            raise ValueError(
                f"initial q has shape {initial_q.shape}, expected {q.shape}"
            )
        q[...] = initial_q
    # Sort once by (state, action) group so each sweep reduces contiguous runs.
    group = table.states.astype(np.int64) * n_actions + table.actions
    order = np.argsort(group, kind="stable")
    group_sorted = group[order]
    starts = np.flatnonzero(np.diff(group_sorted, prepend=-1))
    seen_groups = group_sorted[starts]
    counts = np.diff(starts, append=len(group_sorted)).astype(np.float64)
    rewards_sorted = table.rewards[order].T.astype(np.float64)  # [channels, n]
    next_sorted = table.next_states[order]
    segment_ids = np.repeat(np.arange(len(starts)), counts.astype(np.int64))
    include_p = None
    include_rng = None
    if inclusion is not None:
        inclusion = np.asarray(inclusion, dtype=np.float64)
        if inclusion.shape != (len(table),):
            raise ValueError(
                f"inclusion has shape {inclusion.shape}, expected ({len(table)},)"
            )
        if inclusion.min() < 0 or inclusion.max() <= 0:
            raise ValueError("inclusion weights must be non-negative with a positive max")
        include_p = inclusion[order] / inclusion.max()
        include_rng = np.random.default_rng(inclusion_seed)
    policy = QPolicy(
        channels=table.channels, q=q, keys=table.keys, reward_ids=table.reward_ids
    )
    curves: dict[str, list[tuple[int, float]]] = {ch: [] for ch in table.channels}
    transitions = len(table)
    q_flat = q.reshape(n_channels, n_states * n_actions)
    sweeps_run = 0
    for sweep_number in range(1, sweeps + 1):
        best_next = q.max(axis=2)  # [channels, states]
        targets = rewards_sorted + discount * best_next[:, next_sorted]
        if include_p is None:
            means = np.add.reduceat(targets, starts, axis=1) / counts
            delta = float(np.max(np.abs(means - q_flat[:, seen_groups])))
            q_flat[:, seen_groups] = means  # unseen pairs stay at zero
        else:
            drawn = include_rng.random(transitions) < include_p
            drawn_counts = np.bincount(segment_ids, weights=drawn, minlength=len(starts))
            sums = np.add.reduceat(targets * drawn, starts, axis=1)
            hit = drawn_counts > 0
            means = sums[:, hit] / drawn_counts[hit]
            hit_groups = seen_groups[hit]
            delta = float(np.max(np.abs(means - q_flat[:, hit_groups]), initial=0.0))
            q_flat[:, hit_groups] = means
        sweeps_run = sweep_number
        if eval_interval and evaluator is not None and sweep_number % eval_interval == 0:
            for channel, value in evaluator(policy).items():
                curves[channel].append((sweep_number * transitions, float(value)))
        if delta < tol:
            break
    return FitResult(policy=policy, curves=curves, sweeps_run=sweeps_run)


# ---------------------------------------------------------------------------
# Rollouts and evaluation


def evaluate(
    policy: QPolicy,
    channel: str,
    *,
    episodes: int = 5,
    max_steps: int = 400,
    seed: int = 0,
    jitter: float = 0.05,
) -> float:
    """Mean rollout return (sum of per-step channel reward).

    Rollouts are greedy except for a small seeded ``jitter`` probability of
    a random action. The policy itself is deterministic, so without jitter a
    rollout that wanders into unmodelled states can cycle forever between
    two of them; the jitter breaks such cycles while keeping runs repeatable.
    """
    reward_id = policy.reward_id(channel)
    total = 0.0
    for episode in range(episodes):
        rng = np.random.default_rng((seed, episode))
        state = world_lib.reset(seed * 10007 + episode)
        for _ in range(max_steps):
            action = policy.act(state, channel, epsilon=jitter, rng=rng)
            state = world_lib.step(state, action)
            total += reward_lib.compute(reward_id, state)
    return total / episodes


def make_evaluator(
    channels: Sequence[str],
    *,
    episodes: int = 3,
    max_steps: int = 400,
    seed: int = 0,
) -> Callable[[QPolicy], dict[str, float]]:
    """Evaluator callback for ``fit`` covering the given reward channels."""

    def evaluator(policy: QPolicy) -> dict[str, float]:
        return {
            channel: evaluate(
                policy, channel, episodes=episodes, max_steps=max_steps, seed=seed
            )
            for channel in channels
        }

    return evaluator


def rollout_plan(
    policy: QPolicy,
    library,
    plan,
    *,
    seed: int,
    segment_steps: int = 50,
    source: str = "self-improvement",
    episode_id: str | None = None,
    jitter: float = 0.05,
) -> Episode:
    """Execute a grounded plan skill by skill and judge the outcome.

    Each retrieved skill runs for ``segment_steps`` steps, greedy except for
    a small seeded ``jitter`` probability of a random action (see
    ``evaluate``); every step records the full set of library reward
    channels so the episode can train any current skill without relabeling.
    """
    channel_map = _channel_map(library)
    state = world_lib.reset(seed)
    initial = state
    rng = np.random.default_rng((seed, plan.plan_id))
    steps: list[Step] = []
    segments: list[Segment] = []
    for position, caption in enumerate(plan.retrieved_skills):
        for _ in range(segment_steps):
            action = policy.act(state, caption, epsilon=jitter, rng=rng)
            state = world_lib.step(state, action)
            steps.append(
                Step(
                    state=state,
                    action=int(action),
                    rewards={
                        cap: reward_lib.compute(rid, state)
                        for cap, rid in channel_map.items()
                    },
                )
            )
        segments.append(
            Segment(caption, position * segment_steps, (position + 1) * segment_steps)
        )
    episode = Episode(
        episode_id=episode_id or f"plan{plan.plan_id}-seed{seed}",
        seed=seed,
        source=source,
        success=False,
        initial_state=initial,
        segments=segments,
        steps=steps,
    )
    success, _ = reward_lib.judge_success(episode, plan)
    episode.success = success
    return episode


# ---------------------------------------------------------------------------
# Scripted expert and pretraining data


def stack_expert_action(
    state: WorldState,
    mover: str,
    base: str,
    rng: np.random.Generator,
    epsilon: float = 0.0,
) -> Action:
    """Hand-written controller that stacks ``mover`` onto ``base``.

    Grabs the mover, carries it above any possible stack, releases it over
    the base column. With probability ``epsilon`` a uniformly random action
    is taken instead, which spreads the data over nearby states.
    """
    if epsilon > 0.0 and float(rng.random()) < epsilon:
        return Action(int(rng.integers(N_ACTIONS)))
    tx, ty, tz = state.tcp
    if state.held is not None and state.held != mover:
        return Action.OPEN
    mx, my, mz = state.objects[mover]
    bx, by, bz = state.objects[base]
    if state.held == mover:
        if (tx, ty) == (bx, by):
            return Action.OPEN
        if tz < _TRAVEL_Z:
            return Action.MOVE_PZ
        if tx != bx:
            return Action.MOVE_PX if bx > tx else Action.MOVE_NX
        return Action.MOVE_PY if by > ty else Action.MOVE_NY
    if (mx, my, mz) == (bx, by, bz + 1):
        # done: retreat upward and idle (a no-op once at the ceiling) rather
        # than re-grabbing the placed block
        return Action.MOVE_PZ
    if (tx, ty, tz) == (mx, my, mz):
        return Action.CLOSE
    if tx != mx:
        return Action.MOVE_PX if mx > tx else Action.MOVE_NX
    if ty != my:
        return Action.MOVE_PY if my > ty else Action.MOVE_NY
    return Action.MOVE_PZ if mz > tz else Action.MOVE_NZ


def generate_pretraining_data(
    library,
    *,
    episodes_per_pair: int = 600,
    steps: int = 50,
    epsilon: float = 0.2,
    seed: int = 0,
) -> list[Episode]:
    """Expert stacking episodes, round-robin over all ordered color pairs.

    Every step records every library reward channel, so one corpus trains
    the whole base skill set.
    """
    pairs = [(a, b) for a in world_lib.COLORS for b in world_lib.COLORS if a != b]
    channel_map = _channel_map(library)
    episodes: list[Episode] = []
    counter = 0
    for _ in range(episodes_per_pair):
        for mover, base in pairs:
            counter += 1
            episode_seed = seed * 100003 + counter
            rng = np.random.default_rng((seed, counter))
            state = world_lib.reset(episode_seed)
            initial = state
            step_list: list[Step] = []
            for _ in range(steps):
                action = stack_expert_action(state, mover, base, rng, epsilon)
                state = world_lib.step(state, action)
                step_list.append(
                    Step(
                        state=state,
                        action=int(action),
                        rewards={
                            cap: reward_lib.compute(rid, state)
                            for cap, rid in channel_map.items()
                        },
                    )
                )
            caption = f"stack {mover} on {base}"
            episodes.append(
                Episode(
                    episode_id=f"pretrain-{counter}",
                    seed=episode_seed,
                    source="pretraining",
                    success=step_list[-1].rewards.get(caption, 0.0) > 0.95,
                    initial_state=initial,
                    segments=[Segment(caption, 0, steps)],
                    steps=step_list,
                )
            )
    return episodes
