"""Segments, the preference database, labeling criteria and query schedules.

A Segment is a fixed-length slice of one episode, the unit a labeler
compares.  Labels are preference distributions xi over {1, 2}: all mass on
one side for a strict preference, (0.5, 0.5) for indifference, or the pair
may be marked incomparable, in which case nothing is stored.

Strict records feed the preferred/non-preferred partitions used to train
the discriminator and to shape the policy objective; indifferent records
still carry their fractional xi into the reward losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_TIE = 1e-3

SOURCES = ("human", "oracle", "discriminator", "reward_model")


class PairShortageError(ValueError):
    """Not enough distinct segment slots to draw the requested pairs."""


@dataclass(frozen=True, eq=False)
class Segment:
    env_name: str
    episode_id: int
    start: int
    states: np.ndarray   # (k, state_dim)
    actions: np.ndarray  # (k, action_dim)
    clip_seed: int = 0

    @property
    def length(self) -> int:
        return self.states.shape[0]

    def slot(self) -> tuple[int, int]:
        return (self.episode_id, self.start)


@dataclass(frozen=True, eq=False)
class PreferenceRecord:
    seg1: Segment
    seg2: Segment
    xi: tuple[float, float] | None  # None marks the pair incomparable
    source: str
    timestamp: int = 0
    soft: tuple[float, float] | None = None  # independent per-side scores (C2)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown label source {self.source!r}")
        if self.xi is not None:
            a, b = self.xi
            if a < 0 or b < 0 or abs(a + b - 1.0) > 1e-9:
                raise ValueError(f"xi must be a distribution over {{1,2}}, got {self.xi}")

    @property
    def incomparable(self) -> bool:
        return self.xi is None

    @property
    def strict(self) -> bool:
        return self.xi is not None and (self.xi[0] == 1.0 or self.xi[1] == 1.0)

    @property
    def preferred(self) -> Segment:
        if not self.strict:
            raise ValueError("no preferred side on a non-strict record")
        return self.seg1 if self.xi[0] == 1.0 else self.seg2

    @property
    def non_preferred(self) -> Segment:
        if not self.strict:
            raise ValueError("no non-preferred side on a non-strict record")
        return self.seg2 if self.xi[0] == 1.0 else self.seg1


@dataclass
class PrefDatabase:
    """Append-only store of comparisons plus the derived strict partitions."""

    records: list[PreferenceRecord] = field(default_factory=list)
    _dp: list[Segment] = field(default_factory=list)
    _dnp: list[Segment] = field(default_factory=list)

    def add(self, record: PreferenceRecord) -> None:
        if record.incomparable:
            raise ValueError("incomparable comparisons are never stored")
        self.records.append(record)
        if record.strict:
            self._dp.append(record.preferred)
            self._dnp.append(record.non_preferred)

    @property
    def preferred(self) -> list[Segment]:
        return list(self._dp)

    @property
    def non_preferred(self) -> list[Segment]:
        return list(self._dnp)

    @property
    def strict_count(self) -> int:
        return len(self._dp)

    def by_source(self, *sources: str) -> list[PreferenceRecord]:
        return [r for r in self.records if r.source in sources]

    def partitions(self, sources=None, window: int | None = None):
        """(preferred, non-preferred) from strict records, optionally
        restricted to label sources and to the most recent `window` records."""
        records = self.records if sources is None else self.by_source(*sources)
        strict = [r for r in records if r.strict]
        if window is not None:
            strict = strict[-window:]
        return [r.preferred for r in strict], [r.non_preferred for r in strict]

    def used_slots(self) -> set[tuple[int, int]]:
        return {s.slot() for r in self.records for s in (r.seg1, r.seg2)}

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class QuerySchedule:
    """Label-budget policy: an initial batch, then periodic online batches."""

    name: str
    initial_labels: int
    online_labels: int
    online_period_episodes: int
    source: str

    def __post_init__(self):
        if min(self.initial_labels, self.online_labels, self.online_period_episodes) < 0:
            raise ValueError("schedule counts must be >= 0")
        if self.source not in SOURCES:
            raise ValueError(f"unknown schedule source {self.source!r}")


SCHEDULES = {
    s.name: s
    for s in [
        QuerySchedule("human-175", 175, 6, 1, "human"),
        QuerySchedule("human-345", 345, 6, 1, "human"),
        QuerySchedule("synthetic-175", 175, 175, 100, "oracle"),
        QuerySchedule("gan-assisted-50", 50, 50, 100, "discriminator"),
        QuerySchedule("gan-assisted-175", 175, 175, 100, "discriminator"),
        # Desk-scale analogs: same structure, budgets sized for ~200-episode runs.
        QuerySchedule("oracle-40", 40, 40, 20, "oracle"),
        QuerySchedule("gan-assisted-desk", 20, 40, 5, "discriminator"),
    ]
}


def get_schedule(name: str) -> QuerySchedule:
    try:
        return SCHEDULES[name]
    except KeyError:
        raise ValueError(f"unknown schedule {name!r}; choose from {sorted(SCHEDULES)}") from None


def next_query_budget(schedule: QuerySchedule, episode: int) -> int:
    """Labels owed at this episode: the initial batch at episode 0, online
    batches at every positive multiple of the period."""
    if episode < 0:
        raise ValueError("episode must be >= 0")
    if episode == 0:
        return schedule.initial_labels
    if schedule.online_period_episodes > 0 and episode % schedule.online_period_episodes == 0:
        return schedule.online_labels
    return 0


def extract_pairs(
    trajectories, k: int, n_pairs: int, seed, exclude_slots=frozenset()
) -> list[tuple[Segment, Segment]]:
    """Sample n_pairs segment pairs from 2*n_pairs distinct (episode, start)
    slots, skipping any slot in `exclude_slots`."""
    if k < 1:
        raise ValueError("segment length k must be >= 1")
    slots = []
    for traj in trajectories:
        for start in range(traj.length - k + 1):
            if (traj.episode_id, start) not in exclude_slots:
                slots.append((traj, start))
    need = 2 * n_pairs
    if len(slots) < need:
        raise PairShortageError(
            f"need {need} segment slots for {n_pairs} pairs, only {len(slots)} available"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(slots), size=need, replace=False)
    segments = []
    for idx in chosen:
        traj, start = slots[int(idx)]
        segments.append(
            Segment(
                env_name=traj.env_name,
                episode_id=traj.episode_id,
                start=start,
                states=np.asarray(traj.states[start : start + k], dtype=float),
                actions=np.asarray(traj.actions[start : start + k], dtype=float),
                clip_seed=traj.seed,
            )
        )
    return [(segments[2 * i], segments[2 * i + 1]) for i in range(n_pairs)]


def discounted_sum(rewards, gamma: float) -> float:
    rewards = np.asarray(rewards, dtype=float)
    return float(rewards @ gamma ** np.arange(rewards.size))


def compare_discounted(
    rewards1, rewards2, gamma: float, eps_tie: float = EPS_TIE, ties_to_second: bool = False
) -> tuple[float, float]:
    """xi for a pair given per-step rewards of each side.

    Differences within the tie band are indifferent.  With a zero band,
    exact ties go to the second side when ``ties_to_second`` (the learned-
    reward criterion) and are indifferent otherwise (the oracle).
    """
    d1 = discounted_sum(rewards1, gamma)
    d2 = discounted_sum(rewards2, gamma)
    delta = d1 - d2
    if eps_tie > 0 and abs(delta) <= eps_tie:
        return (0.5, 0.5)
    if ties_to_second:
        return (1.0, 0.0) if delta > 0 else (0.0, 1.0)
    if delta == 0.0:
        return (0.5, 0.5)
    return (1.0, 0.0) if delta > 0 else (0.0, 1.0)


def oracle_label(pair, env, eps_tie: float = EPS_TIE, timestamp: int = 0) -> PreferenceRecord:
    """Synthetic labeler: compares hidden discounted true reward."""
    seg1, seg2 = pair
    r1 = [env.true_reward(s, a) for s, a in zip(seg1.states, seg1.actions)]
    r2 = [env.true_reward(s, a) for s, a in zip(seg2.states, seg2.actions)]
    xi = compare_discounted(r1, r2, env.spec.gamma, eps_tie)
    return PreferenceRecord(seg1=seg1, seg2=seg2, xi=xi, source="oracle", timestamp=timestamp)


def c3_label(
    pair, reward_model, gamma: float = 0.99, eps_tie: float = EPS_TIE, timestamp: int = 0
) -> PreferenceRecord:
    """Labels by the learned reward's discounted segment sums; exact ties
    outside the band go to the second segment."""
    from . import reward as reward_mod

    seg1, seg2 = pair
    r1 = reward_mod.step_rewards(reward_model, seg1.states, seg1.actions)
    r2 = reward_mod.step_rewards(reward_model, seg2.states, seg2.actions)
    xi = compare_discounted(r1, r2, gamma, eps_tie, ties_to_second=True)
    return PreferenceRecord(
        seg1=seg1, seg2=seg2, xi=xi, source="reward_model", timestamp=timestamp
    )
