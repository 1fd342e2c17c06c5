"""On-disk formats: trajectory dump, preference database, metrics, RNG state.

Trajectory dump (trajectories.csv): one line per step,
    episode_id,t,s0..s{n-1},a0..a{m-1},true_reward
with a header naming the columns.  Segments elsewhere are referenced by
(episode_id, start_index) into this dump.

Preference database (prefdb.jsonl): one JSON object per stored comparison,
    {"seg1": {"episode_id": .., "start": .., "clip_seed": ..}, "seg2": {...},
     "xi": [a, b], "soft": [y1, y2] | null, "source": "...", "timestamp": n}
Incomparable judgments are never stored, so they never appear here.

Metric rows (metrics.csv) are comma-joined with floats rendered by repr, so
identical runs produce byte-identical files.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .envs import Trajectory
from .preferences import PrefDatabase, PreferenceRecord, Segment


def trajectory_header(state_dim: int, action_dim: int) -> str:
    cols = ["episode_id", "t"]
    cols += [f"s{i}" for i in range(state_dim)]
    cols += [f"a{i}" for i in range(action_dim)]
    cols.append("true_reward")
    return ",".join(cols)


def append_trajectories(path, trajectories, header: str | None = None) -> None:
    new_file = not os.path.exists(path)
    with open(path, "a") as fh:
        if new_file and header:
            fh.write(header + "\n")
        for traj in trajectories:
            for t in range(traj.length):
                row = [str(traj.episode_id), str(t)]
                row += [repr(float(v)) for v in traj.states[t]]
                row += [repr(float(v)) for v in traj.actions[t]]
                row.append(repr(float(traj.true_rewards[t])))
                fh.write(",".join(row) + "\n")


def read_trajectories(path, env_name: str, state_dim: int, action_dim: int) -> dict[int, Trajectory]:
    """Rebuild per-episode trajectories from the dump.

    Final states and log-probs are not part of the dump; the states array is
    reconstructed without the terminal state and log-probs are zeros, which
    is all segment extraction needs.
    """
    episodes: dict[int, list] = {}
    with open(path) as fh:
        next(fh)  # header
        for line in fh:
            parts = line.rstrip("\n").split(",")
            ep = int(parts[0])
            t = int(parts[1])
            vals = [float(v) for v in parts[2:]]
            state = vals[:state_dim]
            action = vals[state_dim : state_dim + action_dim]
            reward = vals[-1]
            episodes.setdefault(ep, []).append((t, state, action, reward))
    out = {}
    for ep, rows in episodes.items():
        rows.sort()
        states = np.array([r[1] for r in rows])
        out[ep] = Trajectory(
            env_name=env_name,
            episode_id=ep,
            seed=0,
            states=np.vstack([states, states[-1:]]),
            actions=np.array([r[2] for r in rows]),
            true_rewards=np.array([r[3] for r in rows]),
            log_probs=np.zeros(len(rows)),
        )
    return out


def _segment_ref(seg: Segment) -> dict:
    return {"episode_id": seg.episode_id, "start": seg.start, "clip_seed": seg.clip_seed}


def write_prefdb(path, db: PrefDatabase) -> None:
    with open(path, "w") as fh:
        for rec in db.records:
            doc = {
                "seg1": _segment_ref(rec.seg1),
                "seg2": _segment_ref(rec.seg2),
                "xi": list(rec.xi),
                "soft": None if rec.soft is None else list(rec.soft),
                "source": rec.source,
                "timestamp": rec.timestamp,
            }
            fh.write(json.dumps(doc) + "\n")


def read_prefdb(path, trajectories: dict[int, Trajectory], k: int) -> PrefDatabase:
    db = PrefDatabase()
    with open(path) as fh:
        for line in fh:
            doc = json.loads(line)
            segs = []
            for key in ("seg1", "seg2"):
                ref = doc[key]
                traj = trajectories[ref["episode_id"]]
                start = ref["start"]
                segs.append(
                    Segment(
                        env_name=traj.env_name,
                        episode_id=ref["episode_id"],
                        start=start,
                        states=traj.states[start : start + k].copy(),
                        actions=traj.actions[start : start + k].copy(),
                        clip_seed=ref["clip_seed"],
                    )
                )
            db.add(
                PreferenceRecord(
                    seg1=segs[0],
                    seg2=segs[1],
                    xi=tuple(doc["xi"]),
                    source=doc["source"],
                    timestamp=doc["timestamp"],
                    soft=None if doc["soft"] is None else tuple(doc["soft"]),
                )
            )
    return db


METRIC_COLUMNS = (
    "episode", "true_return", "objective", "alpha",
    "labels_human", "labels_oracle", "labels_discriminator", "labels_reward_model",
    "gan_test", "handoff",
)


def metric_row_to_line(row: dict) -> str:
    parts = []
    for col in METRIC_COLUMNS:
        v = row[col]
        if isinstance(v, bool):
            parts.append("1" if v else "0")
        elif isinstance(v, float):
            parts.append(repr(v))
        else:
            parts.append(str(v))
    return ",".join(parts)


def append_metrics(path, rows) -> None:
    new_file = not os.path.exists(path)
    with open(path, "a") as fh:
        if new_file:
            fh.write(",".join(METRIC_COLUMNS) + "\n")
        for row in rows:
            fh.write(metric_row_to_line(row) + "\n")


def write_gan_curve(path, history) -> None:
    with open(path, "w") as fh:
        fh.write("episode,gan_test\n")
        for episode, acc in history:
            fh.write(f"{episode},{repr(float(acc))}\n")


def rng_state(gen: np.random.Generator) -> dict:
    state = gen.bit_generator.state
    return json.loads(json.dumps(state, default=int))


def restore_rng(state: dict) -> np.random.Generator:
    gen = np.random.default_rng(0)
    gen.bit_generator.state = state
    return gen
