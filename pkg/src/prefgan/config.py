"""Run configuration: one dataclass, mirrored one-to-one by the JSON config
file.  Flags on the CLI override file values; unknown keys are an error."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # task
    env: str = "pointgoal"
    schedule: str = "oracle-40"
    seed: int = 0
    out_dir: str | None = None
    episodes: int = 200                 # total episode budget
    episodes_per_iteration: int = 5     # initial states sampled per outer iteration
    max_iterations: int = 10_000        # outer iteration limit
    rollout_limit: int | None = None    # per-episode step cap (default: env horizon)
    segment_len: int | None = None      # comparison clip length k (default per env)
    pairs_buffer_episodes: int = 12
    oracle: bool = False                # route the human channel to the synthetic oracle
    reward_source: str = "model"        # "model" | "true" (baseline on the hidden reward)
    # learner
    alpha: float = 0.02
    gamma: float | None = None          # default: env discount
    lr_actor: float = 1e-3
    lr_critic: float = 3e-3
    lr_reward: float = 3e-3
    lr_disc: float = 5e-2
    lr_shape: float = 5e-4
    reward_epochs: int = 4
    reward_batch: int = 32
    reward_window: int = 240            # most recent records used per fit
    reward_scale: float = 0.25
    backbone_steps: int = 40
    backbone_batch: int = 128
    nstep: int = 20
    shape_steps: int = 3
    shape_max_segments: int = 16
    shape_window: int = 100             # most recent strict records shaping draws from
    shape_min_records: int = 8
    # discriminator & handoff
    disc_train_steps: int = 500
    disc_train_window: int = 200
    gan_threshold: float = 0.8
    gan_eval_period: int = 10           # episodes between GAN-test evaluations
    gan_holdout_pairs: int = 50
    fine_tune_batch: int = 12
    fine_tune_source: str = "channel"   # "channel" (ask the labeler) | "c3" (learned reward)
    collapse_threshold: float = 0.5
    collapse_patience: int = 3
    # labeling details
    eps_tie: float = 1e-3
    eps_gap: float = 0.05
    label_timeout_s: float = 10.0
    # rollout workers
    n_workers: int = 6
    parallel_rollouts: bool = False
    # stopping
    convergence_delta: float = 1e-4
    convergence_patience: int = 2

    def __post_init__(self):
        if self.episodes < 1 or self.episodes_per_iteration < 1 or self.max_iterations < 1:
            raise ConfigError("episode and iteration limits must be positive")
        if self.reward_source not in ("model", "true"):
            raise ConfigError(f"reward_source must be 'model' or 'true', got {self.reward_source!r}")
        if self.fine_tune_source not in ("channel", "c3"):
            raise ConfigError(f"fine_tune_source must be 'channel' or 'c3', got {self.fine_tune_source!r}")
        if self.segment_len is not None and self.segment_len < 1:
            raise ConfigError("segment_len must be >= 1")
        for name in ("lr_actor", "lr_critic", "lr_reward", "lr_disc", "lr_shape"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")


# clip length defaults: the desk-scale analog of a five-second comparison clip
DEFAULT_SEGMENT_LEN = {"pointgoal": 25, "pendulum": 50}


def effective_segment_len(cfg: RunConfig) -> int:
    if cfg.segment_len is not None:
        return cfg.segment_len
    try:
        return DEFAULT_SEGMENT_LEN[cfg.env]
    except KeyError:
        raise ConfigError(f"no default segment length for env {cfg.env!r}") from None


def load_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return config_from_dict(doc, origin=str(path))


def config_from_dict(doc: dict, origin: str = "<dict>") -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys in {origin}: {', '.join(unknown)}")
    return RunConfig(**doc)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(dataclasses.asdict(cfg), fh, indent=2)
        fh.write("\n")
