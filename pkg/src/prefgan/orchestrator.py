"""End-to-end training loop: rollouts, query scheduling and routing,
discriminator fine-tuning and handoff, reward fitting, policy updates,
metrics, persistence, and resume.

Each outer iteration rolls a batch of episodes, labels the comparisons the
schedule owes for those episodes, maintains the discriminator (GAN-test
evaluation, fine-tuning, the human-to-discriminator handoff), refits the
reward model on recent comparisons, and updates the policy: the n-step
advantage actor-critic backbone on fresh transitions plus the
preference-shaped ascent on the strict partitions.

Label routing: before handoff, scheduled queries go to the configured
channel (a human gateway, or the synthetic oracle); after the discriminator
clears the GAN-test threshold on held-out pairs, scheduled queries go to it
instead, and the human/oracle channel is consulted only at fine-tune
events.  Three consecutive GAN-test collapses below 0.5 revert the handoff.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import json

import numpy as np

from . import discriminator as disc_mod
from . import nets, persist, policy, reward
from .config import ConfigError, RunConfig, effective_segment_len, load_config, save_config
from .envs import TrueRewardSnapshot, make_env
from .preferences import (
    PrefDatabase,
    c3_label,
    extract_pairs,
    get_schedule,
    next_query_budget,
    oracle_label,
)

EVAL_SEED = 424242

RNG_STREAMS = ("rollout", "pairs", "heldout", "finetune", "policy", "fit", "eval")


class LabelChannelTimeout(RuntimeError):
    """The human label channel produced no judgment within the timeout."""


class OracleChannel:
    """Synthetic labeler comparing hidden discounted true reward."""

    source = "oracle"

    def __init__(self, env, eps_tie: float):
        self.env = env
        self.eps_tie = eps_tie

    def label(self, pair, timestamp: int):
        return oracle_label(pair, self.env, self.eps_tie, timestamp)


@dataclass(eq=False)
class RunState:
    config: RunConfig
    env: object
    schedule: object
    learner: policy.PolicyLearner
    rm: reward.RewardModel
    disc: disc_mod.Discriminator
    db: PrefDatabase
    rngs: dict
    buffer: list = field(default_factory=list)
    episode: int = 0
    iteration: int = 0
    step_count: int = 0
    handoff: bool = False
    collapse_streak: int = 0
    disc_trained_on: int = 0       # C1/C3 record count at last discriminator training
    ft_label_batches: int = 0      # fine-tune events that consumed fresh labels
    ft_batches_before_handoff: int = 0
    last_gan_eval_episode: int | None = None
    gan_history: list = field(default_factory=list)
    ledger: dict = field(default_factory=dict)
    metrics: list = field(default_factory=list)
    last_objective: float = float("nan")
    conv_prev: dict | None = None
    conv_streak: int = 0
    stop_reason: str | None = None
    human_channel: object = None

    @property
    def k(self) -> int:
        return effective_segment_len(self.config)

    def labels_consumed(self) -> dict:
        out = {}
        for kind in ("scheduled", "finetune"):
            for src, n in self.ledger.get(kind, {}).items():
                out[src] = out.get(src, 0) + n
        return out


def _empty_ledger() -> dict:
    return {
        "scheduled": {},
        "finetune": {},
        "incomparable": {},
    }


def init_run_state(config: RunConfig, human_channel=None) -> RunState:
    env = make_env(config.env)
    schedule = get_schedule(config.schedule)
    root = np.random.SeedSequence(config.seed)
    rngs = {name: np.random.default_rng(child) for name, child in zip(RNG_STREAMS, root.spawn(len(RNG_STREAMS)))}
    gamma = env.spec.gamma if config.gamma is None else config.gamma
    learner = policy.init_policy_learner(env, seed=config.seed, alpha=config.alpha, gamma=gamma)
    rm = reward.init_reward_model(env.spec.state_dim, env.spec.action_dim, seed=config.seed + 1)
    k = effective_segment_len(config)
    disc = disc_mod.init_discriminator(
        k, env.spec.state_dim, env.spec.action_dim, seed=config.seed + 2
    )
    state = RunState(
        config=config,
        env=env,
        schedule=schedule,
        learner=learner,
        rm=rm,
        disc=disc,
        db=PrefDatabase(),
        rngs=rngs,
        ledger=_empty_ledger(),
        human_channel=human_channel,
    )
    if config.out_dir:
        os.makedirs(config.out_dir, exist_ok=True)
        save_config(config, os.path.join(config.out_dir, "config.json"))
    return state


def _channel(state: RunState):
    """The C1 channel: a human gateway unless the oracle replaces it."""
    if state.config.oracle or state.human_channel is None:
        if not state.config.oracle:
            raise LabelChannelTimeout(
                "human label channel unavailable: no gateway attached and --oracle not set"
            )
        return OracleChannel(state.env, state.config.eps_tie)
    return state.human_channel


def route_query(state: RunState, pair):
    """Label one scheduled pair and account for it.

    Post-handoff, scheduled queries go to the discriminator; otherwise to the
    configured channel (human gateway or oracle) or, for learned-reward
    schedules, to the reward-model comparison.
    """
    cfg = state.config
    if state.handoff and state.schedule.source == "discriminator":
        rec = disc_mod.c2_label(state.disc, pair, cfg.eps_gap, timestamp=state.step_count)
    elif state.schedule.source == "reward_model":
        rec = c3_label(pair, state.rm, state.learner.gamma, cfg.eps_tie, timestamp=state.step_count)
    else:
        rec = _channel(state).label(pair, timestamp=state.step_count)
    bucket = state.ledger["scheduled"]
    bucket[rec.source] = bucket.get(rec.source, 0) + 1
    if rec.incomparable:
        inc = state.ledger["incomparable"]
        inc[rec.source] = inc.get(rec.source, 0) + 1
    else:
        state.db.add(rec)
    return rec


def _buffer_slots(state: RunState) -> int:
    k = state.k
    return sum(max(0, t.length - k + 1) for t in state.buffer)


def _rollout_batch(state: RunState, n: int) -> list:
    cfg = state.config
    trajs = policy.rollout(
        state.learner,
        state.env,
        n,
        seed=int(state.rngs["rollout"].integers(2**63)),
        n_workers=cfg.n_workers,
        parallel=cfg.parallel_rollouts,
        rollout_limit=cfg.rollout_limit,
        episode_id_base=state.episode,
    )
    state.episode += n
    state.step_count += sum(t.length for t in trajs)
    state.buffer = (state.buffer + trajs)[-cfg.pairs_buffer_episodes :]
    if cfg.out_dir:
        persist.append_trajectories(
            os.path.join(cfg.out_dir, "trajectories.csv"),
            trajs,
            header=persist.trajectory_header(state.env.spec.state_dim, state.env.spec.action_dim),
        )
    return trajs


def _train_discriminator(state: RunState) -> None:
    cfg = state.config
    d_p, d_np = state.db.partitions(
        sources=("human", "oracle", "reward_model"), window=cfg.disc_train_window
    )
    if not d_p and not d_np:
        return
    disc = state.disc
    for _ in range(cfg.disc_train_steps):
        disc = disc_mod.train_step(disc, d_p, d_np, cfg.lr_disc)
    state.disc = disc
    state.disc_trained_on = len(state.db.by_source("human", "oracle", "reward_model"))


def _fine_tune_labels(state: RunState) -> None:
    """Consume one batch of fresh channel labels for discriminator training."""
    cfg = state.config
    pairs = extract_pairs(
        state.buffer,
        state.k,
        cfg.fine_tune_batch,
        seed=int(state.rngs["finetune"].integers(2**63)),
        exclude_slots=state.db.used_slots(),
    )
    for pair in pairs:
        if cfg.fine_tune_source == "c3":
            rec = c3_label(pair, state.rm, state.learner.gamma, cfg.eps_tie, timestamp=state.step_count)
        else:
            rec = _channel(state).label(pair, timestamp=state.step_count)
        bucket = state.ledger["finetune"]
        bucket[rec.source] = bucket.get(rec.source, 0) + 1
        if not rec.incomparable:
            state.db.add(rec)
    state.ft_label_batches += 1
    if not state.handoff:
        state.ft_batches_before_handoff += 1


def _gan_test_now(state: RunState) -> float:
    cfg = state.config
    held = extract_pairs(
        state.buffer,
        state.k,
        cfg.gan_holdout_pairs,
        seed=int(state.rngs["heldout"].integers(2**63)),
        exclude_slots=state.db.used_slots(),
    )
    oracle = OracleChannel(state.env, cfg.eps_tie)
    return disc_mod.gan_test(
        state.disc, held, lambda p: oracle.label(p, state.step_count), cfg.eps_gap
    )


def _discriminator_maintenance(state: RunState) -> None:
    """GAN-test evaluation, fine-tuning, handoff and collapse bookkeeping."""
    cfg = state.config
    if state.schedule.source != "discriminator":
        return
    if len(state.db.by_source("human", "oracle", "reward_model")) == 0:
        return
    due = (
        state.last_gan_eval_episode is None
        or state.episode - state.last_gan_eval_episode >= cfg.gan_eval_period
    )
    if not due:
        return
    state.last_gan_eval_episode = state.episode
    acc = _gan_test_now(state)
    if acc < cfg.gan_threshold:
        fresh = len(state.db.by_source("human", "oracle", "reward_model"))
        if fresh <= state.disc_trained_on:
            # no unseen channel labels: a fine-tune event buys a fresh batch
            _fine_tune_labels(state)
        _train_discriminator(state)
        acc = _gan_test_now(state)
    state.gan_history.append((state.episode, acc))
    if not state.handoff:
        if acc >= cfg.gan_threshold:
            state.handoff = True
            state.collapse_streak = 0
    else:
        if acc < cfg.collapse_threshold:
            state.collapse_streak += 1
            if state.collapse_streak >= cfg.collapse_patience:
                state.handoff = False
                state.collapse_streak = 0
        else:
            state.collapse_streak = 0


def _reward_snapshot(state: RunState, trajs):
    cfg = state.config
    if cfg.reward_source == "true":
        stat = reward.RunningStat()
        stat.update(np.concatenate([t.true_rewards for t in trajs]))
        return TrueRewardSnapshot(state.env, stat.mean, stat.std / cfg.reward_scale)
    states = np.concatenate([t.states[:-1] for t in trajs])
    actions = np.concatenate([t.actions for t in trajs])
    state.rm.stats = reward.RunningStat()
    state.rm.stats.update(reward.step_rewards(state.rm, states, actions))
    return reward.RewardSnapshot(state.rm, output_scale=cfg.reward_scale)


def _fit_reward(state: RunState) -> None:
    cfg = state.config
    if cfg.reward_source != "model" or len(state.db) == 0:
        return
    recent = PrefDatabase()
    for rec in state.db.records[-cfg.reward_window :]:
        recent.add(rec)
    state.rm, _ = reward.fit(
        state.rm,
        recent,
        ("human", "oracle", "discriminator", "reward_model"),
        epochs=cfg.reward_epochs,
        lr=cfg.lr_reward,
        batch_size=cfg.reward_batch,
        seed=int(state.rngs["fit"].integers(2**31)),
    )


def _update_policy(state: RunState, trajs, snap) -> None:
    cfg = state.config
    rng = state.rngs["policy"]
    rewards = [snap.values(t.states[:-1], t.actions) for t in trajs]
    tset = policy.nstep_transition_set(trajs, rewards, cfg.nstep, state.learner.gamma)
    n = tset["states"].shape[0]
    learner = state.learner
    for _ in range(cfg.backbone_steps):
        idx = rng.choice(n, size=min(cfg.backbone_batch, n), replace=False)
        mb = {key: val[idx] for key, val in tset.items()}
        mb["targets"] = policy.nstep_targets(learner, mb)
        learner = policy.critic_update(learner, mb["states"], mb["targets"], cfg.lr_critic)
        learner = policy.actor_critic_step(learner, mb, cfg.lr_actor, rng)
    if cfg.reward_source == "model" and state.db.strict_count >= cfg.shape_min_records:
        d_p, d_np = state.db.partitions(window=cfg.shape_window)
        for _ in range(cfg.shape_steps):
            batch = policy.build_shaped_batch(
                learner, snap, d_p, d_np, rng, cfg.shape_max_segments
            )
            learner = policy.policy_gradient_step(learner, batch, cfg.lr_shape, snap)
            state.last_objective = policy.shaped_objective(learner, batch, snap)
    state.learner = learner


def _check_convergence(state: RunState) -> bool:
    cfg = state.config
    current = {
        "actor": state.learner.actor.params.copy(),
        "disc": state.disc.model.params.copy(),
        "reward": state.rm.model.params.copy(),
    }
    converged = False
    if state.conv_prev is not None:
        deltas = [
            float(np.linalg.norm(current[name] - state.conv_prev[name])) for name in current
        ]
        if all(d < cfg.convergence_delta for d in deltas):
            state.conv_streak += 1
        else:
            state.conv_streak = 0
        converged = state.conv_streak >= cfg.convergence_patience
    state.conv_prev = current
    return converged


def run_iteration(state: RunState) -> None:
    cfg = state.config
    first_episode = state.episode
    batch = min(cfg.episodes_per_iteration, cfg.episodes - state.episode)
    trajs = _rollout_batch(state, batch)

    if cfg.reward_source == "model":
        owed = sum(
            next_query_budget(state.schedule, ep) for ep in range(first_episode, state.episode)
        )
        # the initial batch can owe more labels than one rollout batch can
        # pair up; keep rolling fresh episodes until the slots cover it
        while _buffer_slots(state) < 2 * owed and state.episode < cfg.episodes:
            extra = min(cfg.episodes_per_iteration, cfg.episodes - state.episode)
            before = state.episode
            trajs += _rollout_batch(state, extra)
            owed += sum(
                next_query_budget(state.schedule, ep) for ep in range(before, state.episode)
            )
        _discriminator_maintenance(state)
        if owed > 0:
            pairs = extract_pairs(
                state.buffer, state.k, owed, seed=int(state.rngs["pairs"].integers(2**63))
            )
            for pair in pairs:
                route_query(state, pair)
        _fit_reward(state)

    snap = _reward_snapshot(state, trajs)
    _update_policy(state, trajs, snap)

    latest_acc = state.gan_history[-1][1] if state.gan_history else float("nan")
    consumed = state.labels_consumed()
    for traj in trajs:
        state.metrics.append(
            {
                "episode": traj.episode_id,
                "true_return": traj.true_return,
                "objective": state.last_objective,
                "alpha": float(state.learner.alpha),
                "labels_human": consumed.get("human", 0),
                "labels_oracle": consumed.get("oracle", 0),
                "labels_discriminator": consumed.get("discriminator", 0),
                "labels_reward_model": consumed.get("reward_model", 0),
                "gan_test": float(latest_acc),
                "handoff": state.handoff,
            }
        )
    state.iteration += 1

    if _check_convergence(state):
        state.stop_reason = "converged"
    elif state.episode >= cfg.episodes:
        state.stop_reason = "episode-limit"
    elif state.iteration >= cfg.max_iterations:
        state.stop_reason = "iteration-limit"

    if cfg.out_dir:
        save_run_state(state)


def run(config: RunConfig, human_channel=None, resume: bool = False) -> RunState:
    """Execute the full loop until the episode budget, the iteration limit,
    or parameter convergence stops it; returns the final state."""
    if resume:
        if not config.out_dir:
            raise ConfigError("resume requires out_dir")
        state = load_run_state(config.out_dir, human_channel=human_channel)
    else:
        state = init_run_state(config, human_channel=human_channel)
    while state.stop_reason is None:
        run_iteration(state)
    return state


def evaluate(state: RunState, n_episodes: int, seed: int = EVAL_SEED) -> float:
    """Mean true return of the deterministic policy; touches nothing."""
    return policy.evaluate_policy(state.learner, state.env, n_episodes, seed)


def human_saving_report(state: RunState) -> dict:
    """Label consumption by source, as fractions of all labels consumed, and
    the saving relative to a human-per-episode schedule of the same length."""
    consumed = state.labels_consumed()
    total = sum(consumed.values())
    fractions = {src: (n / total if total else 0.0) for src, n in consumed.items()}
    human_like = consumed.get("human", 0) + consumed.get("oracle", 0)
    last_episode = max(state.episode - 1, 0)
    baseline = 175 + 6 * last_episode
    return {
        "total_labels": total,
        "consumed": consumed,
        "fractions": fractions,
        "human_oracle_fraction": (human_like / total) if total else 0.0,
        "per_episode_baseline": baseline,
        "saving_vs_baseline": 1.0 - (human_like / baseline if baseline else 0.0),
    }


# -- persistence -------------------------------------------------------------


def save_run_state(state: RunState) -> None:
    out = state.config.out_dir
    models = os.path.join(out, "models")
    os.makedirs(models, exist_ok=True)
    nets.save_model(state.learner.actor, os.path.join(models, "actor.json"))
    nets.save_model(state.learner.critic, os.path.join(models, "critic.json"))
    nets.save_model(state.disc.model, os.path.join(models, "discriminator.json"))
    nets.save_model(state.rm.model, os.path.join(models, "reward.json"))
    persist.write_prefdb(os.path.join(out, "prefdb.jsonl"), state.db)
    persist.write_gan_curve(os.path.join(out, "gan_test.csv"), state.gan_history)
    n_written = getattr(state, "_metrics_written", 0)
    persist.append_metrics(os.path.join(out, "metrics.csv"), state.metrics[n_written:])
    state._metrics_written = len(state.metrics)
    doc = {
        "episode": state.episode,
        "iteration": state.iteration,
        "step_count": state.step_count,
        "handoff": state.handoff,
        "collapse_streak": state.collapse_streak,
        "disc_trained_on": state.disc_trained_on,
        "ft_label_batches": state.ft_label_batches,
        "ft_batches_before_handoff": state.ft_batches_before_handoff,
        "last_gan_eval_episode": state.last_gan_eval_episode,
        "gan_history": [[ep, float(a)] for ep, a in state.gan_history],
        "ledger": state.ledger,
        "conv_streak": state.conv_streak,
        "stop_reason": state.stop_reason,
        "last_objective": float(state.last_objective),
        "reward_stats": state.rm.stats.state(),
        "buffer_episodes": [t.episode_id for t in state.buffer],
        "metrics_written": state._metrics_written,
        "disc_train_log_len": state.disc.steps_trained,
        "rngs": {name: persist.rng_state(gen) for name, gen in state.rngs.items()},
    }
    with open(os.path.join(out, "state.json"), "w") as fh:
        json.dump(doc, fh)


def load_run_state(out_dir: str, human_channel=None) -> RunState:
    config = load_config(os.path.join(out_dir, "config.json"))
    state_path = os.path.join(out_dir, "state.json")
    if not os.path.exists(state_path):
        raise ConfigError(f"no resumable state in {out_dir}")
    with open(state_path) as fh:
        doc = json.load(fh)
    env = make_env(config.env)
    k = effective_segment_len(config)
    trajectories = persist.read_trajectories(
        os.path.join(out_dir, "trajectories.csv"),
        config.env,
        env.spec.state_dim,
        env.spec.action_dim,
    )
    db_path = os.path.join(out_dir, "prefdb.jsonl")
    db = (
        persist.read_prefdb(db_path, trajectories, k)
        if os.path.exists(db_path)
        else PrefDatabase()
    )
    models = os.path.join(out_dir, "models")
    gamma = env.spec.gamma if config.gamma is None else config.gamma
    learner = policy.PolicyLearner(
        actor=nets.load_model(os.path.join(models, "actor.json")),
        critic=nets.load_model(os.path.join(models, "critic.json")),
        alpha=config.alpha,
        gamma=gamma,
        action_low=np.asarray(env.spec.action_low, float),
        action_high=np.asarray(env.spec.action_high, float),
    )
    rm = reward.RewardModel(
        model=nets.load_model(os.path.join(models, "reward.json")),
        stats=reward.RunningStat.from_state(doc["reward_stats"]),
    )
    disc = disc_mod.Discriminator(
        model=nets.load_model(os.path.join(models, "discriminator.json")),
        train_log=[(i, 0.0) for i in range(doc["disc_train_log_len"])],
    )
    state = RunState(
        config=config,
        env=env,
        schedule=get_schedule(config.schedule),
        learner=learner,
        rm=rm,
        disc=disc,
        db=db,
        rngs={name: persist.restore_rng(s) for name, s in doc["rngs"].items()},
        buffer=[trajectories[ep] for ep in doc["buffer_episodes"] if ep in trajectories],
        episode=doc["episode"],
        iteration=doc["iteration"],
        step_count=doc["step_count"],
        handoff=doc["handoff"],
        collapse_streak=doc["collapse_streak"],
        disc_trained_on=doc["disc_trained_on"],
        ft_label_batches=doc["ft_label_batches"],
        ft_batches_before_handoff=doc["ft_batches_before_handoff"],
        last_gan_eval_episode=doc["last_gan_eval_episode"],
        gan_history=[(ep, acc) for ep, acc in doc["gan_history"]],
        ledger=doc["ledger"],
        last_objective=doc["last_objective"],
        stop_reason=doc["stop_reason"],
        conv_streak=doc["conv_streak"],
        human_channel=human_channel,
    )
    # the CSV already holds every persisted row; new rows start from zero
    state._metrics_written = 0
    state.conv_prev = {
        "actor": learner.actor.params.copy(),
        "disc": disc.model.params.copy(),
        "reward": rm.model.params.copy(),
    }
    return state
