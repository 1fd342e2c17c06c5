"""Maximum-entropy actor-critic shaped by preferred/non-preferred segments.

The actor is a Gaussian head squashed into the action box: the net emits a
pre-squash mean and per-dimension log-stddevs (clamped to [-5, 2]); actions
are tanh-mapped into the box and log-densities carry the change-of-variable
correction.  Reported entropies are the closed-form Gaussian entropy before
squashing.

The policy objective averages the entropy-augmented reward over steps drawn
from preferred segments and subtracts the log of the importance-weighted
mean of the same quantity over non-preferred steps.  Each non-preferred
step's weight is exp(discounted entropy-augmented reward) divided by the
current policy density of the logged action; the weights act as fixed
coefficients during a gradient step, so the ascent direction is the exact
gradient of the frozen-weight surrogate implemented here.  The reward's
dependence on the actor flows through reparameterized actions: each batch
step carries frozen noise, the actor's action at that state is
differentiated through the reward snapshot's action gradient.

The critic is a state-value net regressed onto single-sample soft targets
r + gamma * (V(s') - alpha * log pi(a'|s')).  Policy improvement over time
comes from the on-policy advantage actor-critic step (the parallel-worker
training setting this reproduces); the shaped objective steers it toward
preferred behavior and away from non-preferred behavior.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import nets
from .envs import Trajectory

LOG_SIGMA_MIN = -5.0
LOG_SIGMA_MAX = 2.0
_HALF_LN_2PI = 0.5 * math.log(2.0 * math.pi)
_HALF_LN_2PIE = 0.5 * math.log(2.0 * math.pi * math.e)


@dataclass(eq=False)
class PolicyLearner:
    actor: nets.MlpModel
    critic: nets.MlpModel
    alpha: float
    gamma: float
    action_low: np.ndarray
    action_high: np.ndarray
    rollout_buffer: list[Trajectory] = field(default_factory=list)

    @property
    def action_dim(self) -> int:
        return self.action_low.shape[0]


@dataclass(eq=False)
class ShapedBatch:
    """Steps drawn from the strict partitions, with frozen noise and weights."""

    pref_states: np.ndarray    # (P, state_dim)
    pref_offsets: np.ndarray   # (P,) position within the segment
    pref_noise: np.ndarray     # (P, action_dim)
    pref_seg_count: int
    np_states: np.ndarray      # (M, state_dim)
    np_offsets: np.ndarray     # (M,)
    np_actions: np.ndarray     # (M, action_dim) logged actions
    np_noise: np.ndarray       # (M, action_dim)
    np_weights: np.ndarray     # (M,) positive
    q: float                   # sum of weights

    @property
    def pref_count(self) -> int:
        return self.pref_states.shape[0]

    @property
    def np_count(self) -> int:
        return self.np_states.shape[0]


def init_policy_learner(
    env, seed, alpha: float = 0.2, gamma: float | None = None,
    hidden=(64, 64), critic_hidden=(64,),
) -> PolicyLearner:
    spec = env.spec
    actor = nets.init_model(
        (spec.state_dim, *hidden, 2 * spec.action_dim), seed=seed, zero_last_layer=True
    )
    critic = nets.init_model(
        (spec.state_dim, *critic_hidden, 1), seed=seed + 1, zero_last_layer=True
    )
    return PolicyLearner(
        actor=actor,
        critic=critic,
        alpha=alpha,
        gamma=spec.gamma if gamma is None else gamma,
        action_low=np.asarray(spec.action_low, float),
        action_high=np.asarray(spec.action_high, float),
    )


def _head(learner: PolicyLearner, states):
    """Actor outputs split into (mu, clamped log-sigma, clamp mask)."""
    out = nets.forward(learner.actor, states)
    if out.ndim == 1:
        out = out[None, :]
    d = learner.action_dim
    mu = out[:, :d]
    raw = out[:, d:]
    log_sigma = np.clip(raw, LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    mask = (raw > LOG_SIGMA_MIN) & (raw < LOG_SIGMA_MAX)
    return mu, log_sigma, mask


def _box(learner: PolicyLearner):
    mid = (learner.action_low + learner.action_high) / 2.0
    half = (learner.action_high - learner.action_low) / 2.0
    return mid, half


def _log1m_tanh2(u):
    # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for large |u|
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def _squash(learner: PolicyLearner, u):
    mid, half = _box(learner)
    return mid + half * np.tanh(u)


def _log_prob_from_noise(learner: PolicyLearner, log_sigma, eps, u):
    mid, half = _box(learner)
    gauss = np.sum(-_HALF_LN_2PI - log_sigma - 0.5 * eps * eps, axis=1)
    squash = np.sum(np.log(half)[None, :] + _log1m_tanh2(u), axis=1)
    return gauss - squash


def entropy_of(learner: PolicyLearner, states) -> np.ndarray:
    """Closed-form pre-squash Gaussian entropy per state."""
    _, log_sigma, _ = _head(learner, np.atleast_2d(states))
    return np.sum(_HALF_LN_2PIE + log_sigma, axis=1)


def sample_action(learner: PolicyLearner, state, rng) -> tuple[np.ndarray, float, float]:
    """Draw one action; returns (action, log_prob, entropy)."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    mu, log_sigma, _ = _head(learner, np.asarray(state, float)[None, :])
    sigma = np.exp(log_sigma)
    eps = rng.standard_normal(learner.action_dim)[None, :]
    u = mu + sigma * eps
    action = _squash(learner, u)[0]
    log_prob = float(_log_prob_from_noise(learner, log_sigma, eps, u)[0])
    entropy = float(np.sum(_HALF_LN_2PIE + log_sigma))
    return action, log_prob, entropy


def mean_action(learner: PolicyLearner, state) -> np.ndarray:
    mu, _, _ = _head(learner, np.asarray(state, float)[None, :])
    return _squash(learner, mu)[0]


def log_prob_of(learner: PolicyLearner, states, actions) -> np.ndarray:
    """Log-density of logged actions under the current squashed policy."""
    states = np.atleast_2d(np.asarray(states, float))
    actions = np.atleast_2d(np.asarray(actions, float))
    mid, half = _box(learner)
    z = np.clip((actions - mid) / half, -1.0 + 1e-12, 1.0 - 1e-12)
    u = np.arctanh(z)
    mu, log_sigma, _ = _head(learner, states)
    eps = (u - mu) / np.exp(log_sigma)
    return _log_prob_from_noise(learner, log_sigma, eps, u)


# -- preference-shaped objective ------------------------------------------


def _segment_steps(segments):
    states = np.concatenate([np.asarray(s.states, float) for s in segments], axis=0)
    actions = np.concatenate([np.asarray(s.actions, float) for s in segments], axis=0)
    offsets = np.concatenate([np.arange(s.length) for s in segments])
    return states, actions, offsets


def build_shaped_batch(
    learner: PolicyLearner, rhat, dp_segments, dnp_segments, rng, max_segments: int = 32
) -> ShapedBatch:
    """Assemble a step batch from the strict partitions.

    Weights for non-preferred steps are computed at the current policy and
    kept fixed for the lifetime of the batch, as is the per-step
    reparameterization noise.
    """
    dp_segments = list(dp_segments)
    dnp_segments = list(dnp_segments)
    if not dp_segments and not dnp_segments:
        raise ValueError("both segment partitions are empty")

    def pick(segs):
        if len(segs) > max_segments:
            idx = rng.choice(len(segs), size=max_segments, replace=False)
            return [segs[int(i)] for i in idx]
        return segs

    adim = learner.action_dim
    dp = pick(dp_segments)
    if dp:
        p_states, _, p_offsets = _segment_steps(dp)
    else:
        sdim = learner.actor.layer_sizes[0]
        p_states = np.zeros((0, sdim))
        p_offsets = np.zeros(0, dtype=int)
    p_noise = rng.standard_normal((p_states.shape[0], adim))

    dnp = pick(dnp_segments)
    if dnp:
        n_states, n_actions, n_offsets = _segment_steps(dnp)
        disc = learner.gamma ** n_offsets
        r_me = rhat.values(n_states, n_actions) + learner.alpha * entropy_of(learner, n_states)
        logp = log_prob_of(learner, n_states, n_actions)
        weights = np.exp(disc * r_me - logp)
    else:
        sdim = learner.actor.layer_sizes[0]
        n_states = np.zeros((0, sdim))
        n_actions = np.zeros((0, adim))
        n_offsets = np.zeros(0, dtype=int)
        weights = np.zeros(0)
    n_noise = rng.standard_normal((n_states.shape[0], adim))

    return ShapedBatch(
        pref_states=p_states,
        pref_offsets=p_offsets,
        pref_noise=p_noise,
        pref_seg_count=len(dp),
        np_states=n_states,
        np_offsets=n_offsets,
        np_actions=n_actions,
        np_noise=n_noise,
        np_weights=weights,
        q=float(weights.sum()),
    )


def _step_coefficients(batch: ShapedBatch):
    """Per-step multipliers of the discounted entropy-augmented reward."""
    coefs = []
    if batch.pref_count:
        coefs.append(np.ones(batch.pref_count) / batch.pref_seg_count)
    if batch.np_count:
        coefs.append(-batch.np_weights / batch.q)
    return np.concatenate(coefs) if coefs else np.zeros(0)


def _all_steps(batch: ShapedBatch):
    states = np.concatenate([batch.pref_states, batch.np_states], axis=0)
    offsets = np.concatenate([batch.pref_offsets, batch.np_offsets])
    noise = np.concatenate([batch.pref_noise, batch.np_noise], axis=0)
    return states, offsets, noise


def _reparam_r_me(learner: PolicyLearner, rhat, states, noise):
    """Entropy-augmented reward at reparameterized actions, plus the pieces
    needed for its exact actor gradient."""
    mu, log_sigma, mask = _head(learner, states)
    sigma = np.exp(log_sigma)
    u = mu + sigma * noise
    actions = _squash(learner, u)
    r = rhat.values(states, actions)
    ent = np.sum(_HALF_LN_2PIE + log_sigma, axis=1)
    return r + learner.alpha * ent, (u, sigma, mask, actions)


def shaped_objective(learner: PolicyLearner, batch: ShapedBatch, rhat) -> float:
    """Mean discounted entropy-augmented reward over preferred steps minus
    the log of the weighted mean over non-preferred steps."""
    total = 0.0
    if batch.pref_count:
        r_me, _ = _reparam_r_me(learner, rhat, batch.pref_states, batch.pref_noise)
        disc = learner.gamma ** batch.pref_offsets
        total += float(np.sum(disc * r_me) / batch.pref_seg_count)
    if batch.np_count:
        total -= float(np.log(batch.np_weights.mean()))
    if not np.isfinite(total):
        raise ValueError("non-finite shaped objective")
    return total


def shaped_surrogate(learner: PolicyLearner, batch: ShapedBatch, rhat) -> float:
    """Frozen-weight surrogate whose exact gradient is the policy ascent
    direction: the non-preferred log term is replaced by the weighted mean
    of the discounted entropy-augmented reward."""
    states, offsets, noise = _all_steps(batch)
    if states.shape[0] == 0:
        raise ValueError("empty batch")
    coefs = _step_coefficients(batch)
    r_me, _ = _reparam_r_me(learner, rhat, states, noise)
    disc = learner.gamma ** offsets
    return float(np.sum(coefs * disc * r_me))


def policy_gradient(learner: PolicyLearner, batch: ShapedBatch, rhat) -> np.ndarray:
    """Exact actor-parameter gradient of the frozen-weight surrogate."""
    states, offsets, noise = _all_steps(batch)
    if states.shape[0] == 0:
        raise ValueError("empty batch")
    coefs = _step_coefficients(batch) * learner.gamma ** offsets
    _, (u, sigma, mask, actions) = _reparam_r_me(learner, rhat, states, noise)
    _, half = _box(learner)
    da = rhat.action_grads(states, actions)          # (n, adim)
    du = da * half[None, :] * (1.0 - np.tanh(u) ** 2)  # through the squash
    up_mu = coefs[:, None] * du
    up_log_sigma = coefs[:, None] * (du * sigma * noise + learner.alpha) * mask
    upstream = np.concatenate([up_mu, up_log_sigma], axis=1)
    return nets.backward(learner.actor, states, upstream).grad


def policy_gradient_step(
    learner: PolicyLearner, batch: ShapedBatch, lr: float, rhat
) -> PolicyLearner:
    """One ascent step on the shaped objective (actor only; the critic is
    updated separately against its soft targets)."""
    grad = policy_gradient(learner, batch, rhat)
    actor = nets.sgd_step(learner.actor, grad, lr, "ascend")
    return replace(learner, actor=actor)


# -- on-policy actor-critic backbone ----------------------------------------


def log_prob_grad(learner: PolicyLearner, states, actions, coefs) -> np.ndarray:
    """Actor-parameter gradient of sum_i coefs_i * log pi(a_i | s_i).

    The squash correction is constant in the parameters once the action is
    fixed, so only the Gaussian head contributes.
    """
    states = np.atleast_2d(np.asarray(states, float))
    actions = np.atleast_2d(np.asarray(actions, float))
    coefs = np.asarray(coefs, float)
    mid, half = _box(learner)
    u = np.arctanh(np.clip((actions - mid) / half, -1.0 + 1e-12, 1.0 - 1e-12))
    mu, log_sigma, mask = _head(learner, states)
    sigma = np.exp(log_sigma)
    eps = (u - mu) / sigma
    up_mu = coefs[:, None] * eps / sigma
    up_log_sigma = coefs[:, None] * (eps * eps - 1.0) * mask
    upstream = np.concatenate([up_mu, up_log_sigma], axis=1)
    return nets.backward(learner.actor, states, upstream).grad


def _clip_norm(grad: np.ndarray, max_norm: float | None) -> np.ndarray:
    if max_norm is None:
        return grad
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def nstep_transition_set(trajectories, rewards_per_traj, nstep: int, gamma: float) -> dict:
    """Flatten trajectories into per-step arrays with n-step reward sums.

    Each step carries the discounted sum of the next ``nstep`` rewards plus
    the state to bootstrap from and its discount (zero when the episode ends
    inside the window).  Multi-step returns let path progress dominate
    single-step reward noise, which matters when rewards come from a model.
    """
    states, actions, gsums, boot_states, boot_disc = [], [], [], [], []
    for traj, rews in zip(trajectories, rewards_per_traj):
        rews = np.asarray(rews, float)
        T = traj.length
        for t in range(T):
            n = min(nstep, T - t)
            gsums.append(float(gamma ** np.arange(n) @ rews[t : t + n]))
            states.append(traj.states[t])
            actions.append(traj.actions[t])
            if t + n < T:
                boot_states.append(traj.states[t + n])
                boot_disc.append(gamma**n)
            else:
                boot_states.append(traj.states[T])
                boot_disc.append(0.0)
    return {
        "states": np.asarray(states),
        "actions": np.asarray(actions),
        "reward_sums": np.asarray(gsums),
        "boot_states": np.asarray(boot_states),
        "boot_discount": np.asarray(boot_disc),
    }


def nstep_targets(learner: PolicyLearner, tset: dict) -> np.ndarray:
    """Value targets: n-step reward sum plus the discounted critic bootstrap."""
    return tset["reward_sums"] + tset["boot_discount"] * critic_values(
        learner, tset["boot_states"]
    )


def actor_critic_step(
    learner: PolicyLearner, transitions: dict, lr: float, rng,
    max_grad_norm: float | None = 10.0,
) -> PolicyLearner:
    """Standard on-policy max-entropy actor update on rollout transitions.

    The parallel-rollout setting this project reproduces trains the policy
    with an advantage actor-critic; the preference-shaped objective is
    applied on top of it.  Advantages are residuals of ``transitions["targets"]``
    (precomputed, e.g. n-step) or of the one-step soft backup when absent,
    standardized and treated as fixed coefficients; the entropy bonus keeps
    the policy stochastic.  Gradients are norm-clipped, which bootstrapped
    value training needs for stability.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    states = np.atleast_2d(np.asarray(transitions["states"], float))
    actions = np.atleast_2d(np.asarray(transitions["actions"], float))
    if "targets" in transitions:
        targets = np.asarray(transitions["targets"], float)
    else:
        targets = soft_backup_targets(learner, transitions, rng)
    adv = targets - critic_values(learner, states)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = states.shape[0]
    grad = log_prob_grad(learner, states, actions, adv / n)
    if learner.alpha > 0:
        _, _, mask = _head(learner, states)
        ent_up = np.concatenate(
            [np.zeros_like(mask, dtype=float), learner.alpha / n * mask], axis=1
        )
        grad = grad + nets.backward(learner.actor, states, ent_up).grad
    actor = nets.sgd_step(learner.actor, _clip_norm(grad, max_grad_norm), lr, "ascend")
    return replace(learner, actor=actor)


# -- critic ----------------------------------------------------------------


def critic_values(learner: PolicyLearner, states) -> np.ndarray:
    return nets.forward(learner.critic, np.atleast_2d(np.asarray(states, float)))[:, 0]


def soft_backup_targets(learner: PolicyLearner, transitions: dict, rng) -> np.ndarray:
    """r + gamma * (V(s') - alpha * log pi(a'|s')) with one sampled a' per
    transition; terminal steps bootstrap from zero."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    rewards = np.asarray(transitions["rewards"], float)
    next_states = np.atleast_2d(np.asarray(transitions["next_states"], float))
    terminal = np.asarray(transitions["terminal"], bool)
    mu, log_sigma, _ = _head(learner, next_states)
    sigma = np.exp(log_sigma)
    eps = rng.standard_normal(mu.shape)
    u = mu + sigma * eps
    logp = _log_prob_from_noise(learner, log_sigma, eps, u)
    v_soft = critic_values(learner, next_states) - learner.alpha * logp
    return rewards + learner.gamma * np.where(terminal, 0.0, v_soft)


def critic_update(
    learner: PolicyLearner, states, targets, lr: float,
    max_grad_norm: float | None = 10.0,
) -> PolicyLearner:
    """One descent step on the mean squared error to the given targets.

    Norm-clipping keeps the bootstrapped regression from running away as
    value magnitudes grow; it rescales the step without changing direction.
    """
    states = np.atleast_2d(np.asarray(states, float))
    targets = np.asarray(targets, float)
    v = critic_values(learner, states)
    upstream = (2.0 * (v - targets) / targets.size)[:, None]
    grad = nets.backward(learner.critic, states, upstream).grad
    critic = nets.sgd_step(learner.critic, _clip_norm(grad, max_grad_norm), lr, "descend")
    return replace(learner, critic=critic)


def critic_mse(learner: PolicyLearner, states, targets) -> float:
    v = critic_values(learner, states)
    return float(np.mean((v - np.asarray(targets, float)) ** 2))


# -- rollouts ---------------------------------------------------------------


def _run_episode(learner: PolicyLearner, env, episode_id: int, seed_seq, rollout_limit):
    rng = np.random.default_rng(seed_seq)
    reset_seed = int(rng.integers(0, 2**63 - 1))
    horizon = env.spec.horizon if rollout_limit is None else min(env.spec.horizon, rollout_limit)
    state = env.reset(reset_seed)
    states = [state]
    actions, log_probs, rewards = [], [], []
    for t in range(horizon):
        action, log_prob, _ = sample_action(learner, state, rng)
        result = env.step(state, action, t)
        actions.append(action)
        log_probs.append(log_prob)
        rewards.append(result.true_reward)
        state = result.next_state
        states.append(state)
    return Trajectory(
        env_name=env.spec.name,
        episode_id=episode_id,
        seed=reset_seed,
        states=np.asarray(states),
        actions=np.asarray(actions),
        true_rewards=np.asarray(rewards),
        log_probs=np.asarray(log_probs),
    )


def rollout(
    learner: PolicyLearner,
    env,
    n_episodes: int,
    seed,
    n_workers: int = 1,
    parallel: bool = False,
    rollout_limit: int | None = None,
    episode_id_base: int = 0,
) -> list[Trajectory]:
    """Full-episode rollouts of the current stochastic policy.

    Every episode draws its own seed stream from the root seed, so the
    trajectory set is identical whether episodes run sequentially or on a
    worker pool of any size.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    children = np.random.SeedSequence(seed).spawn(n_episodes)
    jobs = [
        (learner, env, episode_id_base + i, children[i], rollout_limit)
        for i in range(n_episodes)
    ]
    if parallel and n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            return list(pool.map(lambda args: _run_episode(*args), jobs))
    return [_run_episode(*job) for job in jobs]


def evaluate_policy(learner: PolicyLearner, env, n_episodes: int, seed) -> float:
    """Mean true return of the deterministic (mean-action) policy."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    children = np.random.SeedSequence(seed).spawn(n_episodes)
    returns = []
    for child in children:
        rng = np.random.default_rng(child)
        state = env.reset(int(rng.integers(0, 2**63 - 1)))
        total = 0.0
        for t in range(env.spec.horizon):
            result = env.step(state, mean_action(learner, state), t)
            total += result.true_reward
            state = result.next_state
        returns.append(total)
    return float(np.mean(returns))
