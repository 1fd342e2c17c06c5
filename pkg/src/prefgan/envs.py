"""Analytic continuous-control environments with hidden true rewards.

Both environments are immutable specs plus pure transition functions, so any
number of rollout workers can share one instance.  The true reward is never
exposed to the learner; only the synthetic oracle and evaluation code read it.

PointGoal: reach a fixed goal on the plane with velocity commands.
Pendulum: torque-limited swing-up, angle measured from upright.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    dt: float
    horizon: int
    gamma: float = 0.99

    def __post_init__(self):
        if not np.all(self.action_low < self.action_high):
            raise ValueError("action_low must be < action_high componentwise")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")


@dataclass(frozen=True)
class StepResult:
    next_state: np.ndarray
    true_reward: float
    done: bool


@dataclass(frozen=True)
class Trajectory:
    """One full episode as recorded by a rollout worker."""

    env_name: str
    episode_id: int
    seed: int
    states: np.ndarray      # (T+1, state_dim), includes the terminal state
    actions: np.ndarray     # (T, action_dim)
    true_rewards: np.ndarray  # (T,)
    log_probs: np.ndarray   # (T,)

    @property
    def length(self) -> int:
        return self.actions.shape[0]

    @property
    def true_return(self) -> float:
        return float(self.true_rewards.sum())


def _check_dims(env, state, action):
    state = np.asarray(state, dtype=float)
    action = np.asarray(action, dtype=float)
    if state.shape != (env.spec.state_dim,):
        raise ValueError(
            f"{env.spec.name}: state shape {state.shape}, expected ({env.spec.state_dim},)"
        )
    if action.shape != (env.spec.action_dim,):
        raise ValueError(
            f"{env.spec.name}: action shape {action.shape}, expected ({env.spec.action_dim},)"
        )
    return state, action


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    w = (theta + math.pi) % (2.0 * math.pi) - math.pi
    if w == -math.pi:
        w = math.pi
    return w


class PointGoal:
    """Planar reaching: position in [-5, 5]^2, velocity command in [-1, 1]^2.

    Euler step pos' = pos + dt * a, positions clamped to the arena.  Reward is
    -(distance to goal) - 0.01 * |a|^2, maximal (zero) when sitting on the
    goal with zero command.
    """

    GOAL = np.array([2.0, 2.0])
    ARENA = 5.0

    def __init__(self):
        self.spec = EnvSpec(
            name="pointgoal",
            state_dim=2,
            action_dim=2,
            action_low=np.array([-1.0, -1.0]),
            action_high=np.array([1.0, 1.0]),
            dt=0.1,
            horizon=100,
        )

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return rng.uniform(-1.0, 1.0, size=2)

    def step(self, state, action, t: int | None = None) -> StepResult:
        state, action = _check_dims(self, state, action)
        a = np.clip(action, self.spec.action_low, self.spec.action_high)
        reward = self.true_reward(state, a)
        nxt = np.clip(state + self.spec.dt * a, -self.ARENA, self.ARENA)
        done = False if t is None else (t + 1 >= self.spec.horizon)
        return StepResult(next_state=nxt, true_reward=reward, done=done)

    def true_reward(self, state, action) -> float:
        state, action = _check_dims(self, state, action)
        a = np.clip(action, self.spec.action_low, self.spec.action_high)
        dist = float(np.linalg.norm(state - self.GOAL))
        return -dist - 0.01 * float(a @ a)

    def reward_action_grad(self, state, action) -> np.ndarray:
        """d true_reward / d action, used by the true-reward baseline."""
        _, action = _check_dims(self, state, action)
        return -0.02 * np.clip(action, self.spec.action_low, self.spec.action_high)


class Pendulum:
    """Torque-limited swing-up; state (theta, theta_dot), theta=0 upright.

    theta_ddot = 15 sin(theta) + 3 u  (g=10, m=l=1), semi-implicit Euler,
    theta_dot clamped to [-8, 8], theta wrapped to (-pi, pi].
    """

    MAX_SPEED = 8.0

    def __init__(self):
        self.spec = EnvSpec(
            name="pendulum",
            state_dim=2,
            action_dim=1,
            action_low=np.array([-2.0]),
            action_high=np.array([2.0]),
            dt=0.05,
            horizon=200,
        )

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return np.array([rng.uniform(-math.pi, math.pi), rng.uniform(-1.0, 1.0)])

    def step(self, state, action, t: int | None = None) -> StepResult:
        state, action = _check_dims(self, state, action)
        u = float(np.clip(action, self.spec.action_low, self.spec.action_high)[0])
        theta, theta_dot = float(state[0]), float(state[1])
        reward = self.true_reward(state, action)
        acc = 15.0 * math.sin(theta) + 3.0 * u
        new_dot = float(np.clip(theta_dot + self.spec.dt * acc, -self.MAX_SPEED, self.MAX_SPEED))
        new_theta = wrap_angle(theta + self.spec.dt * new_dot)
        done = False if t is None else (t + 1 >= self.spec.horizon)
        return StepResult(
            next_state=np.array([new_theta, new_dot]), true_reward=reward, done=done
        )

    def true_reward(self, state, action) -> float:
        state, action = _check_dims(self, state, action)
        u = float(np.clip(action, self.spec.action_low, self.spec.action_high)[0])
        theta = wrap_angle(float(state[0]))
        theta_dot = float(state[1])
        return -(theta * theta + 0.1 * theta_dot * theta_dot + 0.001 * u * u)

    def reward_action_grad(self, state, action) -> np.ndarray:
        _, action = _check_dims(self, state, action)
        u = np.clip(action, self.spec.action_low, self.spec.action_high)
        return -0.002 * u


ENVS = {"pointgoal": PointGoal, "pendulum": Pendulum}


def make_env(name: str):
    try:
        return ENVS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None


class TrueRewardSnapshot:
    """Adapter exposing the hidden env reward with the reward-model snapshot
    interface, for policies trained directly on true reward.  Outputs are
    standardized by the provided running statistics (mean, scale) so the
    policy sees the same reward scale in both training modes."""

    def __init__(self, env, mean: float = 0.0, scale: float = 1.0):
        self.env = env
        self.mean = mean
        self.scale = max(scale, 1e-6)

    def values(self, states, actions) -> np.ndarray:
        raw = np.array([self.env.true_reward(s, a) for s, a in zip(states, actions)])
        return (raw - self.mean) / self.scale

    def action_grads(self, states, actions) -> np.ndarray:
        return (
            np.stack([self.env.reward_action_grad(s, a) for s, a in zip(states, actions)])
            / self.scale
        )
