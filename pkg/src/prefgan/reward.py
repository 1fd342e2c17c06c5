"""Estimated reward model and its pairwise preference losses.

The scalar reward net r(s, a) is trained so that segment sums explain the
stored comparisons.  A segment's value is the plain (undiscounted) sum of
per-step estimates; the predicted probability that segment 1 wins is the
logistic of the value difference, which makes the two predicted
probabilities exact complements.  Discriminator-made labels instead carry
two independent per-side scores, handled by the double cross-entropy loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import nets

PROB_CLAMP = 1e-7


@dataclass
class RunningStat:
    """Streaming mean/std of reward outputs (Welford)."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def update(self, values) -> None:
        for v in np.asarray(values, dtype=float).ravel():
            self.count += 1
            delta = v - self.mean
            self.mean += delta / self.count
            self.m2 += delta * (v - self.mean)

    @property
    def std(self) -> float:
        if self.count < 2:
            return 1.0
        return math.sqrt(self.m2 / (self.count - 1))

    def state(self) -> dict:
        return {"count": self.count, "mean": self.mean, "m2": self.m2}

    @classmethod
    def from_state(cls, doc: dict) -> "RunningStat":
        return cls(count=doc["count"], mean=doc["mean"], m2=doc["m2"])


@dataclass(eq=False)
class RewardModel:
    model: nets.MlpModel
    stats: RunningStat = field(default_factory=RunningStat)


def init_reward_model(state_dim: int, action_dim: int, seed, hidden=(64, 64)) -> RewardModel:
    model = nets.init_model(
        (state_dim + action_dim, *hidden, 1), seed=seed, output_transform="identity"
    )
    return RewardModel(model=model)


def step_rewards(rm: RewardModel, states, actions) -> np.ndarray:
    """r(s, a) for each step; states (n, sdim), actions (n, adim)."""
    x = np.concatenate([np.asarray(states, float), np.asarray(actions, float)], axis=1)
    return nets.forward(rm.model, x)[:, 0]


def segment_q(rm: RewardModel, segment) -> float:
    """Undiscounted sum of estimated rewards over the segment."""
    return float(step_rewards(rm, segment.states, segment.actions).sum())


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


def pref_prob(rm: RewardModel, pair) -> tuple[float, float]:
    """(p12, p21): logistic win probabilities from the segment value gap."""
    q1 = segment_q(rm, pair[0])
    q2 = segment_q(rm, pair[1])
    return _sigmoid(q1 - q2), _sigmoid(q2 - q1)


def _clamped_log(p: float) -> tuple[float, bool]:
    """log of the clamped probability and whether the clamp was inactive."""
    c = min(max(p, PROB_CLAMP), 1.0 - PROB_CLAMP)
    return math.log(c), c == p


def loss_a(rm: RewardModel, records) -> float:
    """Cross-entropy of predicted win probabilities against stored xi."""
    records = list(records)
    if not records:
        raise ValueError("loss_a needs at least one record")
    total = 0.0
    for rec in records:
        p12, p21 = pref_prob(rm, (rec.seg1, rec.seg2))
        l12, _ = _clamped_log(p12)
        l21, _ = _clamped_log(p21)
        total -= rec.xi[0] * l12 + rec.xi[1] * l21
    return total


def loss_g(rm: RewardModel, records) -> float:
    """Double cross-entropy against the two independent per-side scores."""
    records = list(records)
    if not records:
        raise ValueError("loss_g needs at least one record")
    total = 0.0
    for rec in records:
        if rec.soft is None:
            raise ValueError("loss_g needs records with per-side scores")
        p12, p21 = rec.soft
        h12, h21 = pref_prob(rm, (rec.seg1, rec.seg2))
        l12, _ = _clamped_log(h12)
        l21, _ = _clamped_log(h21)
        total -= p12 * l12 + (1.0 - p12) * l21
        total -= p21 * l21 + (1.0 - p21) * l12
    return total


def _record_coefficient(rm: RewardModel, rec) -> float:
    """d(loss summand)/d(Q1 - Q2) for one record, honoring the prob clamp."""
    h12, h21 = pref_prob(rm, (rec.seg1, rec.seg2))
    _, in12 = _clamped_log(h12)
    _, in21 = _clamped_log(h21)
    # d log h12 / ds = h21 (if unclamped); d log h21 / ds = -h12 (if unclamped)
    d12 = h21 if in12 else 0.0
    d21 = -h12 if in21 else 0.0
    if rec.source == "discriminator":
        p12, p21 = rec.soft
        coef = -(p12 * d12 + (1.0 - p12) * d21)
        coef += -(p21 * d21 + (1.0 - p21) * d12)
    else:
        coef = -(rec.xi[0] * d12 + rec.xi[1] * d21)
    return coef


def loss_grad(rm: RewardModel, records) -> np.ndarray:
    """Exact parameter gradient of loss_a + loss_g over the given records."""
    records = list(records)
    if not records:
        raise ValueError("gradient needs at least one record")
    rows = []
    ups = []
    for rec in records:
        coef = _record_coefficient(rm, rec)
        for seg, sign in ((rec.seg1, 1.0), (rec.seg2, -1.0)):
            x = np.concatenate([seg.states, seg.actions], axis=1)
            rows.append(x)
            ups.append(np.full((x.shape[0], 1), sign * coef))
    x = np.concatenate(rows, axis=0)
    upstream = np.concatenate(ups, axis=0)
    return nets.backward(rm.model, x, upstream).grad


def fit(
    rm: RewardModel,
    database,
    source_filter: tuple[str, ...],
    epochs: int = 4,
    lr: float = 3e-4,
    batch_size: int = 32,
    seed: int = 0,
) -> tuple[RewardModel, float]:
    """Mini-batch SGD on the preference losses; returns (model, final loss).

    Human/oracle records contribute the xi cross-entropy, discriminator
    records the double per-side cross-entropy; both may be mixed in one call.
    """
    records = database.by_source(*source_filter)
    if not records:
        raise ValueError(f"no records with source in {source_filter}")
    model = rm.model
    rng = np.random.default_rng(seed)
    final = _total_loss(RewardModel(model, rm.stats), records)
    for _ in range(epochs):
        order = rng.permutation(len(records))
        for lo in range(0, len(records), batch_size):
            batch = [records[i] for i in order[lo : lo + batch_size]]
            grad = loss_grad(RewardModel(model, rm.stats), batch)
            model = nets.sgd_step(model, grad, lr, "descend")
        final = _total_loss(RewardModel(model, rm.stats), records)
    return RewardModel(model=model, stats=rm.stats), final


def _total_loss(rm: RewardModel, records) -> float:
    hard = [r for r in records if r.source != "discriminator"]
    soft = [r for r in records if r.source == "discriminator"]
    total = 0.0
    if hard:
        total += loss_a(rm, hard)
    if soft:
        total += loss_g(rm, soft)
    return total


class RewardSnapshot:
    """Frozen, output-normalized view of the reward net for the policy.

    Preference losses pin only the reward's ordering, so outputs are
    standardized by the running statistics before they shape the policy;
    `output_scale` then sets the reward magnitude the learner sees.
    """

    def __init__(self, rm: RewardModel, output_scale: float = 1.0):
        self.model = rm.model
        self.mean = rm.stats.mean if rm.stats.count >= 2 else 0.0
        std = max(rm.stats.std, 1e-6) if rm.stats.count >= 2 else 1.0
        self.scale = std / output_scale

    def values(self, states, actions) -> np.ndarray:
        raw = step_rewards(RewardModel(self.model), states, actions)
        return (raw - self.mean) / self.scale

    def action_grads(self, states, actions) -> np.ndarray:
        states = np.asarray(states, float)
        actions = np.asarray(actions, float)
        x = np.concatenate([states, actions], axis=1)
        bundle = nets.backward(self.model, x, np.ones((x.shape[0], 1)))
        return bundle.input_grad[:, states.shape[1] :] / self.scale
