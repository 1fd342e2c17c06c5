"""Preference discriminator: scores a single segment's chance of being the
human-preferred one, and stands in for the labeler once accurate enough.

The net sees the flattened (state, action) sequence of one segment and emits
a logistic score.  Training ascends the two-sided log objective
mean log(1 - Y) over non-preferred segments + mean log Y over preferred
ones, computed on logits for numerical stability.  Pair decisions compare
the two segments' scores independently, so they need not sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nets
from .preferences import PreferenceRecord

EPS_GAP = 0.05  # score gap below which a pair is called indifferent
SCORE_CLIP = 1e-12


@dataclass(eq=False)
class Discriminator:
    model: nets.MlpModel
    train_log: list[tuple[int, float]] = field(default_factory=list)

    @property
    def steps_trained(self) -> int:
        return len(self.train_log)


def init_discriminator(
    k: int, state_dim: int, action_dim: int, seed, hidden=(64, 64)
) -> Discriminator:
    """Fresh discriminator; the zeroed output layer scores everything 0.5."""
    model = nets.init_model(
        (k * (state_dim + action_dim), *hidden, 1),
        seed=seed,
        output_transform="logistic",
        zero_last_layer=True,
    )
    return Discriminator(model=model)


def segment_vector(segment) -> np.ndarray:
    """Flatten a segment to [s_0, a_0, s_1, a_1, ...]."""
    return np.concatenate([segment.states, segment.actions], axis=1).ravel()


def _check_length(disc: Discriminator, segment) -> None:
    want = disc.model.layer_sizes[0]
    got = segment.states.shape[0] * (segment.states.shape[1] + segment.actions.shape[1])
    if got != want:
        raise ValueError(f"segment flattens to {got} values, discriminator expects {want}")


def score(disc: Discriminator, segment) -> float:
    """Deterministic logistic score, clipped into the open interval (0, 1)."""
    _check_length(disc, segment)
    y = float(nets.forward(disc.model, segment_vector(segment))[0])
    return float(np.clip(y, SCORE_CLIP, 1.0 - SCORE_CLIP))


def _softplus(z):
    return np.logaddexp(0.0, z)


def batch_objective(disc: Discriminator, d_p, d_np) -> float:
    """mean log Y over preferred + mean log(1-Y) over non-preferred."""
    total = 0.0
    if d_p:
        z = nets.forward(disc.model, np.stack([segment_vector(s) for s in d_p]), transform=False)
        total += float(np.mean(-_softplus(-z[:, 0])))
    if d_np:
        z = nets.forward(disc.model, np.stack([segment_vector(s) for s in d_np]), transform=False)
        total += float(np.mean(-_softplus(z[:, 0])))
    return total


def objective_grad(disc: Discriminator, d_p, d_np) -> np.ndarray:
    grad = np.zeros_like(disc.model.params)
    if d_p:
        x = np.stack([segment_vector(s) for s in d_p])
        z = nets.forward(disc.model, x, transform=False)
        up = nets._sigmoid(-z) / len(d_p)  # d mean log sigmoid(z) / dz
        grad += nets.backward(disc.model, x, up, transform=False).grad
    if d_np:
        x = np.stack([segment_vector(s) for s in d_np])
        z = nets.forward(disc.model, x, transform=False)
        up = -nets._sigmoid(z) / len(d_np)  # d mean log(1 - sigmoid(z)) / dz
        grad += nets.backward(disc.model, x, up, transform=False).grad
    return grad


def train_step(disc: Discriminator, d_p, d_np, lr: float) -> Discriminator:
    """One gradient-ascent step on the two-sided objective."""
    d_p, d_np = list(d_p), list(d_np)
    if not d_p and not d_np:
        raise ValueError("both segment sets empty")
    grad = objective_grad(disc, d_p, d_np)
    model = nets.sgd_step(disc.model, grad, lr, "ascend")
    after = replace(disc, model=model)
    value = batch_objective(after, d_p, d_np)
    if not np.isfinite(value):
        raise ValueError("non-finite objective: step rejected")
    after.train_log = disc.train_log + [(len(disc.train_log), value)]
    return after


def c2_label(
    disc: Discriminator, pair, eps_gap: float = EPS_GAP, timestamp: int = 0
) -> PreferenceRecord:
    """Score both segments independently; hard label to the larger score,
    indifferent inside the gap band; both raw scores kept for the losses."""
    y1 = score(disc, pair[0])
    y2 = score(disc, pair[1])
    if abs(y1 - y2) <= eps_gap:
        xi = (0.5, 0.5)
    elif y1 > y2:
        xi = (1.0, 0.0)
    else:
        xi = (0.0, 1.0)
    return PreferenceRecord(
        seg1=pair[0], seg2=pair[1], xi=xi, source="discriminator",
        timestamp=timestamp, soft=(y1, y2),
    )


def gan_test(disc: Discriminator, fresh_pairs, oracle_fn, eps_gap: float = EPS_GAP) -> float:
    """Fraction of strictly-labeled fresh pairs the discriminator gets right.

    Predicted-indifferent on a strict pair earns half credit; pairs the
    oracle itself calls indifferent are excluded.
    """
    credits = []
    for pair in fresh_pairs:
        truth = oracle_fn(pair)
        if truth.incomparable or not truth.strict:
            continue
        pred = c2_label(disc, pair, eps_gap)
        if not pred.strict:
            credits.append(0.5)
        else:
            credits.append(1.0 if pred.xi == truth.xi else 0.0)
    if not credits:
        raise ValueError("no strictly-labeled pairs to score")
    return float(np.mean(credits))
