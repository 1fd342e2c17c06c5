import numpy as np
import pytest

from prefgan.preferences import Segment


def central_diff(f, x0, h=1e-5):
    """Central finite differences of a scalar function of a flat vector."""
    x0 = np.asarray(x0, dtype=float)
    g = np.zeros_like(x0)
    for j in range(x0.size):
        hi = x0.copy()
        lo = x0.copy()
        hi[j] += h
        lo[j] -= h
        g[j] = (f(hi) - f(lo)) / (2.0 * h)
    return g


def max_rel_err(a, b, skip=1e-8):
    """Max elementwise relative error, skipping entries tiny on both sides."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(np.abs(a), np.abs(b))
    mask = denom > skip
    if not mask.any():
        return 0.0
    return float((np.abs(a - b)[mask] / denom[mask]).max())


def make_segment(states, actions, env_name="pointgoal", episode_id=0, start=0, clip_seed=0):
    return Segment(
        env_name=env_name,
        episode_id=episode_id,
        start=start,
        states=np.asarray(states, dtype=float),
        actions=np.asarray(actions, dtype=float),
        clip_seed=clip_seed,
    )


def random_segment(rng, k=5, state_dim=2, action_dim=2, **kw):
    return make_segment(
        rng.uniform(-2, 2, size=(k, state_dim)), rng.uniform(-1, 1, size=(k, action_dim)), **kw
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
