import dataclasses

import numpy as np
import pytest

from prefgan import discriminator as disc_mod
from prefgan import envs
from prefgan.discriminator import (
    Discriminator,
    batch_objective,
    c2_label,
    gan_test,
    init_discriminator,
    objective_grad,
    score,
    train_step,
)
from prefgan.preferences import oracle_label

from conftest import central_diff, make_segment, max_rel_err, random_segment

K = 5


def _disc(seed=0, k=K):
    return init_discriminator(k=k, state_dim=2, action_dim=2, seed=seed)


def _seg(rng, k=K, bias=0.0):
    states = rng.uniform(-1, 1, size=(k, 2)) + bias
    actions = rng.uniform(-1, 1, size=(k, 2))
    return make_segment(states, actions)


def test_fresh_discriminator_scores_half():
    rng = np.random.default_rng(0)
    d = _disc()
    for _ in range(10):
        assert score(d, _seg(rng)) == 0.5


def test_score_deterministic():
    rng = np.random.default_rng(1)
    d = _trained_toy()
    seg = _seg(rng)
    assert score(d, seg) == score(d, seg)


def test_score_rejects_wrong_length():
    rng = np.random.default_rng(2)
    with pytest.raises(ValueError, match="expects"):
        score(_disc(), _seg(rng, k=K + 1))


def _toy_sets(n=30, seed=3):
    # linearly separable: preferred segments live at states shifted +1,
    # non-preferred at -1
    rng = np.random.default_rng(seed)
    d_p = [_seg(rng, bias=1.0) for _ in range(n)]
    d_np = [_seg(rng, bias=-1.0) for _ in range(n)]
    return d_p, d_np


def _trained_toy(steps=200, lr=0.05):
    d = _disc()
    d_p, d_np = _toy_sets()
    for _ in range(steps):
        d = train_step(d, d_p, d_np, lr)
    return d


def test_training_separates_toy_classes():
    d = _trained_toy()
    d_p, d_np = _toy_sets(seed=99)  # fresh draws from the same distributions
    p_scores = [score(d, s) for s in d_p]
    np_scores = [score(d, s) for s in d_np]
    assert np.mean(p_scores) > 0.5 > np.mean(np_scores)
    assert np.mean([s > 0.5 for s in p_scores]) > 0.9


def test_single_preferred_segment_ascent_increases_score():
    rng = np.random.default_rng(4)
    seg = _seg(rng)
    d = _trained_toy(steps=5)  # non-trivial scores
    before = score(d, seg)
    d2 = train_step(d, [seg], [], lr=1e-2)
    assert score(d2, seg) > before


def test_objective_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    for trial in range(5):
        d = Discriminator(
            model=disc_mod.nets.init_model((K * 4, 8, 1), seed=40 + trial, output_transform="logistic")
        )
        d_p = [_seg(rng) for _ in range(3)]
        d_np = [_seg(rng) for _ in range(4)]
        g = objective_grad(d, d_p, d_np)

        def f(p):
            d2 = Discriminator(model=dataclasses.replace(d.model, params=p))
            return batch_objective(d2, d_p, d_np)

        fd = central_diff(f, d.model.params, h=1e-5)
        assert max_rel_err(fd, g, skip=1e-7) < 1e-3, f"trial {trial}"


def test_same_segment_on_both_sides_is_stationary_at_half():
    rng = np.random.default_rng(6)
    seg = _seg(rng)
    d = _disc()  # scores exactly 0.5
    g = objective_grad(d, [seg], [seg])
    assert np.allclose(g, 0.0)
    # and from a perturbed model, a small step moves the score toward 0.5
    d_off = _trained_toy(steps=10)
    before = abs(score(d_off, seg) - 0.5)
    d2 = train_step(d_off, [seg], [seg], lr=1e-2)
    assert abs(score(d2, seg) - 0.5) <= before


def test_objective_nondecreasing_for_small_lr():
    rng = np.random.default_rng(7)
    for trial in range(50):
        d = Discriminator(
            model=disc_mod.nets.init_model((K * 4, 8, 1), seed=200 + trial, output_transform="logistic")
        )
        d_p = [_seg(rng) for _ in range(int(rng.integers(0, 4)))]
        d_np = [_seg(rng) for _ in range(int(rng.integers(1, 4)))]
        before = batch_objective(d, d_p, d_np)
        d2 = train_step(d, d_p, d_np, lr=1e-4)
        assert batch_objective(d2, d_p, d_np) >= before - 1e-12, f"trial {trial}"


def test_train_step_rejects_empty_both():
    with pytest.raises(ValueError, match="empty"):
        train_step(_disc(), [], [], lr=1e-3)


def test_train_log_grows():
    d_p, d_np = _toy_sets(n=3)
    d = _disc()
    d = train_step(d, d_p, d_np, lr=1e-3)
    d = train_step(d, d_p, d_np, lr=1e-3)
    assert d.steps_trained == 2


def test_c2_equal_scores_indifferent():
    rng = np.random.default_rng(8)
    seg = _seg(rng)
    rec = c2_label(_disc(), (seg, seg))
    assert rec.xi == (0.5, 0.5)
    assert rec.soft == (0.5, 0.5)


def test_c2_hard_label_keeps_independent_scores():
    d = _trained_toy()
    rng = np.random.default_rng(9)
    hi = _seg(rng, bias=1.0)
    lo = _seg(rng, bias=-1.0)
    rec = c2_label(d, (hi, lo))
    assert rec.xi == (1.0, 0.0)
    y1, y2 = rec.soft
    assert y1 == score(d, hi) and y2 == score(d, lo)
    # the two independent scores need not be complementary
    assert abs(y1 + y2 - 1.0) > 1e-6


def test_c2_band_indifference():
    rng = np.random.default_rng(10)
    seg1, seg2 = _seg(rng), _seg(rng)
    d = _trained_toy(steps=1, lr=1e-5)  # nearly flat scores
    rec = c2_label(d, (seg1, seg2), eps_gap=0.05)
    assert rec.xi == (0.5, 0.5)


def test_c2_antisymmetric_under_swap():
    d = _trained_toy()
    rng = np.random.default_rng(11)
    hi = _seg(rng, bias=1.0)
    lo = _seg(rng, bias=-1.0)
    a = c2_label(d, (hi, lo))
    b = c2_label(d, (lo, hi))
    assert a.xi == (b.xi[1], b.xi[0])
    assert a.soft == (b.soft[1], b.soft[0])


def test_gan_test_self_consistent_labeler_scores_one():
    d = _trained_toy()
    rng = np.random.default_rng(12)
    pairs = [(_seg(rng, bias=1.0), _seg(rng, bias=-1.0)) for _ in range(20)]
    acc = gan_test(d, pairs, oracle_fn=lambda pair: c2_label(d, pair))
    assert acc == 1.0


def test_gan_test_untrained_discriminator_scores_half():
    env = envs.make_env("pointgoal")
    rng = np.random.default_rng(13)
    d = init_discriminator(k=3, state_dim=2, action_dim=2, seed=0)

    def seg(bias):
        return make_segment(rng.uniform(-1, 1, size=(3, 2)) + bias, np.zeros((3, 2)))

    pairs = [(seg(2.0), seg(-2.0)) for _ in range(10)]
    acc = gan_test(d, pairs, oracle_fn=lambda p: oracle_label(p, env))
    assert acc == 0.5


def test_gan_test_order_invariant():
    d = _trained_toy()
    env = envs.make_env("pointgoal")
    rng = np.random.default_rng(14)
    pairs = [(_seg(rng, bias=1.0), _seg(rng, bias=-1.0)) for _ in range(10)]
    oracle_fn = lambda p: oracle_label(p, env)
    assert gan_test(d, pairs, oracle_fn) == gan_test(d, list(reversed(pairs)), oracle_fn)


def test_gan_test_requires_strict_pairs():
    env = envs.make_env("pointgoal")
    rng = np.random.default_rng(15)
    seg = _seg(rng)
    with pytest.raises(ValueError, match="no strictly-labeled"):
        gan_test(_disc(), [(seg, seg)], oracle_fn=lambda p: oracle_label(p, env))


def test_scores_stay_in_open_interval():
    d = _trained_toy(steps=500, lr=0.2)  # drive saturation
    rng = np.random.default_rng(16)
    for bias in (-50.0, 50.0):
        y = score(d, _seg(rng, bias=bias))
        assert 0.0 < y < 1.0
