import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefgan import envs, nets, preferences, reward
from prefgan.preferences import (
    PairShortageError,
    PrefDatabase,
    PreferenceRecord,
    compare_discounted,
    extract_pairs,
    get_schedule,
    next_query_budget,
    oracle_label,
    c3_label,
)

from conftest import make_segment, random_segment


def _trajs(n_episodes, length, seed=0, env_name="pointgoal"):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_episodes):
        out.append(
            envs.Trajectory(
                env_name=env_name,
                episode_id=i,
                seed=seed + i,
                states=rng.uniform(-1, 1, size=(length + 1, 2)),
                actions=rng.uniform(-1, 1, size=(length, 2)),
                true_rewards=rng.normal(size=length),
                log_probs=np.zeros(length),
            )
        )
    return out


def test_extract_pairs_single_candidate_errors():
    trajs = _trajs(1, 10)
    with pytest.raises(PairShortageError, match="only 1 available"):
        extract_pairs(trajs, k=10, n_pairs=1, seed=0)


def test_extract_pairs_counts_and_distinct_slots():
    trajs = _trajs(20, 100)
    pairs = extract_pairs(trajs, k=25, n_pairs=6, seed=1)
    assert len(pairs) == 6
    slots = {seg.slot() for pair in pairs for seg in pair}
    assert len(slots) == 12
    for pair in pairs:
        for seg in pair:
            assert seg.length == 25


def test_extract_pairs_deterministic():
    trajs = _trajs(5, 40)
    a = extract_pairs(trajs, k=10, n_pairs=4, seed=42)
    b = extract_pairs(trajs, k=10, n_pairs=4, seed=42)
    assert [(s1.slot(), s2.slot()) for s1, s2 in a] == [(s1.slot(), s2.slot()) for s1, s2 in b]


def test_oracle_identical_segments_indifferent():
    env = envs.make_env("pointgoal")
    seg = random_segment(np.random.default_rng(0))
    rec = oracle_label((seg, seg), env)
    assert rec.xi == (0.5, 0.5)
    assert not rec.strict


def test_hand_discounted_comparison():
    # gamma 0.5: (1, 1) scores 1.5, (2, 0) scores 2 -> mass on the second
    assert compare_discounted([1.0, 1.0], [2.0, 0.0], gamma=0.5) == (0.0, 1.0)


def test_tie_band_indifference():
    eps = preferences.EPS_TIE
    assert compare_discounted([eps / 2], [0.0], gamma=1.0) == (0.5, 0.5)


def test_oracle_uses_hidden_reward():
    env = envs.make_env("pointgoal")
    near = make_segment(np.tile(env.GOAL, (3, 1)), np.zeros((3, 2)))
    far = make_segment(np.tile(env.GOAL + 3.0, (3, 1)), np.zeros((3, 2)))
    assert oracle_label((near, far), env).xi == (1.0, 0.0)
    assert oracle_label((far, near), env).xi == (0.0, 1.0)


def _linear_reward_model():
    # r(s, a) = s[0] exactly: single affine layer, first weight one
    model = nets.MlpModel(layer_sizes=(4, 1), params=np.array([1.0, 0.0, 0.0, 0.0, 0.0]))
    return reward.RewardModel(model=model)


def test_c3_flat_reward_is_indifferent():
    rm = reward.RewardModel(
        model=nets.MlpModel(layer_sizes=(4, 1), params=np.zeros(5))
    )
    seg1 = random_segment(np.random.default_rng(1))
    seg2 = random_segment(np.random.default_rng(2))
    assert c3_label((seg1, seg2), rm).xi == (0.5, 0.5)


def test_c3_prefers_larger_predicted_sum():
    rm = _linear_reward_model()
    hi = make_segment([[3.0, 0.0]], [[0.0, 0.0]])
    lo = make_segment([[1.0, 0.0]], [[0.0, 0.0]])
    rec = c3_label((hi, lo), rm, gamma=1.0)
    assert rec.xi == (1.0, 0.0)
    assert rec.source == "reward_model"


def test_c3_exact_tie_without_band_goes_to_second():
    assert compare_discounted([1.0], [1.0], gamma=1.0, eps_tie=0.0, ties_to_second=True) == (0.0, 1.0)


def test_oracle_exact_tie_without_band_is_indifferent():
    assert compare_discounted([1.0], [1.0], gamma=1.0, eps_tie=0.0) == (0.5, 0.5)


@given(
    rewards=st.lists(st.floats(-10, 10), min_size=1, max_size=8),
    other=st.lists(st.floats(-10, 10), min_size=1, max_size=8),
    shift=st.floats(-100, 100),
    gamma=st.floats(0.5, 1.0),
)
@settings(max_examples=300, deadline=None)
def test_shift_invariance_equal_lengths(rewards, other, shift, gamma):
    n = min(len(rewards), len(other))
    r1, r2 = np.array(rewards[:n]), np.array(other[:n])
    base = compare_discounted(r1, r2, gamma)
    shifted = compare_discounted(r1 + shift, r2 + shift, gamma)
    assert base == shifted


@given(
    rewards=st.lists(st.floats(-10, 10), min_size=1, max_size=8),
    other=st.lists(st.floats(-10, 10), min_size=1, max_size=8),
    gamma=st.floats(0.5, 1.0),
)
@settings(max_examples=300, deadline=None)
def test_antisymmetry_under_swap(rewards, other, gamma):
    n = min(len(rewards), len(other))
    r1, r2 = np.array(rewards[:n]), np.array(other[:n])
    a = compare_discounted(r1, r2, gamma)
    b = compare_discounted(r2, r1, gamma)
    assert a == (b[1], b[0])


def test_database_partition_sizes():
    rng = np.random.default_rng(3)
    db = PrefDatabase()
    strict = 0
    for i in range(20):
        s1, s2 = random_segment(rng), random_segment(rng)
        if i % 4 == 0:
            xi = (0.5, 0.5)
        else:
            xi = (1.0, 0.0) if i % 2 else (0.0, 1.0)
            strict += 1
        db.add(PreferenceRecord(seg1=s1, seg2=s2, xi=xi, source="oracle"))
    assert len(db) == 20
    assert db.strict_count == strict
    assert len(db.preferred) == strict
    assert len(db.non_preferred) == strict


def test_incomparable_never_inserted():
    rng = np.random.default_rng(4)
    db = PrefDatabase()
    rec = PreferenceRecord(seg1=random_segment(rng), seg2=random_segment(rng), xi=None, source="human")
    assert rec.incomparable
    with pytest.raises(ValueError, match="never stored"):
        db.add(rec)
    assert len(db) == 0


def test_xi_must_be_distribution():
    rng = np.random.default_rng(5)
    with pytest.raises(ValueError, match="distribution"):
        PreferenceRecord(seg1=random_segment(rng), seg2=random_segment(rng), xi=(0.9, 0.3), source="oracle")


def test_budget_named_schedule_values():
    assert next_query_budget(get_schedule("human-175"), 0) == 175
    assert next_query_budget(get_schedule("human-175"), 3) == 6
    assert next_query_budget(get_schedule("gan-assisted-50"), 150) == 0
    assert next_query_budget(get_schedule("gan-assisted-50"), 100) == 50
    assert next_query_budget(get_schedule("gan-assisted-50"), 0) == 50
    assert next_query_budget(get_schedule("synthetic-175"), 200) == 175
    assert next_query_budget(get_schedule("oracle-40"), 20) == 40


def test_budget_human_schedule_total_matches_closed_form():
    sched = get_schedule("human-175")
    for episodes in (1, 10, 37):
        total = sum(next_query_budget(sched, ep) for ep in range(episodes + 1))
        assert total == 175 + 6 * episodes


def test_unknown_schedule_name():
    with pytest.raises(ValueError, match="unknown schedule"):
        get_schedule("human-9000")


def test_paper_schedules_present():
    for name in ("human-175", "human-345", "synthetic-175", "gan-assisted-50", "gan-assisted-175"):
        s = get_schedule(name)
        assert s.name == name
