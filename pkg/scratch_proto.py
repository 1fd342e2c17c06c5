"""Scratch prototype of the learning loop (not part of the package)."""
import time

import numpy as np

from prefgan import envs, policy, preferences, reward


def gather_transitions(trajs, snap):
    states = np.concatenate([t.states[:-1] for t in trajs])
    actions = np.concatenate([t.actions for t in trajs])
    next_states = np.concatenate([t.states[1:] for t in trajs])
    terminal = np.concatenate(
        [np.arange(t.length) == t.length - 1 for t in trajs]
    )
    rewards = snap.values(states, actions)
    return {
        "states": states, "actions": actions, "rewards": rewards,
        "next_states": next_states, "terminal": terminal,
    }


def run(seed=0, iters=30, eps_per_iter=6, pairs_per_iter=12, k=25,
        lr_reward=3e-3, lr_actor=3e-3, lr_critic=3e-3, lr_shape=1e-3, alpha=0.02,
        ac_steps=40, ac_batch=128, shape_steps=5, reward_epochs=4,
        use_true_reward=False, use_shaping=True, log=True):
    env = envs.make_env("pointgoal")
    learner = policy.init_policy_learner(env, seed=seed, alpha=alpha)
    rm = reward.init_reward_model(2, 2, seed=seed + 1)
    db = preferences.PrefDatabase()
    root = np.random.SeedSequence(seed)
    s_roll, s_pairs, s_policy, s_fit = [np.random.default_rng(c) for c in root.spawn(4)]

    episode = 0
    t0 = time.time()
    for it in range(iters):
        trajs = policy.rollout(learner, env, eps_per_iter,
                               seed=int(s_roll.integers(2**63)), episode_id_base=episode)
        episode += eps_per_iter

        if use_true_reward:
            all_r = np.concatenate([t.true_rewards for t in trajs])
            rm.stats.update(all_r)
            snap = envs.TrueRewardSnapshot(env, rm.stats.mean, rm.stats.std)
        else:
            pairs = preferences.extract_pairs(trajs, k, pairs_per_iter,
                                              seed=int(s_pairs.integers(2**63)))
            for p in pairs:
                db.add(preferences.oracle_label(p, env))
            rm, loss = reward.fit(rm, db, ("oracle",), epochs=reward_epochs,
                                  lr=lr_reward, seed=int(s_fit.integers(2**31)))
            all_s = np.concatenate([t.states[:-1] for t in trajs])
            all_a = np.concatenate([t.actions for t in trajs])
            rm.stats.update(reward.step_rewards(rm, all_s, all_a))
            snap = reward.RewardSnapshot(rm)

        tr = gather_transitions(trajs, snap)
        n = tr["states"].shape[0]
        for _ in range(ac_steps):
            idx = s_policy.choice(n, size=min(ac_batch, n), replace=False)
            mb = {key: val[idx] for key, val in tr.items()}
            targets = policy.soft_backup_targets(learner, mb, s_policy)
            learner = policy.critic_update(learner, mb["states"], targets, lr_critic)
            learner = policy.actor_critic_step(learner, mb, lr_actor, s_policy)

        obj = float("nan")
        if use_shaping and not use_true_reward and db.strict_count >= 4:
            for _ in range(shape_steps):
                batch = policy.build_shaped_batch(learner, snap, db.preferred[-100:],
                                                  db.non_preferred[-100:], s_policy,
                                                  max_segments=16)
                learner = policy.policy_gradient_step(learner, batch, lr_shape, snap)
                obj = policy.shaped_objective(learner, batch, snap)

        if log and (it + 1) % 5 == 0:
            ret = policy.evaluate_policy(learner, env, 5, seed=1234)
            print(f"it {it+1:3d} ep {episode:4d} db {len(db)} obj {obj:8.3f} "
                  f"eval {ret:8.2f} ({time.time()-t0:.0f}s)")
    return policy.evaluate_policy(learner, env, 10, seed=99), learner, rm


if __name__ == "__main__":
    import sys
    mode = sys.argv[1] if len(sys.argv) > 1 else "pref"
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    kw = {}
    if mode == "true":
        kw["use_true_reward"] = True
    elif mode == "noshape":
        kw["use_shaping"] = False
    ret, _, _ = run(seed=seed, **kw)
    print("final eval:", ret)
    env = envs.make_env("pointgoal")
    rnd = policy.init_policy_learner(env, seed=seed + 500)
    print("random-policy eval:", policy.evaluate_policy(rnd, env, 10, seed=99))
