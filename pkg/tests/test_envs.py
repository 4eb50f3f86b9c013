from collections import deque

import numpy as np
import pytest

from hodgeflow.envs import (CLOCKWISE, COUNTERCLOCKWISE, HoldLastSpec, NoiseSpec, RandomFeatureSpec, RingSpec,
                            StickySpec, TabularEnv, dump_trajectory, make_pointmass, make_random_feature_mdp,
                            make_ring, rollout, wrap_hold_last, wrap_noisy, wrap_sticky)
from hodgeflow.errors import ContractError
from hodgeflow.harness import msve
from hodgeflow.hodge import DiffOperator, decompose, td_field
from hodgeflow.mdp import exact_occupancy, exact_value, random_policy, uniform_distribution, uniform_policy


def ring_residual(mdp, pi):
    occ = exact_occupancy(mdp, pi, uniform_distribution(mdp.n_states))
    return decompose(DiffOperator(occ), td_field(mdp, occ, np.zeros(mdp.n_states))).norm_residual


def test_integrable_ring_has_no_residual_under_any_policy():
    _, mdp, _ = make_ring(RingSpec(mode="integrable"))
    assert ring_residual(mdp, uniform_policy(mdp)) <= 1e-9
    assert ring_residual(mdp, random_policy(10, 2, 3)) <= 1e-9


def test_nonintegrable_ring_perturbs_one_edge():
    _, flat, u = make_ring(RingSpec(mode="integrable"))
    _, bent, u2 = make_ring(RingSpec(mode="nonintegrable", epsilon=0.1))
    assert np.array_equal(u, u2)
    diff = bent.reward - flat.reward
    assert np.count_nonzero(diff) == 1
    assert diff[0, CLOCKWISE, 1] == pytest.approx(0.1)
    assert ring_residual(bent, uniform_policy(bent)) > 1e-3


def test_ring_rewards_follow_potential_and_moves():
    env, mdp, u = make_ring(RingSpec(n=5, gamma=0.9))
    assert mdp.transition[4, CLOCKWISE, 0] == 1.0
    assert mdp.transition[0, COUNTERCLOCKWISE, 4] == 1.0
    assert mdp.reward[2, CLOCKWISE, 3] == pytest.approx(u[3] - 0.9 * u[2])


def test_zero_potential_ring_is_all_zero():
    _, mdp, u = make_ring(RingSpec(zero_potential=True))
    assert np.all(mdp.reward == 0) and np.all(u == 0)
    assert np.allclose(exact_value(mdp, uniform_policy(mdp)), 0.0)


def test_ring_env_matches_mdp_and_truncates():
    env, mdp, _ = make_ring(RingSpec(horizon=7))
    s = env.reset(seed=3)
    for t in range(7):
        s2, r, done, trunc = env.step(CLOCKWISE)
        assert s2 == (s + 1) % 10
        assert r == mdp.reward[s, CLOCKWISE, s2]
        assert not done
        assert trunc == (t == 6)
        s = s2
    with pytest.raises(ContractError):
        env.step(0)


def test_ring_spec_validation():
    with pytest.raises(ContractError):
        RingSpec(n=2)
    with pytest.raises(ContractError):
        RingSpec(mode="twisted")


def test_random_feature_mdp_deterministic_and_bounded():
    spec = RandomFeatureSpec(seed=4)
    m1, f1 = make_random_feature_mdp(spec)
    m2, f2 = make_random_feature_mdp(spec)
    assert np.array_equal(m1.transition, m2.transition) and np.array_equal(f1, f2)
    assert f1.shape == (50, 32)
    assert np.allclose(np.linalg.norm(f1, axis=0), 1.0)
    V = exact_value(m1, uniform_policy(m1))
    assert np.all(np.abs(V) <= m1.r_max / (1 - m1.discount) + 1e-9)
    nu = exact_occupancy(m1, uniform_policy(m1), uniform_distribution(50)).nu
    assert msve(V, V, nu) == 0.0


def test_discount_restarts_truncate_at_expected_rate():
    mdp, _ = make_random_feature_mdp(RandomFeatureSpec(gamma=0.9))
    env = TabularEnv(mdp, horizon=10**9, discount_restarts=True)
    env.reset(seed=0)
    n, cuts = 20000, 0
    for _ in range(n):
        _, _, _, trunc = env.step(0)
        if trunc:
            cuts += 1
            env.reset()
    assert abs(cuts / n - 0.1) < 0.01


def bfs_distance(g, start, goal):
    seen, frontier = {start: 0}, deque([start])
    while frontier:
        r, c = frontier.popleft()
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nxt = (r + dr, c + dc)
            if 0 <= nxt[0] < g and 0 <= nxt[1] < g and nxt not in seen:
                seen[nxt] = seen[(r, c)] + 1
                frontier.append(nxt)
    return seen[goal]


@pytest.mark.parametrize("start", [(0, 0), (2, 3), (4, 0), (3, 4)])
def test_pointmass_greedy_path_return_is_minus_distance(start):
    env = make_pointmass(5, start=start)
    env.reset(seed=0)
    pos, total, done = start, 0.0, False
    while not done:
        a = 1 if pos[0] < 4 else 3  # down until the last row, then right
        obs, r, done, trunc = env.step(a)
        pos = divmod(obs, 5)
        total += r
    assert total == -bfs_distance(5, start, (4, 4))


def test_pointmass_wall_bump_and_absorbing_goal():
    env = make_pointmass(4, start=(0, 0))
    env.reset()
    obs, r, done, _ = env.step(0)  # up into the wall
    assert obs == 0 and r == -1.0 and not done
    env = make_pointmass(4, start=(3, 3))
    env.reset()
    obs, r, done, trunc = env.step(2)
    assert (obs, r, done, trunc) == (15, 0.0, True, False)


def test_pointmass_truncates_after_budget():
    env = make_pointmass(3, start=(0, 0))
    env.reset()
    steps = 0
    while True:
        _, _, done, trunc = env.step(0)
        steps += 1
        if trunc:
            break
    assert steps == 4 * 9 and not done


def test_pointmass_random_start_never_goal():
    env = make_pointmass(3)
    starts = {env.reset(seed=k) for k in range(200)}
    assert 8 not in starts and len(starts) == 8


def test_hold_last_case_split():
    base = make_pointmass(5, start=(2, 2))
    env = wrap_hold_last(base, HoldLastSpec(max_hold_steps=2))
    assert env.n_actions == 5
    env.reset()
    script = [(4, 0), (3, 3), (4, 3), (4, 3), (4, 0), (2, 2), (4, 2)]
    for chosen, executed in script:
        env.step(chosen)
        assert env.executed_action == executed


def test_hold_last_keeps_memory_hidden_and_rejects_bad_actions():
    env = wrap_hold_last(make_pointmass(5, start=(2, 2)))
    obs = env.reset()
    assert isinstance(obs, int)
    with pytest.raises(ContractError):
        env.step(5)
    with pytest.raises(ContractError):
        wrap_hold_last(make_pointmass(5), HoldLastSpec(hold_index=2))


def test_hold_last_reset_restores_default():
    env = wrap_hold_last(make_pointmass(5, start=(2, 2)))
    env.reset()
    env.step(3)
    env.reset()
    env.step(4)
    assert env.executed_action == 0


def hidden_trajectory(env, actions, seed):
    inner = env.unwrapped if hasattr(env, "unwrapped") else env
    env.reset(seed)
    states = []
    for a in actions:
        _, r, done, trunc = env.step(a)
        states.append((inner.state, r))
        if done or trunc:
            break
    return states


@pytest.mark.parametrize("wrap", [lambda e: wrap_noisy(e, NoiseSpec(0.5, 1)),
                                  lambda e: wrap_sticky(e, StickySpec(0.5, 1))])
def test_observation_wrappers_leave_dynamics_alone(wrap):
    actions = np.random.default_rng(0).integers(0, 2, 40)
    plain = hidden_trajectory(make_ring(RingSpec())[0], actions, 5)
    wrapped = hidden_trajectory(wrap(make_ring(RingSpec())[0]), actions, 5)
    assert plain == wrapped


def test_noisy_degenerate_probabilities():
    actions = [0, 1, 1, 0, 0, 0, 1]
    base = rollout(make_ring(RingSpec())[0], actions, seed=2)
    assert rollout(wrap_noisy(make_ring(RingSpec())[0], NoiseSpec(0.0)), actions, seed=2) == base
    env = wrap_noisy(make_ring(RingSpec())[0], NoiseSpec(1.0))
    first = env.reset(seed=2)
    assert all(env.step(a)[0] == first for a in actions)


@pytest.mark.parametrize("make, p", [(lambda e: wrap_noisy(e, NoiseSpec(0.1, 7)), 0.1),
                                     (lambda e: wrap_sticky(e, StickySpec(0.25, 7)), 0.25)])
def test_reuse_frequency(make, p):
    env = make(make_ring(RingSpec(horizon=10**6))[0])
    env.reset(seed=0)
    for _ in range(100_000):
        env.step(0)
    assert abs(env.n_reused / env.n_steps - p) <= 0.01


def test_probability_validation():
    with pytest.raises(ContractError):
        wrap_noisy(make_ring(RingSpec())[0], NoiseSpec(1.5))


def test_same_seed_same_trajectory():
    actions = [0, 1, 2, 3] * 10
    e1 = wrap_noisy(make_pointmass(5), NoiseSpec(0.3, 4))
    e2 = wrap_noisy(make_pointmass(5), NoiseSpec(0.3, 4))
    assert rollout(e1, actions, seed=9) == rollout(e2, actions, seed=9)


def test_dump_trajectory(tmp_path):
    rows = rollout(make_pointmass(3, start=(0, 0)), [1, 1, 3, 3], seed=0)
    path = tmp_path / "traj.tsv"
    dump_trajectory(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t\ts\ta\tr\ts_next\tdone\ttruncated"
    assert lines[-1].split("\t") == ["3", "7", "3", "-1.0", "8", "1", "0"]
