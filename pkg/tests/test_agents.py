import numpy as np
import pytest

from hodgeflow.agents import (AgentState, Batch, HfpsConfig, ReplayBuffer, act, epsilon_at, hfps_gradient_pair,
                              linear_td_update, make_agent, practical_hfps_update, projection_gate,
                              q_learning_update, rms, tbd_update)
from hodgeflow.envs import RingSpec, make_ring
from hodgeflow.errors import ContractError, DivergenceError
from hodgeflow.mdp import FiniteMdp, exact_occupancy, optimal_q_values, uniform_distribution, uniform_policy


def batch3():
    return Batch.from_rows([(0, 0, 1.0, 1), (1, 0, -0.5, 2), (2, 0, 0.25, 0), (1, 0, 0.0, 1)])


def test_greedy_tie_break_lowest_index():
    state = AgentState.tabular(1, 3)
    state.theta[0] = [0.0, 5.0, 5.0]
    assert act(state, 0, True, np.random.default_rng(0)) == 1


def test_full_exploration_is_uniform():
    state = AgentState.tabular(1, 4)
    rng = np.random.default_rng(0)
    counts = np.bincount([act(state, 0, False, rng, epsilon=1.0) for _ in range(40_000)], minlength=4)
    assert np.all(np.abs(counts / 40_000 - 0.25) < 0.01)


def test_epsilon_greedy_frequency():
    state = AgentState.tabular(1, 3)
    state.theta[0] = [0.0, 1.0, 0.0]
    rng = np.random.default_rng(1)
    hits = sum(act(state, 0, False, rng, epsilon=0.05) == 1 for _ in range(100_000))
    assert abs(hits / 100_000 - (0.95 + 0.05 / 3)) <= 0.01


def test_epsilon_schedule():
    cfg = HfpsConfig()
    assert epsilon_at(cfg, 0.0) == 1.0
    assert epsilon_at(cfg, 0.25) == pytest.approx(0.525)
    assert epsilon_at(cfg, 0.5) == pytest.approx(0.05)
    assert epsilon_at(cfg, 0.9) == pytest.approx(0.05)


def test_replay_buffer_fifo_and_reproducible():
    buf = ReplayBuffer(3, seed=0)
    for i in range(5):
        buf.add(i, 0, float(i), i + 1)
    assert len(buf) == 3
    assert set(buf.sample(200).s.tolist()) == {2, 3, 4}
    b1 = ReplayBuffer(3, seed=4)
    b2 = ReplayBuffer(3, seed=4)
    for b in (b1, b2):
        for i in range(3):
            b.add(i, 0, 0.0, i)
    assert np.array_equal(b1.sample(10).s, b2.sample(10).s)
    with pytest.raises(ContractError):
        ReplayBuffer(2).sample(1)


def test_config_validation():
    with pytest.raises(ContractError):
        HfpsConfig(topo_weight=1.5)
    with pytest.raises(ContractError):
        HfpsConfig(inner_steps=0)
    with pytest.raises(ContractError):
        HfpsConfig(gate_power=0.5)
    assert HfpsConfig(gamma=0.9).resolved_delta_max(2.0) == pytest.approx(200.0)
    assert HfpsConfig().digest() == HfpsConfig().digest() != HfpsConfig(alpha_V=0.2).digest()


# idealized decomposition update

def test_tbd_integrable_batch_matches_td_step():
    # pick phi so that U(s') - g U(s) equals the TD error on every sample
    gamma = 0.9
    b = Batch.from_rows([(0, 0, 1.0, 1), (1, 0, -0.5, 2), (2, 0, 0.25, 0)])
    td, tbd = AgentState.tabular(3), AgentState.tabular(3)
    td.theta = tbd.theta = np.array([0.3, -0.2, 0.5])
    delta = b.r + gamma * td.theta[b.s2] - td.theta[b.s]
    X = np.zeros((3, 3))
    np.add.at(X, (np.arange(3), b.s2), 1.0)
    np.add.at(X, (np.arange(3), b.s), -gamma)
    tbd.phi = np.linalg.lstsq(X, delta, rcond=None)[0]
    assert np.allclose(X @ tbd.phi, delta, atol=1e-12)  # this batch is integrable
    cfg = HfpsConfig(gamma=gamma, alpha_V=0.3, alpha_U=0.1)
    rep = tbd_update(tbd, b, cfg)
    linear_td_update(td, b, cfg)
    assert rep["topo_loss"] <= 1e-24
    assert np.allclose(tbd.theta, td.theta, atol=1e-12)


def test_tbd_zero_signal_changes_nothing():
    b = Batch.from_rows([(0, 0, 0.0, 1), (1, 0, 0.0, 0)])
    state = AgentState.tabular(2)
    tbd_update(state, b, HfpsConfig())
    assert np.all(state.theta == 0) and np.all(state.phi == 0)


def test_tbd_potential_step_matches_finite_differences():
    gamma, alpha_u = 0.9, 0.05
    b = batch3()
    state = AgentState.tabular(3)
    state.theta = np.array([0.1, 0.4, -0.3])
    state.phi = np.array([0.2, -0.1, 0.05])
    delta = b.r + gamma * state.theta[b.s2] - state.theta[b.s]

    def loss(phi):
        return np.mean((delta - (phi[b.s2] - gamma * phi[b.s])) ** 2)

    h = 1e-6
    fd = np.array([(loss(state.phi + h * e) - loss(state.phi - h * e)) / (2 * h) for e in np.eye(3)])
    expected = state.phi - alpha_u * fd
    tbd_update(state, b, HfpsConfig(gamma=gamma, alpha_U=alpha_u, alpha_V=0.0))
    assert np.allclose(state.phi, expected, atol=1e-9)


def test_tbd_inner_loss_non_increasing_for_small_steps():
    gamma = 0.9
    b = batch3()
    X = np.zeros((4, 3))
    np.add.at(X, (np.arange(4), b.s2), 1.0)
    np.add.at(X, (np.arange(4), b.s), -gamma)
    curvature = np.linalg.eigvalsh(2 * X.T @ X / 4)[-1]
    state = AgentState.tabular(3)
    cfg = HfpsConfig(gamma=gamma, alpha_U=0.9 / curvature, alpha_V=0.0)
    losses = [tbd_update(state, b, cfg)["topo_loss"] for _ in range(20)]
    assert all(b2 <= b1 + 1e-15 for b1, b2 in zip(losses, losses[1:]))


def test_tabular_td_matches_hand_update():
    b = batch3()
    state = AgentState.tabular(3)
    state.theta = np.array([1.0, 2.0, 3.0])
    expected = state.theta.copy()
    delta = b.r + 0.9 * state.theta[b.s2] - state.theta[b.s]
    for s, d in zip(b.s, delta):
        expected[s] += 0.5 * d / 4
    linear_td_update(state, b, HfpsConfig(gamma=0.9, alpha_V=0.5))
    assert np.allclose(state.theta, expected, atol=1e-15)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    state = AgentState.tabular(3)
    state.theta = np.array([np.inf, 0.0, 0.0])
    with pytest.raises(DivergenceError):
        linear_td_update(state, batch3(), HfpsConfig())


# Q-learning

def chain_mdp():
    # moving right from state 1 into the absorbing state 2 pays 1
    P = np.zeros((3, 2, 3))
    R = np.zeros((3, 2, 3))
    for s in range(3):
        P[s, 1, min(s + 1, 2)] = 1.0
        P[s, 0, max(s - 1, 0)] = 1.0
    P[2] = 0.0
    P[2, :, 2] = 1.0
    R[1, 1, 2] = 1.0
    return FiniteMdp(P, R, 0.9)


def test_q_learning_terminal_target_is_reward():
    state = AgentState.tabular(2, 2)
    state.theta_target[:] = 100.0
    b = Batch.from_rows([(0, 1, 1.0, 1, True, False)])
    q_learning_update(state, b, HfpsConfig(alpha_V=1.0))
    assert state.theta[0, 1] == 1.0
    b = Batch.from_rows([(0, 1, 1.0, 1, False, True)])
    q_learning_update(state, b, HfpsConfig(alpha_V=1.0, gamma=0.5))
    assert state.theta[0, 1] == 51.0


def test_q_learning_zero_step_size():
    state = AgentState.tabular(3, 2)
    q_learning_update(state, Batch.from_rows([(0, 1, 1.0, 1)]), HfpsConfig(alpha_V=0.0))
    assert np.all(state.theta == 0)


def test_q_learning_sweeps_reach_optimal_q():
    mdp = chain_mdp()
    q_star = optimal_q_values(mdp)
    rows = [(s, a, mdp.reward[s, a, s2], s2) for s in range(2) for a in range(2)
            for s2 in range(3) if mdp.transition[s, a, s2] > 0]
    rows.append((2, 0, 0.0, 2, True, False))
    rows.append((2, 1, 0.0, 2, True, False))
    state = AgentState.tabular(3, 2)
    cfg = HfpsConfig(gamma=0.9, alpha_V=float(len(rows)), target_interval=1)
    for _ in range(200):
        q_learning_update(state, Batch.from_rows(rows), cfg)
    # terminal state has value 0, as in the optimal values of the absorbing chain
    assert np.allclose(state.theta[:2], q_star[:2], atol=1e-6)


def test_target_refresh_interval():
    state = AgentState.tabular(2, 2)
    cfg = HfpsConfig(alpha_V=1.0, target_interval=2)
    b = Batch.from_rows([(0, 0, 1.0, 1)])
    q_learning_update(state, b, cfg)
    assert np.all(state.theta_target == 0)
    q_learning_update(state, b, cfg)
    assert np.array_equal(state.theta_target, state.theta)


# practical pipeline

def test_gate_formula_cases():
    assert projection_gate(2.0, 0.0, 0.5, 2.0, 1e-8) == (1.0, 0.5)
    q, lam = projection_gate(2.0, 2.0, 0.5, 2.0, 1e-8)
    assert q == pytest.approx(0.0, abs=1e-8) and lam == pytest.approx(0.0, abs=1e-15)
    q, lam = projection_gate(2.0, 1.0, 0.5, 2.0, 0.0)
    assert (q, lam) == (0.5, 0.125)


def test_practical_update_report_relations():
    rng = np.random.default_rng(0)
    rows = [(int(rng.integers(5)), int(rng.integers(2)), float(rng.normal()), int(rng.integers(5))) for _ in range(32)]
    state = AgentState.tabular(5, 2, delta_max=1.0)
    state.theta = rng.normal(size=(5, 2))
    state.theta_target = rng.normal(size=(5, 2))
    cfg = HfpsConfig(gamma=0.9, alpha_V=0.1, alpha_U=0.2, inner_steps=4)
    rep = practical_hfps_update(state, Batch.from_rows(rows), cfg)
    assert 0 <= rep["q_score"] <= 1
    assert rep["q_score"] == pytest.approx(max(0.0, 1 - rep["norm_res"] / (rep["norm_clip"] + cfg.eps_num)), abs=0)
    assert rep["lambda_eff"] == pytest.approx(cfg.topo_weight * rep["q_score"] ** cfg.gate_power, abs=0)
    assert rep["norm_clip"] <= 1.0 + 1e-12
    assert rep["norm_eff"] <= rep["norm_clip"] * (1 + 1e-9)
    assert len(rep["inner_losses"]) == cfg.inner_steps + 1
    assert all(np.isfinite(v) for k, v in rep.items() if k != "inner_losses")


def test_practical_update_with_exact_potential_blends_fully():
    # a single transition is always integrable for a tabular potential
    state = AgentState.tabular(2, 2)
    cfg = HfpsConfig(gamma=0.5, alpha_U=0.2, inner_steps=200, alpha_V=0.1)
    rep = practical_hfps_update(state, Batch.from_rows([(0, 1, 1.0, 1)]), cfg)
    assert rep["norm_res"] < 1e-6
    assert rep["lambda_eff"] == pytest.approx(cfg.topo_weight, rel=1e-5)
    assert rep["rescale_factor"] == pytest.approx(1.0, rel=1e-5)


def test_rms():
    assert rms([3.0, 4.0]) == pytest.approx(np.sqrt(12.5))
    assert rms([]) == 0.0


# expected update directions

def perturbed_ring():
    _, mdp, _ = make_ring(RingSpec(mode="nonintegrable"))
    return mdp, uniform_policy(mdp)


def test_gradient_pair_equal_without_residual():
    _, mdp, _ = make_ring(RingSpec(mode="integrable"))
    pi = uniform_policy(mdp)
    state = AgentState.tabular(10)
    g_td, g_h, bound = hfps_gradient_pair(state, mdp=mdp, policy=pi, d0=uniform_distribution(10))
    assert np.allclose(g_td, g_h, atol=1e-12)
    assert bound <= 1e-9


def test_gradient_pair_bound_scales_with_residual():
    mdp, pi = perturbed_ring()
    state = AgentState.tabular(10)
    d0 = uniform_distribution(10)
    g_td, g_h, bound = hfps_gradient_pair(state, mdp=mdp, policy=pi, d0=d0)
    assert np.linalg.norm(g_h - g_td) <= bound + 1e-9
    doubled = FiniteMdp(mdp.transition, 2 * mdp.reward, mdp.discount)
    g_td2, g_h2, bound2 = hfps_gradient_pair(state, mdp=doubled, policy=pi, d0=d0)
    assert bound2 == pytest.approx(2 * bound, rel=1e-9)
    assert np.linalg.norm(g_h2 - g_td2) <= bound2 + 1e-9


def test_gradient_pair_batch_mode():
    mdp, pi = perturbed_ring()
    occ = exact_occupancy(mdp, pi, uniform_distribution(10))
    from hodgeflow.hodge import sample_transitions
    b = Batch.from_rows([tuple(r) for r in sample_transitions(mdp, occ, 300, 0)])
    g_td, g_h, bound = hfps_gradient_pair(AgentState.tabular(10), b, gamma=0.99)
    assert np.linalg.norm(g_h - g_td) <= bound + 1e-9
    with pytest.raises(ContractError):
        hfps_gradient_pair(AgentState.tabular(10), b)


# agent objects

def test_make_agent_kinds():
    for kind in ("q_learning", "hfps"):
        agent = make_agent(kind, np.eye(4), 2, HfpsConfig(), seed=0)
        assert agent.state.theta.shape == (4, 2)
    agent = make_agent("td", np.eye(4), 2, HfpsConfig(), seed=0, behavior_policy=np.full((4, 2), 0.5))
    assert agent.state.theta.shape == (4,) and not agent.control
    with pytest.raises(ContractError):
        make_agent("sarsa", np.eye(4), 2, HfpsConfig())


def test_checkpoint_round_trip():
    cfg = HfpsConfig(batch_size=2)
    agent = make_agent("hfps", np.eye(3), 2, cfg, seed=1)
    for s in range(3):
        agent.store_transition(s, 1, 1.0, (s + 1) % 3)
    agent.update()
    ckpt = agent.checkpoint()
    other = make_agent("hfps", np.eye(3), 2, cfg, seed=99)
    other.restore(ckpt)
    assert np.array_equal(other.state.theta, agent.state.theta)
    assert [agent.act(0) for _ in range(20)] == [other.act(0) for _ in range(20)]
    with pytest.raises(ContractError):
        make_agent("hfps", np.eye(3), 2, HfpsConfig(alpha_V=0.5)).restore(ckpt)


def test_updates_deterministic_given_seed():
    def run(seed):
        agent = make_agent("hfps", np.eye(4), 2, HfpsConfig(batch_size=4), seed=seed)
        for i in range(30):
            agent.store_transition(i % 4, i % 2, float(i % 3), (i + 1) % 4)
            agent.update()
        return agent.state.theta
    assert np.array_equal(run(3), run(3))
