"""Tabular and linear learners: TD and Q-learning baselines plus HFPS.

Every learner is linear in a fixed feature matrix ``features[s]``; tabular
agents use the identity matrix. Value agents hold ``theta`` of shape ``(d,)``
with ``V(s) = features[s] @ theta``; control agents hold shape ``(d, A)``
with ``Q(s, a) = features[s] @ theta[:, a]``. The potential is always
``U(s) = features[s] @ phi``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, DivergenceError
from .hodge import DiffOperator, decompose, sample_design, td_field
from .mdp import FiniteMdp, exact_occupancy


@dataclass
class HfpsConfig:
    gamma: float = 0.99
    alpha_V: float = 0.1
    alpha_U: float = 0.1
    # None means 10 * r_max / (1 - gamma), resolved by the agent that knows r_max
    delta_max: float | None = None
    inner_steps: int = 5
    topo_weight: float = 0.5
    gate_power: float = 2.0
    eps_num: float = 1e-8
    rescale_cap: float = 10.0
    grad_clip_norm: float = 10.0
    target_interval: int = 1000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.5
    batch_size: int = 64
    buffer_capacity: int = 100_000
    recompute_potential: bool = True
    tbd_potential_steps: int = 1

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ContractError("gamma must lie in (0, 1)")
        if self.inner_steps < 1 or self.tbd_potential_steps < 1:
            raise ContractError("inner step counts must be at least 1")
        if not 0.0 <= self.topo_weight <= 1.0:
            raise ContractError("topo_weight must lie in [0, 1]")
        if self.gate_power < 1.0:
            raise ContractError("gate_power must be >= 1")
        if self.batch_size < 1 or self.buffer_capacity < 1 or self.target_interval < 1:
            raise ContractError("batch_size, buffer_capacity and target_interval must be positive")
        if self.delta_max is not None and self.delta_max <= 0:
            raise ContractError("delta_max must be positive")

    def resolved_delta_max(self, r_max: float) -> float:
        if self.delta_max is not None:
            return self.delta_max
        return 10.0 * max(r_max, 1e-12) / (1.0 - self.gamma)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    truncated: np.ndarray

    def __len__(self):
        return self.s.shape[0]

    @classmethod
    def from_rows(cls, rows):
        """Rows of ``(s, a, r, s')`` or ``(s, a, r, s', done, truncated)``."""
        rows = [tuple(row) + (False, False)[: 6 - len(row)] for row in rows]
        cols = list(zip(*rows))
        return cls(np.asarray(cols[0], dtype=int), np.asarray(cols[1], dtype=int),
                   np.asarray(cols[2], dtype=float), np.asarray(cols[3], dtype=int),
                   np.asarray(cols[4], dtype=bool), np.asarray(cols[5], dtype=bool))


class ReplayBuffer:
    """FIFO buffer with uniform sampling with replacement."""

    def __init__(self, capacity: int = 100_000, seed=None):
        self.capacity = int(capacity)
        self.rng = np.random.default_rng(seed)
        self._s = np.zeros(self.capacity, dtype=int)
        self._a = np.zeros(self.capacity, dtype=int)
        self._r = np.zeros(self.capacity)
        self._s2 = np.zeros(self.capacity, dtype=int)
        self._done = np.zeros(self.capacity, dtype=bool)
        self._trunc = np.zeros(self.capacity, dtype=bool)
        self._next = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, s, a, r, s2, done=False, truncated=False):
        i = self._next
        self._s[i], self._a[i], self._r[i], self._s2[i] = s, a, r, s2
        self._done[i], self._trunc[i] = done, truncated
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int) -> Batch:
        if self.size == 0:
            raise ContractError("cannot sample from an empty buffer")
        idx = self.rng.integers(self.size, size=batch_size)
        return Batch(self._s[idx], self._a[idx], self._r[idx], self._s2[idx],
                     self._done[idx], self._trunc[idx])


@dataclass
class AgentState:
    features: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    theta_target: np.ndarray = None
    step_count: int = 0
    delta_max: float = np.inf
    last_report: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.theta_target is None:
            self.theta_target = self.theta.copy()

    @classmethod
    def tabular(cls, n_states: int, n_actions: int | None = None, **kw):
        return cls.linear(np.eye(n_states), n_actions, **kw)

    @classmethod
    def linear(cls, features, n_actions: int | None = None, **kw):
        features = np.asarray(features, dtype=float)
        d = features.shape[1]
        theta = np.zeros(d) if n_actions is None else np.zeros((d, n_actions))
        return cls(features=features, theta=theta, phi=np.zeros(d), **kw)

    def values(self, theta=None) -> np.ndarray:
        return self.features @ (self.theta if theta is None else theta)

    def potential(self) -> np.ndarray:
        return self.features @ self.phi


def epsilon_at(cfg: HfpsConfig, progress: float) -> float:
    """Linear decay from eps_start to eps_end over the first ``eps_decay_fraction`` of training."""
    frac = min(max(progress, 0.0) / cfg.eps_decay_fraction, 1.0) if cfg.eps_decay_fraction > 0 else 1.0
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


def act(state: AgentState, obs, evaluate: bool, rng, epsilon: float = 0.0) -> int:
    """Greedy action (lowest index on ties) or epsilon-greedy."""
    q = state.features[int(obs)] @ state.theta
    if not evaluate and rng.random() < epsilon:
        return int(rng.integers(q.shape[0]))
    return int(np.argmax(q))


def _clip_norm(g, max_norm):
    n = np.linalg.norm(g)
    return g * (max_norm / n) if n > max_norm else g


def _finish(state: AgentState, cfg: HfpsConfig, report: dict) -> dict:
    state.step_count += 1
    if state.step_count % cfg.target_interval == 0:
        state.theta_target = state.theta.copy()
    if not (np.all(np.isfinite(state.theta)) and np.all(np.isfinite(state.phi))):
        raise DivergenceError("non-finite parameters after update", step=state.step_count)
    state.last_report = report
    return report


def _value_step(state: AgentState, s, direction, alpha):
    """theta += alpha * mean_i direction_i * grad V(s_i); shared by TD and TBD."""
    feats = state.features[s]
    state.theta = state.theta + alpha * (feats.T @ direction) / s.shape[0]


def _potential_diff(state, batch, gamma):
    return state.features[batch.s2] @ state.phi - gamma * (state.features[batch.s] @ state.phi)


def _potential_grad(state, batch, target, gamma):
    """Gradient of mean((U(s') - gamma U(s) - target)^2) in phi."""
    X = state.features[batch.s2] - gamma * state.features[batch.s]
    return (2.0 / len(batch)) * X.T @ (X @ state.phi - target)


def _value_td_errors(state, batch, gamma):
    v = state.values()
    boot = np.where(batch.done, 0.0, v[batch.s2])
    return batch.r + gamma * boot - v[batch.s]


def linear_td_update(state: AgentState, batch: Batch, cfg: HfpsConfig) -> dict:
    """Semi-gradient TD(0): ``w += alpha mean(delta phi(s))``."""
    delta = _value_td_errors(state, batch, cfg.gamma)
    _value_step(state, batch.s, delta, cfg.alpha_V)
    return _finish(state, cfg, {"mean_sq_td": float(np.mean(delta ** 2))})


def tbd_update(state: AgentState, batch: Batch, cfg: HfpsConfig) -> dict:
    """One HFPS iteration with the topological Bellman decomposition.

    Fits the potential to the batch TD errors by gradient steps, then moves
    the value parameters along the integrable component only.
    """
    if len(batch) == 0:
        raise ContractError("empty batch")
    gamma = cfg.gamma
    delta = _value_td_errors(state, batch, gamma)
    pot = _potential_diff(state, batch, gamma)
    topo_loss = float(np.mean((delta - pot) ** 2))
    for _ in range(cfg.tbd_potential_steps):
        state.phi = state.phi - cfg.alpha_U * _potential_grad(state, batch, delta, gamma)
        if cfg.recompute_potential:
            pot = _potential_diff(state, batch, gamma)
    integrable = pot
    _value_step(state, batch.s, integrable, cfg.alpha_V)
    report = {"topo_loss": topo_loss, "mean_sq_residual": float(np.mean((delta - integrable) ** 2))}
    return _finish(state, cfg, report)


def q_targets(state: AgentState, batch: Batch, gamma: float) -> np.ndarray:
    q_next = state.features[batch.s2] @ state.theta_target
    return batch.r + gamma * np.where(batch.done, 0.0, q_next.max(axis=1))


def _q_step(state, batch, direction, alpha, clip):
    grad = np.zeros_like(state.theta)
    np.add.at(grad.T, batch.a, direction[:, None] * state.features[batch.s])
    grad /= len(batch)
    if clip is not None:
        grad = _clip_norm(grad, clip)
    state.theta = state.theta + alpha * grad


def _q_current(state, batch):
    return np.einsum("bd,bd->b", state.features[batch.s], state.theta[:, batch.a].T)


def q_learning_update(state: AgentState, batch: Batch, cfg: HfpsConfig) -> dict:
    """Q-learning toward ``r + gamma max_a' Q_target(s', a')``; no bootstrap on done."""
    delta = q_targets(state, batch, cfg.gamma) - _q_current(state, batch)
    _q_step(state, batch, delta, cfg.alpha_V, None)
    return _finish(state, cfg, {"mean_sq_td": float(np.mean(delta ** 2))})


def rms(x) -> float:
    return float(np.sqrt(np.mean(np.square(x)))) if np.size(x) else 0.0


def projection_gate(norm_clip: float, norm_res: float, topo_weight: float, gate_power: float, eps: float):
    """Projection quality ``q`` and effective topological weight ``lambda_eff``."""
    q = max(0.0, 1.0 - norm_res / (norm_clip + eps))
    return q, topo_weight * q ** gate_power


def practical_hfps_update(state: AgentState, batch: Batch, cfg: HfpsConfig) -> dict:
    """Stabilised HFPS step for Q-learners.

    Clipped target-network TD error, ``inner_steps`` potential fits, residual
    gated blend of integrable and raw TD directions, norm-preserving
    rescaling, then a clipped semi-gradient step on Q.
    """
    if len(batch) == 0:
        raise ContractError("empty batch")
    gamma, dmax, eps = cfg.gamma, state.delta_max, cfg.eps_num
    delta = q_targets(state, batch, gamma) - _q_current(state, batch)
    delta_clip = np.clip(delta, -dmax, dmax)
    inner_losses = []
    for _ in range(cfg.inner_steps):
        inner_losses.append(float(np.mean((_potential_diff(state, batch, gamma) - delta_clip) ** 2)))
        grad = _clip_norm(_potential_grad(state, batch, delta_clip, gamma), cfg.grad_clip_norm)
        state.phi = state.phi - cfg.alpha_U * grad
    inner_losses.append(float(np.mean((_potential_diff(state, batch, gamma) - delta_clip) ** 2)))
    delta_int = np.clip(_potential_diff(state, batch, gamma), -dmax, dmax)
    delta_res = delta_clip - delta_int
    n_clip, n_int, n_res = rms(delta_clip), rms(delta_int), rms(delta_res)
    q, lam = projection_gate(n_clip, n_res, cfg.topo_weight, cfg.gate_power, eps)
    delta_raw = lam * delta_int + (1.0 - lam) * delta_clip
    factor = min(n_clip / (rms(delta_raw) + eps), cfg.rescale_cap)
    delta_eff = factor * delta_raw
    _q_step(state, batch, delta_eff, cfg.alpha_V, cfg.grad_clip_norm)
    report = {
        "q_score": q,
        "lambda_eff": lam,
        "norm_clip": n_clip,
        "norm_int": n_int,
        "norm_res": n_res,
        "norm_eff": rms(delta_eff),
        "rescale_factor": factor,
        "inner_losses": inner_losses,
        "mean_sq_residual": float(np.mean(delta_res ** 2)),
    }
    return _finish(state, cfg, report)


def hfps_gradient_pair(state: AgentState, batch: Batch | None = None, *, gamma: float | None = None,
                       mdp: FiniteMdp | None = None, policy=None, d0=None, occupancy=None):
    """Expected TD and HFPS update directions and the gap bound ``B * ||res||``.

    With a batch the expectations are empirical and the potential is the
    exact tabular least-squares fit on that batch; otherwise ``mdp``,
    ``policy`` and ``d0`` (or a precomputed ``occupancy``) give exact
    expectations over the occupancy support. Returns ``(g_td, g_hfps, bound)``.
    """
    if batch is not None:
        if gamma is None:
            raise ContractError("batch mode needs gamma")
        delta = _value_td_errors(state, batch, gamma)
        X = sample_design(batch.s, batch.s2, state.features.shape[0], gamma)
        u = np.linalg.lstsq(X, delta, rcond=None)[0]
        exact = X @ u
        weights = np.full(len(batch), 1.0 / len(batch))
        states = batch.s
    else:
        if mdp is None:
            raise ContractError("exact mode needs an mdp")
        if occupancy is None:
            occupancy = exact_occupancy(mdp, policy, d0)
        field_ = td_field(mdp, occupancy, state.values())
        h = decompose(DiffOperator(occupancy), field_)
        delta, exact = field_.values, h.exact_part.values
        weights = occupancy.weights
        states = occupancy.support[0]
    feats = state.features[states]
    g_td = feats.T @ (weights * delta)
    g_hfps = feats.T @ (weights * exact)
    B = float(np.max(np.linalg.norm(feats, axis=1)))
    res_norm = float(np.sqrt(np.sum(weights * (delta - exact) ** 2)))
    return g_td, g_hfps, B * res_norm


class Agent:
    """Common act / store_transition / update interface used by the harness."""

    kind = "base"
    control = True

    def __init__(self, state: AgentState, cfg: HfpsConfig, seed=None, behavior_policy=None):
        self.state = state
        self.cfg = cfg
        ss = np.random.SeedSequence(seed)
        act_seed, buf_seed = ss.spawn(2)
        self.rng = np.random.default_rng(act_seed)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, buf_seed)
        self.behavior_policy = behavior_policy
        self.progress = 0.0

    def act(self, obs, evaluate: bool = False) -> int:
        if not self.control:
            pi = self.behavior_policy[int(obs)]
            return int(self.rng.choice(pi.shape[0], p=pi))
        return act(self.state, obs, evaluate, self.rng, epsilon_at(self.cfg, self.progress))

    def store_transition(self, s, a, r, s2, done=False, truncated=False):
        self.buffer.add(s, a, r, s2, done, truncated)

    def update(self):
        if len(self.buffer) < self.cfg.batch_size:
            return None
        return self._update(self.buffer.sample(self.cfg.batch_size))

    def _update(self, batch):
        raise NotImplementedError

    def residual_indicator(self):
        return self.state.last_report.get("mean_sq_residual")

    def checkpoint(self) -> dict:
        s = self.state
        return {
            "kind": self.kind,
            "theta": s.theta.tolist(),
            "phi": s.phi.tolist(),
            "theta_target": s.theta_target.tolist(),
            "step_count": s.step_count,
            "config_hash": self.cfg.digest(),
            "rng_state": self.rng.bit_generator.state,
        }

    def restore(self, ckpt: dict):
        if ckpt["config_hash"] != self.cfg.digest():
            raise ContractError("checkpoint was written with a different config")
        s = self.state
        s.theta = np.asarray(ckpt["theta"], dtype=float)
        s.phi = np.asarray(ckpt["phi"], dtype=float)
        s.theta_target = np.asarray(ckpt["theta_target"], dtype=float)
        s.step_count = int(ckpt["step_count"])
        self.rng.bit_generator.state = ckpt["rng_state"]


class QLearningAgent(Agent):
    kind = "q_learning"

    def _update(self, batch):
        return q_learning_update(self.state, batch, self.cfg)


class HfpsAgent(Agent):
    kind = "hfps"

    def _update(self, batch):
        return practical_hfps_update(self.state, batch, self.cfg)


class TdAgent(Agent):
    kind = "td"
    control = False

    def _update(self, batch):
        return linear_td_update(self.state, batch, self.cfg)


class TbdAgent(Agent):
    kind = "linear_hfps"
    control = False

    def _update(self, batch):
        return tbd_update(self.state, batch, self.cfg)


AGENT_KINDS = {cls.kind: cls for cls in (QLearningAgent, HfpsAgent, TdAgent, TbdAgent)}


def make_agent(kind: str, features, n_actions: int, cfg: HfpsConfig, seed=None, *, r_max: float = 1.0,
               behavior_policy=None) -> Agent:
    """Build an agent by kind name over a feature matrix (identity for tabular)."""
    try:
        cls = AGENT_KINDS[kind]
    except KeyError:
        raise ContractError(f"unknown agent kind {kind!r}; known: {sorted(AGENT_KINDS)}") from None
    feats = np.asarray(features, dtype=float)
    state = AgentState.linear(feats, n_actions if cls.control else None,
                              delta_max=cfg.resolved_delta_max(r_max))
    return cls(state, cfg, seed, behavior_policy=behavior_policy)
