"""Finite discounted MDPs and the exact linear algebra around a fixed policy.

Rewards are stored per triplet ``r[s, a, s']``; state-action rewards are the
special case that is constant in the next state.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import ContractError, NumericalError, ShapeError

PROB_TOL = 1e-12
DENSE_SOLVE_LIMIT = 2000
SOLVE_TOL = 1e-12
# triplets with less occupancy mass than this are treated as unvisited
SUPPORT_TOL = 1e-14


@dataclass(frozen=True)
class FiniteMdp:
    """The tuple (S, A, P, r, gamma) with ``P[s, a, s']`` and ``r[s, a, s']``."""

    transition: np.ndarray
    reward: np.ndarray
    discount: float

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ShapeError(f"transition must have shape (S, A, S), got {P.shape}")
        r = np.array(self.reward, dtype=float)
        if r.ndim == 2:
            r = np.repeat(r[:, :, None], P.shape[2], axis=2)
        if r.shape != P.shape:
            raise ShapeError(f"reward shape {r.shape} does not match transition {P.shape}")
        if np.any(P < 0) or not np.all(np.isfinite(P)):
            raise ContractError("transition probabilities must be finite and non-negative")
        rowsum = P.sum(axis=2)
        if np.max(np.abs(rowsum - 1.0)) > PROB_TOL:
            bad = np.argwhere(np.abs(rowsum - 1.0) > PROB_TOL)[0]
            raise ContractError(f"transition row (s={bad[0]}, a={bad[1]}) sums to {rowsum[tuple(bad)]!r}")
        if not np.all(np.isfinite(r)):
            raise ContractError("rewards must be finite")
        gamma = float(self.discount)
        if not 0.0 < gamma < 1.0:
            raise ContractError(f"discount must lie in (0, 1), got {gamma}")
        P.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "discount", gamma)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def r_max(self) -> float:
        return float(np.max(np.abs(self.reward))) if self.reward.size else 0.0

    def with_discount(self, gamma: float) -> "FiniteMdp":
        return FiniteMdp(self.transition, self.reward, gamma)


def check_policy(policy, mdp: FiniteMdp | None = None) -> np.ndarray:
    """Validate a policy table ``pi[s, a]`` and return it as a float array."""
    pi = np.asarray(policy, dtype=float)
    if pi.ndim != 2:
        raise ShapeError(f"policy must be a 2-d table, got shape {pi.shape}")
    if mdp is not None and pi.shape != (mdp.n_states, mdp.n_actions):
        raise ShapeError(f"policy shape {pi.shape} != {(mdp.n_states, mdp.n_actions)}")
    if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > PROB_TOL:
        raise ContractError("policy rows must be probability distributions")
    return pi


def check_distribution(d0, n_states: int | None = None) -> np.ndarray:
    d = np.asarray(d0, dtype=float)
    if d.ndim != 1 or (n_states is not None and d.shape[0] != n_states):
        raise ShapeError(f"initial distribution has shape {d.shape}, expected ({n_states},)")
    if np.any(d < 0) or abs(d.sum() - 1.0) > PROB_TOL:
        raise ContractError("initial distribution must be non-negative and sum to 1")
    return d


def uniform_policy(mdp: FiniteMdp) -> np.ndarray:
    return np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


def uniform_distribution(n_states: int) -> np.ndarray:
    return np.full(n_states, 1.0 / n_states)


@dataclass(frozen=True)
class OccupancyMeasures:
    """Discounted triplet occupancy ``mu`` and its state marginal ``nu``.

    ``mu`` is kept dense with shape (S, A, S); ``support`` lists the visited
    triplets as three index arrays, and every 1-cochain is stored as a vector
    aligned with that list.
    """

    nu: np.ndarray
    mu: np.ndarray
    discount: float
    support: tuple = field(init=False, repr=False)
    state_mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        nu = np.array(self.nu, dtype=float)
        s, a, s2 = np.nonzero(mu > 0)
        state_mask = nu > 0
        if not np.all(state_mask[s2]):
            # roundoff can leave a next state with vanishing marginal mass
            keep = state_mask[s2]
            mu[s[~keep], a[~keep], s2[~keep]] = 0.0
            s, a, s2 = s[keep], a[keep], s2[keep]
        for arr in (mu, nu, s, a, s2, state_mask):
            arr.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "support", (s, a, s2))
        object.__setattr__(self, "state_mask", state_mask)

    @property
    def n_states(self) -> int:
        return self.nu.shape[0]

    @property
    def n_support(self) -> int:
        return self.support[0].shape[0]

    @property
    def weights(self) -> np.ndarray:
        """Occupancy mass of each support triplet, aligned with ``support``."""
        return self.mu[self.support]

    def triplets(self) -> list[tuple[int, int, int]]:
        return list(zip(*(idx.tolist() for idx in self.support)))


def induced_chain(mdp: FiniteMdp, policy) -> np.ndarray:
    """State-to-state kernel ``P_pi(s, s') = sum_a pi(a|s) P(s'|s, a)``."""
    pi = check_policy(policy, mdp)
    return np.einsum("sa,sat->st", pi, mdp.transition)


def _solve(matrix, rhs, what: str) -> np.ndarray:
    n = matrix.shape[0]
    if n <= DENSE_SOLVE_LIMIT:
        dense = matrix.toarray() if scipy.sparse.issparse(matrix) else np.asarray(matrix)
        try:
            lu, piv = scipy.linalg.lu_factor(dense, check_finite=True)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise NumericalError(f"{what}: factorization failed ({exc})") from exc
        rcond = np.abs(np.diag(lu)).min() / max(np.abs(np.diag(lu)).max(), 1e-300)
        if rcond < 1e-15:
            raise NumericalError(f"{what}: matrix is numerically singular", condition=1.0 / max(rcond, 1e-300))
        return scipy.linalg.lu_solve((lu, piv), rhs)
    A = scipy.sparse.csr_matrix(matrix)
    x, info = scipy.sparse.linalg.gmres(A, rhs, rtol=SOLVE_TOL, atol=0.0, maxiter=10 * n)
    if info != 0:
        resid = np.linalg.norm(A @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
        raise NumericalError(f"{what}: iterative solve did not converge", residual=resid, info=info)
    return x


def _occupancy_from_nu(mdp, pi, nu) -> OccupancyMeasures:
    nu = np.where(nu > SUPPORT_TOL, nu, 0.0)
    mu = nu[:, None, None] * pi[:, :, None] * mdp.transition
    mu = np.where(mu > SUPPORT_TOL, mu, 0.0)
    return OccupancyMeasures(nu=nu, mu=mu, discount=mdp.discount)


def exact_occupancy(mdp: FiniteMdp, policy, d0) -> OccupancyMeasures:
    """Closed form ``nu = (1 - gamma) (I - gamma P_pi^T)^{-1} d0``, ``mu = nu pi P``."""
    pi = check_policy(policy, mdp)
    d0 = check_distribution(d0, mdp.n_states)
    gamma = mdp.discount
    P_pi = induced_chain(mdp, pi)
    system = np.eye(mdp.n_states) - gamma * P_pi.T
    nu = (1.0 - gamma) * _solve(system, d0, "occupancy")
    return _occupancy_from_nu(mdp, pi, nu)


def truncated_occupancy_oracle(mdp: FiniteMdp, policy, d0, horizon: int) -> OccupancyMeasures:
    """Partial geometric sum ``(1 - gamma) sum_{t < horizon} gamma^t d_t``.

    Test oracle only; the missing tail has total mass ``gamma ** horizon``.
    """
    if horizon < 1:
        raise ContractError("horizon must be at least 1")
    pi = check_policy(policy, mdp)
    d = check_distribution(d0, mdp.n_states).copy()
    gamma = mdp.discount
    P_pi = induced_chain(mdp, pi)
    nu = np.zeros(mdp.n_states)
    weight = 1.0 - gamma
    for _ in range(horizon):
        nu += weight * d
        d = d @ P_pi
        weight *= gamma
    return _occupancy_from_nu(mdp, pi, nu)


def expected_reward(mdp: FiniteMdp, policy) -> np.ndarray:
    """``r_pi(s) = sum_{a, s'} pi(a|s) P(s'|s, a) r(s, a, s')``."""
    pi = check_policy(policy, mdp)
    return np.einsum("sa,sat,sat->s", pi, mdp.transition, mdp.reward)


def exact_value(mdp: FiniteMdp, policy) -> np.ndarray:
    """Solve ``(I - gamma P_pi) V = r_pi``."""
    P_pi = induced_chain(mdp, policy)
    system = np.eye(mdp.n_states) - mdp.discount * P_pi
    return _solve(system, expected_reward(mdp, policy), "policy evaluation")


def exact_q_values(mdp: FiniteMdp, policy) -> np.ndarray:
    V = exact_value(mdp, policy)
    return np.einsum("sat,sat->sa", mdp.transition, mdp.reward + mdp.discount * V[None, None, :])


def optimal_q_values(mdp: FiniteMdp, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Q* by value iteration."""
    P, r, gamma = mdp.transition, mdp.reward, mdp.discount
    expected_r = np.einsum("sat,sat->sa", P, r)
    Q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        Q_new = expected_r + gamma * P @ Q.max(axis=1)
        if np.max(np.abs(Q_new - Q)) < tol:
            return Q_new
        Q = Q_new
    raise NumericalError("value iteration did not converge", max_iter=max_iter)


def random_mdp(n_states: int, n_actions: int, discount: float, rng, *, reward_scale: float = 1.0,
               next_state_rewards: bool = True) -> FiniteMdp:
    """Dense Dirichlet(1) transitions and uniform rewards, for tests and diagnostics."""
    rng = np.random.default_rng(rng)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    if next_state_rewards:
        r = rng.uniform(-reward_scale, reward_scale, size=(n_states, n_actions, n_states))
    else:
        r = rng.uniform(-reward_scale, reward_scale, size=(n_states, n_actions))
    return FiniteMdp(P, r, discount)


def random_policy(n_states: int, n_actions: int, rng) -> np.ndarray:
    rng = np.random.default_rng(rng)
    return rng.dirichlet(np.ones(n_actions), size=n_states)
