"""Weighted cochains, the discounted differential and the TD-error decomposition.

A 0-cochain is a function on states weighted by the state occupancy ``nu``; a
1-cochain is a function on visited triplets ``(s, a, s')`` weighted by the
triplet occupancy ``mu``. The differential maps a potential ``u`` to
``(du)(s, a, s') = u(s') - gamma u(s)`` and every TD-error field splits
orthogonally into ``du*`` plus a residual that no potential can explain.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse

from .errors import ContractError, NumericalError, ShapeError
from .mdp import FiniteMdp, OccupancyMeasures, expected_reward, induced_chain

CG_RTOL = 1e-12
KERNEL_RTOL = 1e-10
DENSE_KERNEL_LIMIT = 2000


@dataclass(frozen=True, eq=False)
class Cochain0:
    """State function in L2(nu). Entries off the support of nu carry no weight."""

    values: np.ndarray
    occupancy: OccupancyMeasures

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.occupancy.n_states,):
            raise ShapeError(f"0-cochain needs shape ({self.occupancy.n_states},), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ContractError("0-cochain entries must be finite")
        object.__setattr__(self, "values", v)

    def norm(self) -> float:
        return float(np.sqrt(inner0(self, self)))

    def __add__(self, other):
        _same_space(self, other)
        return Cochain0(self.values + other.values, self.occupancy)

    def __sub__(self, other):
        _same_space(self, other)
        return Cochain0(self.values - other.values, self.occupancy)

    def __mul__(self, c):
        return Cochain0(self.values * float(c), self.occupancy)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class Cochain1:
    """Triplet function in L2(mu), stored only on the support of mu.

    ``values[i]`` belongs to the triplet ``occupancy.triplets()[i]``; values off
    the support are undefined rather than zero.
    """

    values: np.ndarray
    occupancy: OccupancyMeasures

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.occupancy.n_support,):
            raise ShapeError(f"1-cochain needs shape ({self.occupancy.n_support},), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ContractError("1-cochain entries must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_table(cls, table, occupancy: OccupancyMeasures) -> "Cochain1":
        """Restrict a dense ``(S, A, S)`` table to the support."""
        return cls(np.asarray(table, dtype=float)[occupancy.support], occupancy)

    def norm(self) -> float:
        return float(np.sqrt(inner1(self, self)))

    def __add__(self, other):
        _same_space(self, other)
        return Cochain1(self.values + other.values, self.occupancy)

    def __sub__(self, other):
        _same_space(self, other)
        return Cochain1(self.values - other.values, self.occupancy)

    def __mul__(self, c):
        return Cochain1(self.values * float(c), self.occupancy)

    __rmul__ = __mul__


def _same_space(x, y):
    if type(x) is not type(y) or x.occupancy is not y.occupancy:
        raise ContractError("cochains live on different occupancy measures")


def inner0(u1: Cochain0, u2: Cochain0) -> float:
    _same_space(u1, u2)
    nu = u1.occupancy.nu
    m = u1.occupancy.state_mask
    return float(np.sum(nu[m] * u1.values[m] * u2.values[m]))


def inner1(f1: Cochain1, f2: Cochain1) -> float:
    _same_space(f1, f2)
    return float(np.sum(f1.occupancy.weights * f1.values * f2.values))


class DiffOperator:
    """The differential ``d: C0 -> C1`` for one occupancy and discount.

    ``gamma`` defaults to the discount the occupancy was computed with; passing
    another value keeps the weights but changes the differential, which is
    what the discount-sensitivity check needs.
    """

    def __init__(self, occupancy: OccupancyMeasures, gamma: float | None = None):
        self.occupancy = occupancy
        self.gamma = float(occupancy.discount if gamma is None else gamma)
        if not 0.0 < self.gamma < 1.0:
            raise ContractError(f"gamma must lie in (0, 1), got {self.gamma}")
        s, _, s2 = occupancy.support
        m, n = occupancy.n_support, occupancy.n_states
        rows = np.concatenate([np.arange(m), np.arange(m)])
        cols = np.concatenate([s2, s])
        vals = np.concatenate([np.ones(m), np.full(m, -self.gamma)])
        # duplicate (row, col) pairs from self-loops are summed to 1 - gamma
        self.d_matrix = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(m, n))

    @cached_property
    def _states(self) -> np.ndarray:
        return np.flatnonzero(self.occupancy.state_mask)

    @cached_property
    def whitened(self) -> scipy.sparse.csr_matrix:
        """``W^{1/2} D N^{-1/2}`` on supported states: d in orthonormal coordinates."""
        occ = self.occupancy
        idx = self._states
        w_half = scipy.sparse.diags(np.sqrt(occ.weights))
        n_inv_half = scipy.sparse.diags(1.0 / np.sqrt(occ.nu[idx]))
        return (w_half @ self.d_matrix[:, idx] @ n_inv_half).tocsr()

    @cached_property
    def stiffness(self) -> scipy.sparse.csr_matrix:
        """Laplacian in orthonormal coordinates, ``N^{1/2} Delta0 N^{-1/2}``."""
        M = self.whitened
        return (M.T @ M).tocsr()

    @cached_property
    def kernel_basis(self) -> np.ndarray | None:
        """Orthonormal basis of the numerical kernel, in orthonormal coordinates.

        Eigenvalues below ``KERNEL_RTOL * lambda_max`` count as zero. Returns
        None when the support is too large for a dense eigendecomposition.
        """
        n = self._states.shape[0]
        if n > DENSE_KERNEL_LIMIT:
            return None
        evals, evecs = np.linalg.eigh(self.stiffness.toarray())
        cutoff = KERNEL_RTOL * max(evals[-1], 0.0)
        return evecs[:, evals <= cutoff]


def apply_d(op: DiffOperator, u: Cochain0) -> Cochain1:
    if u.occupancy is not op.occupancy:
        raise ContractError("potential lives on a different occupancy measure")
    return Cochain1(op.d_matrix @ u.values, op.occupancy)


def apply_d_adjoint(op: DiffOperator, f: Cochain1) -> Cochain0:
    """Weighted divergence ``(d* f)(s) = [sum_in mu f - gamma sum_out mu f] / nu(s)``."""
    if f.occupancy is not op.occupancy:
        raise ContractError("field lives on a different occupancy measure")
    occ = op.occupancy
    flux = op.d_matrix.T @ (occ.weights * f.values)
    out = np.zeros(occ.n_states)
    m = occ.state_mask
    out[m] = flux[m] / occ.nu[m]
    return Cochain0(out, occ)


def laplacian(op: DiffOperator) -> np.ndarray:
    """Dense matrix of ``Delta0 = d* d`` acting on value vectors.

    Rows and columns of states outside the support are zero. The matrix is
    self-adjoint for ``inner0`` (``diag(nu) @ L`` is symmetric), not for the
    plain dot product.
    """
    occ = op.occupancy
    D = op.d_matrix
    L = np.zeros((occ.n_states, occ.n_states))
    idx = op._states
    weighted = (D.T @ scipy.sparse.diags(occ.weights) @ D).toarray()
    L[np.ix_(idx, idx)] = weighted[np.ix_(idx, idx)] / occ.nu[idx, None]
    return L


def _conjugate_gradient(K, b, rtol, max_iter):
    """Jacobi-preconditioned CG on a symmetric PSD system started at zero.

    Returns (x, relative residual, iterations). The true residual is recomputed
    on every restart to stop recurrence drift from hiding stagnation.
    """
    diag = K.diagonal()
    inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    x = np.zeros_like(b)
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return x, 0.0, 0
    n_iter = 0
    restart_every = max(2 * b.shape[0], 20)
    r = b.copy()
    pKp = 1.0
    while True:
        z = inv_diag * r
        p = z.copy()
        rz = r @ z
        for _ in range(restart_every):
            if np.linalg.norm(r) <= rtol * b_norm or n_iter >= max_iter:
                break
            Kp = K @ p
            pKp = p @ Kp
            if pKp <= 0:
                break
            alpha = rz / pKp
            x += alpha * p
            r -= alpha * Kp
            z = inv_diag * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
            n_iter += 1
        r_true = b - K @ x
        rel = np.linalg.norm(r_true) / b_norm
        if rel <= rtol or n_iter >= max_iter or pKp <= 0:
            return x, rel, n_iter
        r = r_true


def solve_poisson(op: DiffOperator, f: Cochain1, *, rtol: float = CG_RTOL, max_iter: int | None = None) -> Cochain0:
    """Minimal-norm solution of ``Delta0 u = d* f``.

    Equivalently the minimal-norm minimiser of ``||f - du||`` in C1. Solved
    by conjugate gradients in orthonormal coordinates, then stripped of any
    numerical-kernel component.
    """
    if f.occupancy is not op.occupancy:
        raise ContractError("field lives on a different occupancy measure")
    occ = op.occupancy
    idx = op._states
    M = op.whitened
    b = M.T @ (np.sqrt(occ.weights) * f.values)
    K = op.stiffness
    if max_iter is None:
        max_iter = 10 * occ.n_states
    v, rel, n_iter = _conjugate_gradient(K, b, rtol, max_iter)
    if rel > rtol:
        raise NumericalError("Poisson solve did not reach tolerance", residual=rel, iterations=n_iter)
    basis = op.kernel_basis
    if basis is not None and basis.shape[1]:
        v = v - basis @ (basis.T @ v)
    u = np.zeros(occ.n_states)
    u[idx] = v / np.sqrt(occ.nu[idx])
    return Cochain0(u, occ)


@dataclass(frozen=True, eq=False)
class HodgeDecomposition:
    """``field = exact_part + residual`` with ``exact_part = d u_star``."""

    field: Cochain1
    u_star: Cochain0
    exact_part: Cochain1
    residual: Cochain1
    gamma: float

    @property
    def norm_input(self) -> float:
        return self.field.norm()

    @property
    def norm_exact(self) -> float:
        return self.exact_part.norm()

    @property
    def norm_residual(self) -> float:
        return self.residual.norm()

    @property
    def orthogonality_defect(self) -> float:
        return abs(inner1(self.exact_part, self.residual))

    @property
    def pythagoras_defect(self) -> float:
        return abs(self.norm_input ** 2 - self.norm_exact ** 2 - self.norm_residual ** 2)

    def report(self) -> dict:
        return {
            "gamma": self.gamma,
            "n_states": int(self.u_star.occupancy.n_states),
            "norm_input": self.norm_input,
            "norm_exact": self.norm_exact,
            "norm_residual": self.norm_residual,
            "orthogonality_defect": self.orthogonality_defect,
            "pythagoras_defect": self.pythagoras_defect,
            "u_star": self.u_star.values.tolist(),
        }


def decompose(op: DiffOperator, f: Cochain1, **solver_kw) -> HodgeDecomposition:
    u = solve_poisson(op, f, **solver_kw)
    exact = apply_d(op, u)
    return HodgeDecomposition(field=f, u_star=u, exact_part=exact, residual=f - exact, gamma=op.gamma)


def _values(V, n_states):
    v = V.values if isinstance(V, Cochain0) else np.asarray(V, dtype=float)
    if v.shape != (n_states,):
        raise ShapeError(f"value vector needs shape ({n_states},), got {v.shape}")
    return v


def td_field(mdp: FiniteMdp, occupancy: OccupancyMeasures, V, gamma: float | None = None) -> Cochain1:
    """``delta_V(s, a, s') = r(s, a, s') + gamma V(s') - V(s)`` on the support."""
    gamma = mdp.discount if gamma is None else float(gamma)
    v = _values(V, mdp.n_states)
    s, a, s2 = occupancy.support
    return Cochain1(mdp.reward[s, a, s2] + gamma * v[s2] - v[s], occupancy)


def mean_defect(mdp: FiniteMdp, policy, V) -> np.ndarray:
    """State-level Bellman defect ``E[r + gamma V(S') - V(S) | S = s]``."""
    v = _values(V, mdp.n_states)
    return expected_reward(mdp, policy) + mdp.discount * induced_chain(mdp, policy) @ v - v


def mean_field_differential(mdp: FiniteMdp, policy, gamma: float | None = None) -> np.ndarray:
    """Matrix of ``u -> E[u(S') - gamma u(s) | S = s]``."""
    gamma = mdp.discount if gamma is None else gamma
    return induced_chain(mdp, policy) - gamma * np.eye(mdp.n_states)


@dataclass
class FitterConfig:
    """How to fit a tabular potential to sampled TD errors.

    ``method="lstsq"`` is the exact minimal-norm least-squares fit;
    ``method="gradient"`` runs full-batch gradient descent from zero.
    """

    n_states: int
    gamma: float
    method: str = "lstsq"
    learning_rate: float = 0.5
    n_steps: int = 1000


def _as_dataset(dataset):
    data = np.asarray(dataset, dtype=float)
    if data.size == 0:
        raise ContractError("dataset is empty")
    if data.ndim != 2 or data.shape[1] != 4:
        raise ShapeError(f"dataset rows must be (s, a, r, s'), got shape {data.shape}")
    return data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2], data[:, 3].astype(int)


def sample_design(s, s2, n_states, gamma) -> np.ndarray:
    """Rows of the empirical differential: +1 at s', -gamma at s."""
    X = np.zeros((s.shape[0], n_states))
    np.add.at(X, (np.arange(s.shape[0]), s2), 1.0)
    np.add.at(X, (np.arange(s.shape[0]), s), -gamma)
    return X


def estimate_residual_from_samples(dataset, V, config: FitterConfig, weights=None):
    """Fit a tabular potential to sampled TD errors.

    Returns ``(U, loss)`` where ``loss = mean((delta_i - [U(s'_i) - gamma U(s_i)])^2)``
    at the fitted ``U``. Optional per-row ``weights`` turn the mean into a
    weighted average, e.g. to evaluate every support triplet at its mass.
    """
    s, _, r, s2 = _as_dataset(dataset)
    v = _values(V, config.n_states)
    gamma = config.gamma
    delta = r + gamma * v[s2] - v[s]
    X = sample_design(s, s2, config.n_states, gamma)
    w = np.full(delta.shape[0], 1.0 / delta.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != delta.shape or np.any(w < 0) or w.sum() <= 0:
        raise ContractError("weights must be non-negative, one per row, with positive sum")
    w = w / w.sum()
    if config.method == "lstsq":
        sw = np.sqrt(w)
        U = np.linalg.lstsq(sw[:, None] * X, sw * delta, rcond=None)[0]
    elif config.method == "gradient":
        U = np.zeros(config.n_states)
        for _ in range(config.n_steps):
            U += config.learning_rate * 2.0 * X.T @ (w * (delta - X @ U))
    else:
        raise ContractError(f"unknown fitter method {config.method!r}")
    loss = float(np.sum(w * (delta - X @ U) ** 2))
    return U, loss


def sample_transitions(mdp: FiniteMdp, occupancy: OccupancyMeasures, n: int, rng) -> np.ndarray:
    """Draw ``n`` i.i.d. triplets from mu; rows are ``(s, a, r, s')``."""
    rng = np.random.default_rng(rng)
    w = occupancy.weights
    picks = rng.choice(w.shape[0], size=n, p=w / w.sum())
    s, a, s2 = (idx[picks] for idx in occupancy.support)
    return np.column_stack([s, a, mdp.reward[s, a, s2], s2]).astype(float)
