"""Independent reference computations used only by the tests.

They rebuild each quantity from its definition with dense loops and
plain least squares, sharing no code with the library.
"""
import numpy as np


def occupancy_by_power_series(P, pi, d0, gamma, tol=1e-15):
    """State and triplet occupancy by summing the discounted visitation series."""
    n = P.shape[0]
    P_pi = np.zeros((n, n))
    for s in range(n):
        for a in range(P.shape[1]):
            P_pi[s] += pi[s, a] * P[s, a]
    nu = np.zeros(n)
    d = np.array(d0, dtype=float)
    w = 1.0 - gamma
    while w > tol:
        nu += w * d
        d = d @ P_pi
        w *= gamma
    mu = nu[:, None, None] * pi[:, :, None] * P
    return nu, mu


def dense_decomposition(nu, mu, field_table, gamma, support_tol=1e-14):
    """Weighted minimal-norm least squares ``min_u ||f - du||_mu``.

    Returns ``(u_star, residual_norm, exact_norm)``; ``u_star`` is zero on
    unvisited states.
    """
    n = nu.shape[0]
    rows, rhs, weights = [], [], []
    for s in range(n):
        for a in range(mu.shape[1]):
            for s2 in range(n):
                m = mu[s, a, s2]
                if m <= support_tol or nu[s2] <= support_tol:
                    continue
                row = np.zeros(n)
                row[s2] += 1.0
                row[s] -= gamma
                rows.append(row)
                rhs.append(field_table[s, a, s2])
                weights.append(m)
    X, f, w = np.array(rows), np.array(rhs), np.array(weights)
    keep = nu > support_tol
    # minimal norm in L2(nu): substitute u = v / sqrt(nu)
    Xs = np.sqrt(w)[:, None] * X[:, keep] / np.sqrt(nu[keep])[None, :]
    v = np.linalg.lstsq(Xs, np.sqrt(w) * f, rcond=None)[0]
    u = np.zeros(n)
    u[keep] = v / np.sqrt(nu[keep])
    exact = X @ u
    res = np.sqrt(np.sum(w * (f - exact) ** 2))
    return u, float(res), float(np.sqrt(np.sum(w * exact ** 2)))


def td_table(P, R, V, gamma):
    n, A, _ = P.shape
    out = np.zeros((n, A, n))
    for s in range(n):
        for a in range(A):
            for s2 in range(n):
                out[s, a, s2] = R[s, a, s2] + gamma * V[s2] - V[s]
    return out


def trapezoid(t, R):
    total = 0.0
    for k in range(len(t) - 1):
        total += (R[k] + R[k + 1]) / 2.0 * (t[k + 1] - t[k])
    return total


def policy_value_by_iteration(P, R, pi, gamma, tol=1e-13):
    n = P.shape[0]
    V = np.zeros(n)
    while True:
        V_new = np.zeros(n)
        for s in range(n):
            for a in range(P.shape[1]):
                V_new[s] += pi[s, a] * np.sum(P[s, a] * (R[s, a] + gamma * V))
        if np.max(np.abs(V_new - V)) < tol:
            return V_new
        V = V_new
