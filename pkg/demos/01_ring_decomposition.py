"""
Splitting a TD error field on the ten-state ring
================================================

The ring rewards are built from a potential, so the TD field of V = 0 is an
exact temporal gradient and leaves no residual. Bending one edge's reward
makes the field non-integrable: the residual becomes the part that no state
potential can explain.
"""
import numpy as np

from hodgeflow.diagnostics import operator_constants
from hodgeflow.envs import RingSpec, make_ring
from hodgeflow.hodge import DiffOperator, decompose, td_field
from hodgeflow.mdp import exact_occupancy, uniform_distribution, uniform_policy


def ring_decomposition(mode):
    _, mdp, u_true = make_ring(RingSpec(mode=mode, epsilon=0.1))
    occ = exact_occupancy(mdp, uniform_policy(mdp), uniform_distribution(mdp.n_states))
    op = DiffOperator(occ)
    return op, decompose(op, td_field(mdp, occ, np.zeros(mdp.n_states))), u_true


for mode in ("integrable", "nonintegrable"):
    _, h, _ = ring_decomposition(mode)
    print(f"{mode:>14}: |f|={h.norm_input:.6f}  |du*|={h.norm_exact:.6f}  |res|={h.norm_residual:.3e}")

# on the flat ring the recovered potential is the one the rewards came from
op, h, u_true = ring_decomposition("integrable")
print("max |u* - u_true|:", np.max(np.abs(h.u_star.values - u_true)))

# one bent edge of size eps leaves a residual of eps / sqrt(40)
print("eps / sqrt(40):", 0.1 / np.sqrt(40))

# conditioning of the Poisson solve: C_topo = 1 / (1 - gamma) here
c_topo, d_norm = operator_constants(op)
print(f"C_topo={c_topo:.3f}  ||d||={d_norm:.3f}")
