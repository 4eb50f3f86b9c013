"""
Estimating the residual from sampled transitions
================================================

With only transitions drawn from the occupancy, fitting a tabular potential
by least squares gives a loss that approaches the exact squared residual as
the sample grows.
"""
import numpy as np

from hodgeflow.envs import RingSpec, make_ring
from hodgeflow.hodge import (DiffOperator, FitterConfig, decompose, estimate_residual_from_samples,
                             sample_transitions, td_field)
from hodgeflow.mdp import exact_occupancy, uniform_distribution, uniform_policy

_, mdp, _ = make_ring(RingSpec(mode="nonintegrable", epsilon=0.1))
occ = exact_occupancy(mdp, uniform_policy(mdp), uniform_distribution(10))
V = np.zeros(10)
exact = decompose(DiffOperator(occ), td_field(mdp, occ, V)).norm_residual ** 2
print(f"exact squared residual: {exact:.6e}")

fitter = FitterConfig(mdp.n_states, mdp.discount)
for n in (100, 1000, 10_000, 100_000):
    losses = [estimate_residual_from_samples(sample_transitions(mdp, occ, n, [seed, n]), V, fitter)[1]
              for seed in range(10)]
    print(f"N={n:>6}: mean loss {np.mean(losses):.6e}  mean |gap| {np.mean(np.abs(np.subtract(losses, exact))):.2e}")
