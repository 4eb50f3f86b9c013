"""
Linear TD against linear HFPS on a random-feature MDP
=====================================================

Both learners evaluate the uniform policy on a 50-state MDP with 32 random
features. HFPS updates along the integrable part of each batch's TD errors.
Curves report MSVE against the exact value; roughness is the variance of a
curve around its own moving average.
"""
import numpy as np

from hodgeflow.harness import RunConfig, roughness, run_experiment

seeds = range(3)
for agent in ("td", "linear_hfps"):
    finals, rough = [], []
    for seed in seeds:
        cfg = RunConfig(env={"kind": "random_feature", "seed": seed}, agent=agent,
                        agent_config={"alpha_V": 0.1, "alpha_U": 0.1, "batch_size": 32},
                        total_steps=10_000, eval_interval=200, seeds=[seed])
        curve = -run_experiment(cfg).returns[0]
        finals.append(curve[-1])
        rough.append(roughness(curve))
    print(f"{agent:>12}: final MSVE {np.mean(finals):.3f} +- {np.std(finals):.3f}   roughness {np.mean(rough):.2e}")
