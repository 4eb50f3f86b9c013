"""
Control behind the hold-last interface
======================================

Tabular Q-learning and tabular HFPS on the 5x5 point mass with the
hold-last action. Returns are minus the number of steps to the goal, so the
area under the curve is negative and larger is better. The batch residual
is large relative to the integrable part here, so the gating keeps HFPS close
to the raw TD direction and the greedy policies often coincide.
"""
from hodgeflow.harness import RunConfig, auc_at_t, final_at_t, run_experiment

base = {"env": {"kind": "pointmass", "grid_size": 5}, "wrappers": [{"kind": "hold_last"}],
        "agent_config": {"gamma": 0.99, "alpha_V": 0.5}, "total_steps": 10_000, "eval_interval": 1000,
        "seeds": [0, 1, 2]}
for agent in ("q_learning", "hfps"):
    series = run_experiment(RunConfig.from_dict({**base, "agent": agent}))
    _, auc, auc_sd = auc_at_t(series)
    _, fin, fin_sd = final_at_t(series)
    print(f"{agent:>10}: AUC {auc:.0f} +- {auc_sd:.0f}   final return {fin:.1f} +- {fin_sd:.1f}")
