"""
Partial observability wrappers
==============================

hold_last adds a fifth action that replays a hidden last-executed move, up
to a cap. Noisy and sticky both re-emit the previous observation with a
fixed probability (0.1 and 0.25 by default) from separate random streams.
The hidden dynamics stay unchanged.
"""
from hodgeflow.envs import HoldLastSpec, NoiseSpec, RingSpec, StickySpec, make_pointmass, make_ring
from hodgeflow.envs import wrap_hold_last, wrap_noisy, wrap_sticky

env = wrap_hold_last(make_pointmass(5, start=(2, 2)), HoldLastSpec(max_hold_steps=2))
obs = env.reset()
print("chosen  executed  obs")
for chosen in (4, 3, 4, 4, 4, 2, 4):
    obs, r, done, trunc = env.step(chosen)
    print(f"{chosen:>6}  {env.executed_action:>8}  {obs:>3}")

for name, env in (("noisy", wrap_noisy(make_ring(RingSpec(horizon=10**6))[0], NoiseSpec(0.1, 0))),
                  ("sticky", wrap_sticky(make_ring(RingSpec(horizon=10**6))[0], StickySpec(0.25, 0)))):
    env.reset(seed=0)
    for _ in range(20_000):
        env.step(0)
    print(f"{name}: reuse frequency {env.n_reused / env.n_steps:.4f}")
