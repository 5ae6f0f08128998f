"""Both built-in controllers across the scenario suite.

Run: python demos/03_scenarios.py [seeds]
"""
# %% Batch every scenario under both controllers
import sys

import numpy as np

from safedrive.sim import make_scenario, run_episode

seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 5
kinds = ["loop_normal", "loop_congested", "loop_emergency", "freeway_bypass", "freeway_emergency", "freeway_merge"]
print(f"{'scenario':18s} {'controller':15s} {'speed':>7s} {'|jerk|':>7s} {'crash':>6s} {'route miss':>10s}")
for kind in kinds:
    for ctrl in ("gipps_greedy", "comfort_greedy"):
        ms = [run_episode(make_scenario(kind, seed=s), ctrl) for s in range(seeds)]
        print(f"{kind:18s} {ctrl:15s} {np.mean([m.mean_speed for m in ms]):7.2f} "
              f"{np.mean([m.mean_abs_jerk for m in ms]):7.3f} {np.mean([m.crash for m in ms]):6.2f} "
              f"{np.mean([m.route_miss for m in ms]):10.2f}")

# %% The comfort controller scores a single step, so at weight 1 it tends to keep
# its previous acceleration; lighter weights trade jerk back for speed
from safedrive.controllers import GreedyConfig

for w in (1.0, 0.3, 0.0):
    ms = [run_episode(make_scenario("loop_normal", seed=s), "comfort_greedy", greedy=GreedyConfig(comfort_weight=w))
          for s in range(seeds)]
    print(f"comfort weight {w:3.1f}: speed {np.mean([m.mean_speed for m in ms]):6.2f} m/s, "
          f"|jerk| {np.mean([m.mean_abs_jerk for m in ms]):.3f} m/s^3")

# %% A custom policy: always floor it and try to move left; the filter keeps it safe
from safedrive.action import RawPolicyOutput

m = run_episode(make_scenario("loop_congested", seed=0), lambda view: RawPolicyOutput(3.0, -3.0))
print(f"reckless policy behind the filter: crash={m.crash}, mean speed {m.mean_speed:.2f} m/s, "
      f"min gap {m.min_gap:.3f} m")
