"""A platoon settles on the predicted spacing; the equilibrium is stable for every w > 0.

Run: python demos/02_platoon_and_stability.py
"""
# %% Simulate a leader at 25 m/s with three followers
import numpy as np

from safedrive.analysis import FollowerSystem, classify_stability, platoon_prediction, stability_sweep, trajectory
from safedrive.kernel import VehicleParams
from safedrive.sim import make_scenario, run_episode

cfg = make_scenario("platoon", {"w": 25.0, "k": 3, "eps": 4.0, "decels": [5.0, 4.0, 3.0, 3.0]})
m = run_episode(cfg, "gipps_greedy", trace=True)
cols = m.trace.columns
last = cols["step"] == cols["step"].max()
pos = dict(zip(cols["id"][last].tolist(), cols["position"][last].tolist()))
vs = sorted(cfg.vehicles, key=lambda v: -v.position)
pred = platoon_prediction(25.0, [v.params for v in vs[1:]], [v.params.max_decel for v in vs[:-1]])
for (a, b), g in zip(zip(vs, vs[1:]), pred):
    print(f"vehicle {b.id} behind {a.id}: simulated {pos[a.id] - 5 - pos[b.id]:8.4f} m, predicted {g:8.4f} m")

# %% The two-vehicle map converges from a distant start
ego = VehicleParams(max_decel=3.0, reaction_time=0.1, min_gap=4.0)
tr = trajectory(FollowerSystem(25.0, ego, 3.0, gap=20.0, speed=20.0), 3000)
print("after 10, 100, 3000 steps:", [tuple(np.round(tr[k], 4)) for k in (10, 100, 3000)])

# %% Spectrum at the equilibrium
rep = classify_stability(FollowerSystem(25.0, ego, 3.0))
print(f"eigenvalues {rep.eigenvalues[0]:.4f}, {rep.eigenvalues[1]:.4f} -> {rep.classification.value}")

# %% The same holds across a grid of speeds, decelerations and reaction times
rows = stability_sweep(np.arange(0, 60.5, 0.5), range(1, 10), [0.05, 0.1, 0.5, 1.0])
kinds = {}
for r in rows:
    kinds.setdefault(r["classification"], []).append(r["w"])
for k, ws in kinds.items():
    print(f"{k}: {len(ws)} points (w from {min(ws)} to {max(ws)})")
