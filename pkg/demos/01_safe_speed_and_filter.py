"""How the safety kernel bounds speed and how raw actions are filtered.

Run: python demos/01_safe_speed_and_filter.py
"""
# %% A follower at 20 m/s behind a stopped car
from safedrive import Neighbor, NeighborContext, RawPolicyOutput, VehicleParams, filter_action
from safedrive.kernel import max_safe_speed, required_safe_gap, target_speeds

ego = VehicleParams(max_accel=2.5, max_decel=3.0, reaction_time=0.1, min_gap=2.0)
need = required_safe_gap(20, 20, 0, ego, leader_decel=3.0)
print(f"gap needed to keep 20 m/s behind a stopped car: {need:.3f} m")

# %% The largest safe next-step speed for a range of gaps
for gap in (2, 10, 30, 70.667, 150):
    print(f"  gap {gap:7.3f} m -> safe speed {max_safe_speed(gap, 20, 0, ego, 3.0):6.3f} m/s")

# %% Lane targets: the current lane is blocked, the left lane is open
ctx = NeighborContext(leader=Neighbor(speed=8, max_decel=3, reaction_time=0.1), gap=25.0,
                      right_gap=-1, right_back_gap=-1)
t = target_speeds(ctx, 12.0, speed_limit=30.0, ego=ego)
print(f"targets left={t.left} cur={t.cur:.3f} right={t.right}")

# %% Whatever the policy asks for, the filter keeps it admissible
for raw in (RawPolicyOutput(3, 0), RawPolicyOutput(3, -3), RawPolicyOutput(-3, 3), RawPolicyOutput(0, 0)):
    act = filter_action(raw, ctx, 12.0, ego)
    print(f"  raw ({raw.x:+.0f}, {raw.y:+.0f}) -> accel {act.accel:+.3f} m/s^2, {act.lane_change.name}")
