"""The four-term driving reward: efficiency, comfort, discretionary and
mandatory lane changing."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .kernel import LaneChange, SpeedTriple, VehicleParams
from .route import RouteSpec


@dataclass(frozen=True)
class RewardWeights:
    comf: float = 1.0
    lc: float = 1.0
    mlc: float = 1.0
    gamma: float = 0.99

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if min(self.comf, self.lc, self.mlc) < 0:
            raise ValueError("reward weights must be nonnegative")


@dataclass(frozen=True)
class TransitionView:
    """Everything the reward needs from one (s, a, s') transition.

    ``accel`` is a_E(s) (the acceleration applied on the previous step, 0 at
    episode start) and ``accel_next`` is a_E(s'). ``section``/``lane`` index
    into the route; ``dist_to_end`` is the distance to the end of the section.
    """

    speed: float
    speed_next: float
    accel: float
    accel_next: float
    targets: SpeedTriple
    lane_change: LaneChange
    section: int
    lane: int
    dist_to_end: float
    ego: VehicleParams

    def __post_init__(self):
        if self.dist_to_end < 0:
            raise ValueError("dist_to_end must be >= 0")


def r_efficiency(view: TransitionView) -> float:
    target = view.targets.cur
    if target <= 0:
        return 0.0  # fully jammed: nothing to normalise by
    return -abs(target - view.speed) / target


def r_comfort(view: TransitionView) -> float:
    ego = view.ego
    t = (view.accel_next - view.accel) / (ego.max_accel + ego.max_decel)
    return -(t * t)


def catchup_steps(v0: float, v1: float, ego: VehicleParams) -> int:
    """Steps needed to make up a speed difference at full acceleration,
    rounded half away from zero."""
    return math.floor(abs(v0 - v1) / (ego.max_accel * ego.reaction_time) + 0.5)


def boost_coefficient(v0: float, v1: float, weights: RewardWeights, ego: VehicleParams) -> float:
    """Sum of gamma**t for t < catchup_steps(v0, v1)."""
    n = catchup_steps(v0, v1, ego)
    if n == 0:
        return 0.0
    if weights.gamma == 0:
        return 1.0
    q = 1.0 - weights.gamma  # exact for gamma in [0.5, 1)
    # 1 - gamma**n without cancellation
    return -math.expm1(n * math.log1p(-q)) / q


def r_discretionary_lc(view: TransitionView, weights: RewardWeights) -> float:
    if view.lane_change == LaneChange.CUR:
        return 0.0
    cur = view.targets.cur
    target = view.targets.get(view.lane_change)
    if target is None:
        raise ValueError(f"lane change {view.lane_change.name} into a lane that does not exist")
    if cur <= 0:
        return 0.0
    return boost_coefficient(target, cur, weights, view.ego) * (target - cur) / cur


def r_mandatory_lc(view: TransitionView, route: RouteSpec) -> float:
    delta = route.lane_changes_needed(view.section, view.lane)
    return -delta / (1.0 + view.dist_to_end)


def total_reward(view: TransitionView, route: RouteSpec, weights: RewardWeights) -> float:
    return (r_efficiency(view)
            + weights.comf * r_comfort(view)
            + weights.lc * r_discretionary_lc(view, weights)
            + weights.mlc * r_mandatory_lc(view, route))
