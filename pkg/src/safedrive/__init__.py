"""Safety-filtered longitudinal and lateral control for multi-lane driving.

The safe-speed kernel, reward model, action filter, stability analysis,
greedy controllers and a compiled multi-lane simulator.
"""
from .action import Action, RawPolicyOutput, filter_action, is_admissible
from .controllers import CONTROLLERS, EgoView, GreedyConfig, comfort_greedy, gipps_greedy, make_policy
from .kernel import (LaneChange, Neighbor, NeighborContext, VehicleParams, lane_change_feasible,
                     max_safe_accel, max_safe_speed, required_safe_gap, target_speeds)
from .reward import RewardWeights, TransitionView, total_reward
from .route import RoutePosition, RouteSection, RouteSpec

__version__ = "0.1.0"

__all__ = [
    "Action", "RawPolicyOutput", "filter_action", "is_admissible",
    "CONTROLLERS", "EgoView", "GreedyConfig", "comfort_greedy", "gipps_greedy", "make_policy",
    "LaneChange", "Neighbor", "NeighborContext", "VehicleParams", "lane_change_feasible",
    "max_safe_accel", "max_safe_speed", "required_safe_gap", "target_speeds",
    "RewardWeights", "TransitionView", "total_reward",
    "RoutePosition", "RouteSection", "RouteSpec",
]
