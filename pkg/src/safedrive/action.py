"""Safety filter: turns raw policy outputs into admissible actions.

A raw output is a pair ``(x, y)`` in [-3, 3]^2. ``x`` is mapped affinely onto
the admissible acceleration interval and ``y`` onto a lane-change choice.
Lane changes that fail the feasibility test are demoted to staying in lane,
so :func:`filter_action` is total.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from . import kernel
from .kernel import DEFAULT_SPEED_CAP, LaneChange, NeighborContext, VehicleParams

RAW_BOUND = 3.0


@dataclass(frozen=True)
class RawPolicyOutput:
    x: float
    y: float

    def clamped(self) -> "RawPolicyOutput":
        return RawPolicyOutput(_clamp(self.x), _clamp(self.y))


@dataclass(frozen=True)
class Action:
    accel: float
    lane_change: LaneChange = LaneChange.CUR


def _clamp(v: float) -> float:
    return min(max(v, -RAW_BOUND), RAW_BOUND)


def project_accel(x: float, a_safe: float, ego: VehicleParams) -> float:
    d = ego.max_decel
    a_ub = min(max(a_safe, -d), ego.max_accel)
    a = -d + (_clamp(x) + RAW_BOUND) / (2 * RAW_BOUND) * (a_ub + d)
    return min(a, a_ub)


def project_lane_change(y: float) -> LaneChange:
    y = _clamp(y)
    if y < -1:
        return LaneChange.LEFT
    if y < 1:
        return LaneChange.CUR
    return LaneChange.RIGHT


def accel_upper_bound(ctx: NeighborContext, v_ego: float, ego: VehicleParams,
                      lane_change: LaneChange = LaneChange.CUR,
                      cap: float = DEFAULT_SPEED_CAP) -> float:
    """Upper end of the admissible acceleration interval.

    During a lane change ego must stay safe behind both its current leader
    and the leader it is moving behind, so the tighter bound applies.
    An already-unsafe state collapses the interval to maximal braking.
    """
    d = ego.max_decel
    bound = kernel.safe_accel(ctx, v_ego, ego, cap)
    if bound.unsafe:
        return -d
    a_safe = bound.accel
    if lane_change != LaneChange.CUR:
        side = kernel.safe_accel(ctx, v_ego, ego, cap, direction=lane_change)
        if side.unsafe:
            return -d
        a_safe = min(a_safe, side.accel)
    return min(max(a_safe, -d), ego.max_accel)


def admissible_lane_change(requested: LaneChange, ctx: NeighborContext, v_ego: float,
                           ego: VehicleParams) -> LaneChange:
    if requested == LaneChange.CUR:
        return requested
    if kernel.lane_change_feasible(requested, v_ego, ctx, ego):
        return requested
    return LaneChange.CUR


def filter_action(raw: Union[RawPolicyOutput, Action], ctx: NeighborContext, v_ego: float,
                  ego: VehicleParams, cap: float = DEFAULT_SPEED_CAP) -> Action:
    """Project a raw output, or repair a direct action, onto the admissible set.

    An action that is already admissible comes back unchanged.
    """
    if isinstance(raw, Action):
        lane = admissible_lane_change(raw.lane_change, ctx, v_ego, ego)
        a_ub = accel_upper_bound(ctx, v_ego, ego, lane, cap)
        return Action(min(max(raw.accel, -ego.max_decel), a_ub), lane)
    raw = raw.clamped()
    lane = admissible_lane_change(project_lane_change(raw.y), ctx, v_ego, ego)
    a_ub = accel_upper_bound(ctx, v_ego, ego, lane, cap)
    return Action(project_accel(raw.x, a_ub, ego), lane)


def is_admissible(action: Action, ctx: NeighborContext, v_ego: float, ego: VehicleParams,
                  cap: float = DEFAULT_SPEED_CAP, tol: float = 1e-12) -> bool:
    if action.lane_change != LaneChange.CUR and not kernel.lane_change_feasible(
            action.lane_change, v_ego, ctx, ego):
        return False
    a_ub = accel_upper_bound(ctx, v_ego, ego, action.lane_change, cap)
    return -ego.max_decel - tol <= action.accel <= a_ub + tol
