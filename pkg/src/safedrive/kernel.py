"""Longitudinal and lateral safety envelopes.

Every function here is pure. Speeds are in m/s, distances in m, accelerations
in m/s^2 (decelerations are positive magnitudes).

Gap sentinels follow one convention everywhere: ``math.inf`` means the lane
exists but nobody occupies the role, ``-1`` means the lane does not exist.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

DEFAULT_SPEED_CAP = 100.0
NO_LANE = -1.0


class DefensivePrincipleError(ValueError):
    """Ego brakes harder than the leader it is paired with."""


class LaneChange(enum.IntEnum):
    """Lateral action. The value is the lane-index offset (lanes count from the right)."""

    RIGHT = -1
    CUR = 0
    LEFT = 1


@dataclass(frozen=True)
class VehicleParams:
    max_accel: float = 2.5
    max_decel: float = 3.0
    reaction_time: float = 0.1
    min_gap: float = 2.0
    length: float = 5.0

    def __post_init__(self):
        for name in ("max_accel", "max_decel", "reaction_time", "length"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if not self.min_gap >= 0:
            raise ValueError(f"min_gap must be >= 0, got {self.min_gap}")


@dataclass(frozen=True)
class Neighbor:
    """What the ego needs to know about one surrounding vehicle."""

    speed: float
    max_decel: float
    reaction_time: float


@dataclass(frozen=True)
class NeighborContext:
    """The six-neighbour view around the ego vehicle.

    ``gap``/``back_gap`` refer to the current lane; the ``left_*`` and
    ``right_*`` gaps refer to the adjacent lanes. A gap of -1 marks a missing
    lane, ``inf`` a missing vehicle.
    """

    leader: Optional[Neighbor] = None
    follower: Optional[Neighbor] = None
    left_leader: Optional[Neighbor] = None
    left_follower: Optional[Neighbor] = None
    right_leader: Optional[Neighbor] = None
    right_follower: Optional[Neighbor] = None
    gap: float = math.inf
    back_gap: float = math.inf
    left_gap: float = math.inf
    left_back_gap: float = math.inf
    right_gap: float = math.inf
    right_back_gap: float = math.inf

    def __post_init__(self):
        if self.gap == NO_LANE or self.back_gap == NO_LANE:
            raise ValueError("the current lane always exists")
        for side in ("left", "right"):
            front, back = getattr(self, f"{side}_gap"), getattr(self, f"{side}_back_gap")
            if (front == NO_LANE) != (back == NO_LANE):
                raise ValueError(f"{side} gaps must both be -1 when the lane is absent")
        for role, gap_name in _ROLE_GAPS.items():
            neighbor, gap = getattr(self, role), getattr(self, gap_name)
            if gap == NO_LANE:
                if neighbor is not None:
                    raise ValueError(f"{role} given on a missing lane")
            elif (neighbor is None) != math.isinf(gap):
                raise ValueError(f"{role}: gap must be inf exactly when the role is empty")

    def has_lane(self, direction: LaneChange) -> bool:
        if direction == LaneChange.CUR:
            return True
        return self.lane_gaps(direction)[0] != NO_LANE

    def lane_gaps(self, direction: LaneChange) -> tuple[float, float]:
        """(front gap, back gap) for the lane in ``direction``."""
        if direction == LaneChange.LEFT:
            return self.left_gap, self.left_back_gap
        if direction == LaneChange.RIGHT:
            return self.right_gap, self.right_back_gap
        return self.gap, self.back_gap

    def lane_neighbors(self, direction: LaneChange) -> tuple[Optional[Neighbor], Optional[Neighbor]]:
        if direction == LaneChange.LEFT:
            return self.left_leader, self.left_follower
        if direction == LaneChange.RIGHT:
            return self.right_leader, self.right_follower
        return self.leader, self.follower

    def mirrored(self) -> "NeighborContext":
        """Swap left and right."""
        return NeighborContext(
            leader=self.leader, follower=self.follower,
            left_leader=self.right_leader, left_follower=self.right_follower,
            right_leader=self.left_leader, right_follower=self.left_follower,
            gap=self.gap, back_gap=self.back_gap,
            left_gap=self.right_gap, left_back_gap=self.right_back_gap,
            right_gap=self.left_gap, right_back_gap=self.left_back_gap,
        )


_ROLE_GAPS = {
    "leader": "gap", "follower": "back_gap",
    "left_leader": "left_gap", "left_follower": "left_back_gap",
    "right_leader": "right_gap", "right_follower": "right_back_gap",
}


@dataclass(frozen=True)
class SpeedTriple:
    """Target speed per lane; ``None`` where the lane is absent."""

    left: Optional[float]
    cur: float
    right: Optional[float]

    def get(self, direction: LaneChange) -> Optional[float]:
        return {LaneChange.LEFT: self.left, LaneChange.CUR: self.cur, LaneChange.RIGHT: self.right}[direction]


class SafeSpeed(NamedTuple):
    speed: float
    unsafe: bool  # the state already violates the safe-gap condition


class SafeAccel(NamedTuple):
    accel: float
    unsafe: bool


def check_defensive(ego_decel: float, leader_decel: float) -> None:
    if ego_decel > leader_decel:
        raise DefensivePrincipleError(
            f"ego max_decel {ego_decel} exceeds leader max_decel {leader_decel}")


def required_safe_gap(v_now: float, v_next: float, v_leader: float,
                      ego: VehicleParams, leader_decel: float) -> float:
    """Smallest front gap from which ego can still stop ``min_gap`` behind an
    emergency-braking leader, given ego commits to ``v_next`` for one reaction time."""
    check_defensive(ego.max_decel, leader_decel)
    return ((v_now + v_next) * ego.reaction_time / 2
            + v_next * v_next / (2 * ego.max_decel)
            - v_leader * v_leader / (2 * leader_decel)
            + ego.min_gap)


def safe_speed(gap: float, v_ego: float, v_leader: float, ego: VehicleParams,
               leader_decel: float, cap: float = DEFAULT_SPEED_CAP) -> SafeSpeed:
    """Largest next-step speed satisfying the safe-gap condition.

    This is the positive root of the safe-gap quadratic in ``v_next``. An
    unoccupied lane (``gap == inf``) returns ``cap``. When even stopping next
    step would violate the condition, returns 0 with ``unsafe`` set.
    """
    if math.isinf(gap):
        return SafeSpeed(cap, False)
    check_defensive(ego.max_decel, leader_decel)
    d, r = ego.max_decel, ego.reaction_time
    half = r * d / 2
    disc = half * half - 2 * d * (r * v_ego / 2 - v_leader * v_leader / (2 * leader_decel) - gap + ego.min_gap)
    if disc < half * half:
        # root would be negative (or complex): no admissible speed exists
        return SafeSpeed(0.0, True)
    return SafeSpeed(math.sqrt(disc) - half, False)


def max_safe_speed(gap: float, v_ego: float, v_leader: float, ego: VehicleParams,
                   leader_decel: float, cap: float = DEFAULT_SPEED_CAP) -> float:
    return safe_speed(gap, v_ego, v_leader, ego, leader_decel, cap).speed


def lane_safe_speed(ctx: NeighborContext, direction: LaneChange, v_ego: float,
                    ego: VehicleParams, cap: float = DEFAULT_SPEED_CAP) -> Optional[SafeSpeed]:
    """Safe speed for an imaginary copy of ego on the lane in ``direction``."""
    if not ctx.has_lane(direction):
        return None
    gap = ctx.lane_gaps(direction)[0]
    leader = ctx.lane_neighbors(direction)[0]
    if leader is None:
        return SafeSpeed(cap, False)
    return safe_speed(gap, v_ego, leader.speed, ego, leader.max_decel, cap)


def safe_accel(ctx: NeighborContext, v_ego: float, ego: VehicleParams,
               cap: float = DEFAULT_SPEED_CAP, direction: LaneChange = LaneChange.CUR) -> SafeAccel:
    """Acceleration that brings ego exactly to its safe speed; not clipped."""
    s = lane_safe_speed(ctx, direction, v_ego, ego, cap)
    if s is None:
        raise ValueError(f"no lane in direction {direction.name}")
    return SafeAccel((s.speed - v_ego) / ego.reaction_time, s.unsafe)


def max_safe_accel(ctx: NeighborContext, v_ego: float, ego: VehicleParams,
                   cap: float = DEFAULT_SPEED_CAP) -> float:
    return safe_accel(ctx, v_ego, ego, cap).accel


def lane_change_feasible(direction: LaneChange, v_ego: float, ctx: NeighborContext,
                         ego: VehicleParams) -> bool:
    """Both vehicles keep their current speed for one step: the new leader must
    be safely ahead of ego and ego safely ahead of the new follower.

    A neighbour overlapping ego (gap <= 0) always blocks the move.
    """
    if direction == LaneChange.CUR:
        return True
    front_gap, back_gap = ctx.lane_gaps(direction)
    if front_gap == NO_LANE:
        return False
    if front_gap <= 0 or back_gap <= 0:
        return False
    leader, follower = ctx.lane_neighbors(direction)
    if leader is not None:
        need = (v_ego * ego.reaction_time + v_ego * v_ego / (2 * ego.max_decel)
                - leader.speed * leader.speed / (2 * leader.max_decel) + ego.min_gap)
        if front_gap < need:
            return False
    if follower is not None:
        fv = follower.speed
        need = (fv * follower.reaction_time + fv * fv / (2 * follower.max_decel)
                - v_ego * v_ego / (2 * ego.max_decel) + ego.min_gap)
        if back_gap < need:
            return False
    return True


def target_speeds(ctx: NeighborContext, v_ego: float, speed_limit: float,
                  ego: VehicleParams, cap: float = DEFAULT_SPEED_CAP) -> SpeedTriple:
    if not speed_limit > 0:
        raise ValueError("speed_limit must be positive")

    def one(direction):
        s = lane_safe_speed(ctx, direction, v_ego, ego, cap)
        return None if s is None else min(s.speed, speed_limit)

    return SpeedTriple(one(LaneChange.LEFT), one(LaneChange.CUR), one(LaneChange.RIGHT))


def safe_speed_array(gap, v_ego, v_leader, max_decel, reaction_time, min_gap,
                     leader_decel, cap: float = DEFAULT_SPEED_CAP):
    """Vectorised :func:`safe_speed` for many follower/leader pairs.

    All arguments broadcast. Returns ``(speed, unsafe)`` arrays. The defensive
    principle is the caller's responsibility here.
    """
    gap = np.asarray(gap, dtype=float)
    d = np.asarray(max_decel, dtype=float)
    r = np.asarray(reaction_time, dtype=float)
    half = r * d / 2
    open_road = np.isinf(gap)
    finite_gap = np.where(open_road, 0.0, gap)
    disc = half * half - 2 * d * (r * np.asarray(v_ego) / 2
                                  - np.asarray(v_leader) ** 2 / (2 * np.asarray(leader_decel))
                                  - finite_gap + np.asarray(min_gap))
    unsafe = (disc < half * half) & ~open_road
    speed = np.sqrt(np.maximum(disc, half * half)) - half
    speed = np.where(open_road, cap, np.where(unsafe, 0.0, speed))
    return speed, unsafe


def required_safe_gap_array(v_now, v_next, v_leader, max_decel, reaction_time, min_gap, leader_decel):
    """Vectorised :func:`required_safe_gap`; arguments broadcast."""
    v_now, v_next, v_leader = (np.asarray(a, dtype=float) for a in (v_now, v_next, v_leader))
    return ((v_now + v_next) * np.asarray(reaction_time) / 2
            + v_next * v_next / (2 * np.asarray(max_decel))
            - v_leader * v_leader / (2 * np.asarray(leader_decel))
            + np.asarray(min_gap))
