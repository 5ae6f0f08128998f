"""Rule-based policies and the policy plug-in point.

Both built-in controllers only ever emit admissible actions, so the safety
filter returns them unchanged. External policies may return either a
:class:`~safedrive.action.RawPolicyOutput` or an :class:`~safedrive.action.Action`;
the simulator filters both.

Route pressure is shared by the two controllers: when ego sits ``Δ`` lane
changes away from an on-route lane and is within ``Δ × mandatory_distance`` of
the section end, the move that reduces ``Δ`` takes priority. Discretionary
moves that increase ``Δ`` are never taken.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Union

from . import kernel
from .action import Action, RawPolicyOutput, accel_upper_bound
from .kernel import DEFAULT_SPEED_CAP, LaneChange, NeighborContext, VehicleParams
from .reward import RewardWeights, TransitionView, r_comfort, r_discretionary_lc, r_efficiency
from .route import RoutePosition

SIDES = (LaneChange.LEFT, LaneChange.RIGHT)  # scan order: ties go left


@dataclass(frozen=True)
class GreedyConfig:
    lane_change_threshold: float = 3.0
    comfort_weight: Optional[float] = None  # overrides RewardWeights.comf when set
    grid_size: int = 21
    mandatory_distance: float = 150.0  # per lane change still needed

    def __post_init__(self):
        if self.lane_change_threshold < 0:
            raise ValueError("lane_change_threshold must be >= 0")
        if self.grid_size < 3:
            raise ValueError("grid_size must be >= 3")
        if self.mandatory_distance < 0:
            raise ValueError("mandatory_distance must be >= 0")
        if self.comfort_weight is not None and self.comfort_weight < 0:
            raise ValueError("comfort_weight must be >= 0")


@dataclass(frozen=True)
class EgoView:
    """Structured view handed to a policy for one controlled vehicle."""

    vehicle_id: int
    ctx: NeighborContext
    speed: float
    prev_accel: float
    params: VehicleParams
    speed_limit: float
    route_pos: Optional[RoutePosition]
    observation: Optional[Callable[[], object]] = None  # lazily built feature vector


class PolicyInterface(Protocol):
    def __call__(self, view: EgoView) -> Union[Action, RawPolicyOutput]: ...


# -- route pressure ----------------------------------------------------------
def _deltas(ctx: NeighborContext, route_pos: Optional[RoutePosition]) -> dict:
    """Lane changes needed from each existing lane, keyed by direction."""
    if route_pos is None:
        return {}
    out = {LaneChange.CUR: route_pos.delta()}
    n = route_pos.lane_count()
    for side in SIDES:
        lane = route_pos.lane + int(side)
        if ctx.has_lane(side) and 0 <= lane < n:
            out[side] = route_pos.delta(lane)
    return out


def _in_window(delta: int, route_pos: RoutePosition, cfg: GreedyConfig) -> bool:
    return delta > 0 and route_pos.dist_to_end <= cfg.mandatory_distance * delta


def _route_blocks(side: LaneChange, deltas: dict, route_pos, cfg: GreedyConfig) -> bool:
    if side not in deltas:
        return False
    return deltas[side] > deltas[LaneChange.CUR]


# -- Gipps with greedy lane selection ----------------------------------------
def gipps_greedy(ctx: NeighborContext, v_ego: float, route_pos: Optional[RoutePosition],
                 cfg: GreedyConfig, ego: VehicleParams, speed_limit: float,
                 cap: float = DEFAULT_SPEED_CAP) -> Action:
    """Drive at the target speed; change lane when an adjacent lane is faster by
    more than the threshold."""
    choice = LaneChange.CUR
    deltas = _deltas(ctx, route_pos)
    cur_delta = deltas.get(LaneChange.CUR, 0)
    if route_pos is not None and _in_window(cur_delta, route_pos, cfg):
        for side in SIDES:
            if side in deltas and deltas[side] < cur_delta and kernel.lane_change_feasible(side, v_ego, ctx, ego):
                choice = side
                break
    else:
        targets = kernel.target_speeds(ctx, v_ego, speed_limit, ego, cap)
        best = cfg.lane_change_threshold
        for side in SIDES:
            t = targets.get(side)
            if t is None:
                continue
            gain = t - targets.cur
            if (gain > best and kernel.lane_change_feasible(side, v_ego, ctx, ego)
                    and not _route_blocks(side, deltas, route_pos, cfg)):
                best, choice = gain, side
    a_ub = accel_upper_bound(ctx, v_ego, ego, choice, cap)
    accel = max(-ego.max_decel, min(a_ub, (speed_limit - v_ego) / ego.reaction_time))
    return Action(accel, choice)


# -- comfort-weighted one-step greedy ----------------------------------------
def _better(cand: tuple, best: Optional[tuple]) -> bool:
    """Candidates are (score, |jerk|, target speed, is_cur, is_left)."""
    if best is None:
        return True
    for i, (c, b) in enumerate(zip(cand, best)):
        if c == b:
            continue
        return c < b if i == 1 else c > b
    return False


def comfort_greedy(ctx: NeighborContext, v_ego: float, prev_accel: float,
                   route_pos: Optional[RoutePosition], weights: RewardWeights, cfg: GreedyConfig,
                   ego: VehicleParams, speed_limit: float, cap: float = DEFAULT_SPEED_CAP) -> Action:
    """Best action on an acceleration grid under a one-step reward.

    Efficiency is scored on the speed reached after the action, comfort on the
    jerk the action causes, and the two lane-change terms on the lane ego ends
    up in. Ties prefer smaller jerk, then the faster lane, then staying, then
    left over right.
    """
    targets = kernel.target_speeds(ctx, v_ego, speed_limit, ego, cap)
    w_comf = weights.comf if cfg.comfort_weight is None else cfg.comfort_weight
    deltas = _deltas(ctx, route_pos)
    cur_delta = deltas.get(LaneChange.CUR, 0)

    lanes = [LaneChange.CUR] + [s for s in SIDES if kernel.lane_change_feasible(s, v_ego, ctx, ego)]
    if route_pos is not None and _in_window(cur_delta, route_pos, cfg):
        closer = [s for s in lanes if s != LaneChange.CUR and deltas[s] < cur_delta]
        lanes = closer[:1] if closer else [s for s in lanes if deltas.get(s, 0) <= cur_delta]
    else:
        lanes = [s for s in lanes if not _route_blocks(s, deltas, route_pos, cfg)]

    n = cfg.grid_size
    d, r = ego.max_decel, ego.reaction_time
    best_key, best_action = None, None
    for lane in lanes:
        a_ub = accel_upper_bound(ctx, v_ego, ego, lane, cap)
        base = TransitionView(v_ego, v_ego, prev_accel, prev_accel, targets, lane,
                              0, 0, 0.0, ego)
        r_lc = r_discretionary_lc(base, weights)
        r_mlc = 0.0
        if route_pos is not None:
            r_mlc = -deltas[lane] / (1.0 + route_pos.dist_to_end)
        for j in range(n):
            a = -d + (a_ub + d) * j / (n - 1)
            v_next = max(v_ego + a * r, 0.0)
            view = TransitionView(v_next, v_next, prev_accel, a, targets, lane, 0, 0, 0.0, ego)
            score = r_efficiency(view) + w_comf * r_comfort(view) + weights.lc * r_lc + weights.mlc * r_mlc
            key = (score, abs(a - prev_accel), targets.get(lane), lane == LaneChange.CUR,
                   lane == LaneChange.LEFT)
            if _better(key, best_key):
                best_key, best_action = key, Action(a, lane)
    return best_action


# -- adapters ------------------------------------------------------------------
def make_policy(name: str, cfg: Optional[GreedyConfig] = None,
                weights: Optional[RewardWeights] = None,
                cap: float = DEFAULT_SPEED_CAP) -> PolicyInterface:
    """Wrap a built-in controller behind :class:`PolicyInterface`."""
    cfg = cfg or GreedyConfig()
    weights = weights or RewardWeights()
    if name == "gipps_greedy":
        def policy(view: EgoView) -> Action:
            return gipps_greedy(view.ctx, view.speed, view.route_pos, cfg, view.params, view.speed_limit, cap)
    elif name == "comfort_greedy":
        def policy(view: EgoView) -> Action:
            return comfort_greedy(view.ctx, view.speed, view.prev_accel, view.route_pos, weights, cfg,
                                  view.params, view.speed_limit, cap)
    else:
        raise ValueError(f"unknown controller {name!r}; expected one of {CONTROLLERS}")
    policy.__name__ = name
    return policy


CONTROLLERS = ("gipps_greedy", "comfort_greedy")

