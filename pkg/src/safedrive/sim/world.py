"""Mutable simulation state and the per-step public operations."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from ..action import Action
from ..kernel import LaneChange, Neighbor, NeighborContext, VehicleParams
from ..route import RoutePosition
from . import engine as E
from .config import ScenarioConfig
from .network import END, EXIT, RoadNetwork

_TERMINAL = {EXIT: E.EXIT, END: E.END, "ring": E.RING}
_INTEGRATION = {"ballistic": E.BALLISTIC, "semi_implicit": E.SEMI_IMPLICIT, "explicit": E.EXPLICIT}


class CrashedError(RuntimeError):
    """The world already crashed and cannot be stepped further."""


@dataclass(frozen=True)
class VehicleState:
    id: int
    section: int
    lane: int
    position: float
    speed: float
    prev_accel: float
    params: VehicleParams
    speed_limit: float
    route: Optional[str]
    controlled: bool


@dataclass(frozen=True)
class ObservationConfig:
    scan_radius: float = 100.0
    n_front: int = 3
    n_back: int = 3

    def __post_init__(self):
        if not self.scan_radius > 0 or self.n_front < 0 or self.n_back < 0:
            raise ValueError("need scan_radius > 0 and non-negative slot counts")


def _net_arrays(net: RoadNetwork):
    T = len(net.tracks)
    trk_start = np.array([t.x_start for t in net.tracks])
    trk_end = np.array([t.x_end for t in net.tracks])
    trk_term = np.array([_TERMINAL[t.terminal] for t in net.tracks], dtype=np.int64)
    seg_ptr = np.zeros(T + 1, dtype=np.int64)
    seg_x0, seg_sec, seg_lane = [], [], []
    for k, t in enumerate(net.tracks):
        for sec, lane, x0, _ in t.segments:
            seg_x0.append(x0)
            seg_sec.append(sec)
            seg_lane.append(lane)
        seg_ptr[k + 1] = len(seg_x0)
    ns = len(net.sections)
    lane_trk = np.full((ns, net.max_lanes), -1, dtype=np.int64)
    for (sec, lane), t in net.track_of.items():
        lane_trk[sec, lane] = t
    return (trk_start, trk_end, trk_term, seg_ptr, np.array(seg_x0), np.array(seg_sec, dtype=np.int64),
            np.array(seg_lane, dtype=np.int64), np.asarray(net.offsets, dtype=float),
            np.array([s.length for s in net.sections]),
            np.array([s.lanes for s in net.sections], dtype=np.int64), lane_trk,
            float(net.circumference or 0.0), float(net.lane_width))


def _route_arrays(net: RoadNetwork, route_ids: list[str]):
    ns = len(net.sections)
    nr = max(len(route_ids), 1)
    delta = np.full((nr, ns, net.max_lanes), -1, dtype=np.int64)
    sidx = np.full((nr, ns), -1, dtype=np.int64)
    for r, rid in enumerate(route_ids):
        spec = net.routes[rid]
        for k, rs in enumerate(spec.sections):
            s = net.index[rs.name]
            sidx[r, s] = k
            for lane in range(len(rs.on_route)):
                delta[r, s, lane] = spec.lane_changes_needed(k, lane)
    return delta, sidx


class World:
    """Vehicles on a road network, advanced in fixed steps of ``dt``.

    Vehicles are stored in slots ordered by id. Controlled vehicles act on the
    actions passed to :func:`step_world`; all others follow
    :func:`uncontrolled_driver`.
    """

    def __init__(self, config: ScenarioConfig):
        self.config = config
        net = self.network = config.network
        self.dt = config.dt
        self.integration = _INTEGRATION[config.integration]
        self.route_ids = sorted(net.routes)
        self.cap = 100.0

        specs = sorted(config.vehicles, key=lambda v: v.id)
        n_inflow = len(config.inflow.speeds) if config.inflow else 0
        cap_n = len(specs) + n_inflow
        self.V = (
            np.zeros(cap_n, dtype=np.int64), np.zeros(cap_n, dtype=np.bool_), np.zeros(cap_n, dtype=np.int64),
            np.zeros(cap_n), np.zeros(cap_n), np.zeros(cap_n), np.zeros(cap_n), np.zeros(cap_n),
            np.zeros(cap_n), np.zeros(cap_n), np.zeros(cap_n), np.zeros(cap_n),
            np.zeros(cap_n, dtype=np.bool_), np.full(cap_n, -1, dtype=np.int64), np.zeros(cap_n),
            np.zeros(cap_n, dtype=np.bool_),
        )
        vid, active, track, x, v, a, amax, dmax, rt, eps, vlen, limit, ctrl, route, _, _ = self.V
        self._params: list[VehicleParams] = []
        for s, spec in enumerate(specs):
            t, xx = net.to_track(net.index[spec.section], spec.lane, spec.position)
            p = spec.params
            vid[s], active[s], track[s], x[s], v[s] = spec.id, True, t, xx, spec.speed
            amax[s], dmax[s], rt[s], eps[s], vlen[s] = p.max_accel, p.max_decel, p.reaction_time, p.min_gap, p.length
            limit[s], ctrl[s] = spec.limit, spec.controlled
            route[s] = self.route_ids.index(spec.route) if spec.route is not None else -1
            self._params.append(p)
        n0 = len(specs)
        next_vid = (max(vid[:n0]) + 1) if n0 else 0
        self.O = (np.arange(cap_n, dtype=np.int64), np.array([n0, n0, 0, next_vid], dtype=np.int64),
                  np.zeros(len(net.tracks), dtype=np.int64), np.zeros(len(net.tracks), dtype=np.int64))
        self.N = _net_arrays(net)
        self.NB = (np.full(cap_n, -1, dtype=np.int64), np.full(cap_n, math.inf), np.zeros(cap_n),
                   np.zeros(cap_n), np.full(cap_n, -1, dtype=np.int64), np.full(cap_n, math.inf))
        self.R = _route_arrays(net, self.route_ids)
        self.Z = self._zone_arrays(config)
        self.I = self._inflow_arrays(config)
        self.scratch = (np.zeros(cap_n, dtype=np.int64), np.zeros(cap_n, dtype=np.int64))
        self._ctx = np.zeros((3, E.CTX_COLS))
        self.ego_slot = self.slot(config.ego)
        self.status = E.OK
        E.resort(self.V, self.O)
        E.find_neighbors(self.V, self.O, self.N, self.NB)

    def _zone_arrays(self, config):
        net = self.network
        nz = len(config.zones)
        lanes = np.zeros((nz, net.max_lanes), dtype=np.bool_)
        for k, z in enumerate(config.zones):
            lanes[k, list(z.lanes)] = True
        zs = config.zones
        return (np.array([net.index[z.section] for z in zs], dtype=np.int64), lanes,
                np.array([z.start for z in zs], dtype=float), np.array([z.end for z in zs], dtype=float),
                np.array([z.t_start for z in zs], dtype=np.int64), np.array([z.t_end for z in zs], dtype=np.int64),
                np.array([z.decel for z in zs], dtype=float), np.array([z.floor_speed for z in zs], dtype=float))

    def _inflow_arrays(self, config):
        f = config.inflow
        if f is None:
            return (np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(8), np.array([0, 0, -1], dtype=np.int64))
        sec = self.network.index[f.section]
        tracks = np.array([self.network.lane_track(sec, ln) for ln in f.lanes], dtype=np.int64)
        p = f.params
        in_f = np.array([f.headway, p.max_accel, p.max_decel, p.reaction_time, p.min_gap, p.length, f.limit, 0.0])
        self._inflow_params = p
        return tracks, np.array(f.speeds, dtype=float), in_f, np.array([0, 0, -1], dtype=np.int64)

    # -- lookup -------------------------------------------------------------------
    @property
    def time_step(self) -> int:
        return int(self.O[1][2])

    @property
    def crashed(self) -> bool:
        return self.status == E.CRASH

    def slot(self, vid: int) -> int:
        n = int(self.O[1][0])
        k = int(np.searchsorted(self.V[0][:n], vid))
        if k >= n or self.V[0][k] != vid:
            raise KeyError(f"no vehicle with id {vid}")
        return k

    def active_ids(self) -> list[int]:
        n = int(self.O[1][0])
        return [int(i) for i in self.V[0][:n][self.V[1][:n]]]

    def controlled_ids(self) -> list[int]:
        n = int(self.O[1][0])
        mask = self.V[1][:n] & self.V[12][:n]
        return [int(i) for i in self.V[0][:n][mask]]

    def params_of(self, s: int) -> VehicleParams:
        if s < len(self._params):
            return self._params[s]
        return self._inflow_params

    def vehicle(self, vid: int) -> VehicleState:
        s = self.slot(vid)
        if not self.V[1][s]:
            raise KeyError(f"vehicle {vid} has left the network")
        sec, lane = E.locate(self.N, self.V[2][s], self.V[3][s])
        route = self.V[13][s]
        return VehicleState(
            id=vid, section=int(sec), lane=int(lane), position=float(self.V[3][s] - self.N[7][sec]),
            speed=float(self.V[4][s]), prev_accel=float(self.V[5][s]), params=self.params_of(s),
            speed_limit=float(self.V[11][s]), route=self.route_ids[route] if route >= 0 else None,
            controlled=bool(self.V[12][s]))

    def vehicles(self) -> list[VehicleState]:
        return [self.vehicle(i) for i in self.active_ids()]

    def route_position(self, vid: int) -> Optional[RoutePosition]:
        """Route progress of a vehicle, or None off-route or without a route."""
        st = self.vehicle(vid)
        if st.route is None:
            return None
        spec = self.network.routes[st.route]
        k = spec.index(self.network.sections[st.section].name)
        if k < 0:
            return None
        return RoutePosition(spec, k, st.lane, self.network.sections[st.section].length - st.position)

    def route_missed(self, vid: int) -> bool:
        return bool(self.V[15][self.slot(vid)])


# -- public operations ----------------------------------------------------------
def _neighbor(row, lead: bool) -> Optional[Neighbor]:
    if lead:
        if row[E.C_LEAD] == 0.0:
            return None
        return Neighbor(float(row[E.C_LEAD_V]), float(row[E.C_LEAD_D]), float(row[E.C_LEAD_R]))
    if row[E.C_FOL] == 0.0:
        return None
    return Neighbor(float(row[E.C_FOL_V]), float(row[E.C_FOL_D]), float(row[E.C_FOL_R]))


def context_from_array(ctx: np.ndarray) -> NeighborContext:
    rows = {LaneChange.RIGHT: ctx[0], LaneChange.CUR: ctx[1], LaneChange.LEFT: ctx[2]}
    kw = {}
    for side, prefix in ((LaneChange.CUR, ""), (LaneChange.LEFT, "left_"), (LaneChange.RIGHT, "right_")):
        row = rows[side]
        kw[f"{prefix}leader"] = _neighbor(row, True)
        kw[f"{prefix}follower"] = _neighbor(row, False)
        kw[f"{prefix}gap" if prefix else "gap"] = float(row[E.C_GAP])
        kw[f"{prefix}back_gap" if prefix else "back_gap"] = float(row[E.C_BGAP])
    return NeighborContext(**kw)


def build_context(world: World, ego_id: int, scan_radius: float = math.inf) -> NeighborContext:
    """Six-neighbour view of ``ego_id``; vehicles beyond ``scan_radius`` are not seen.

    A dropped lane's end appears as a stopped leader. On the adjacent lanes a
    vehicle overlapping ego reports a gap of 0.
    """
    s = world.slot(ego_id)
    if not world.V[1][s]:
        raise KeyError(f"vehicle {ego_id} has left the network")
    E.build_ctx(s, world.V, world.O, world.N, world.NB, float(scan_radius), world._ctx)
    return context_from_array(world._ctx)


def _lane_neighbours(world: World, t: int, x_ego: float, skip: int, radius: float,
                     n_front: int, n_back: int):
    """Vehicles on track ``t`` within ``radius`` of ``x_ego``: (ahead, behind), nearest first."""
    order, _, bs, be = world.O
    x = world.V[3]
    members = [i for i in order[bs[t]:be[t]] if i != skip]
    circ = world.N[11]
    ahead, behind = [], []
    for i in members:
        dx = x[i] - x_ego
        if circ > 0:
            dx = (dx + circ / 2) % circ - circ / 2
        if 0 < dx <= radius:
            ahead.append((dx, i))
        elif -radius <= dx <= 0:
            behind.append((dx, i))
    ahead.sort()
    behind.sort(reverse=True)
    return ahead[:n_front], behind[:n_back]


def build_observation(world: World, ego_id: int, config: ObservationConfig = ObservationConfig()) -> np.ndarray:
    """Fixed-length feature vector for ``ego_id``.

    Layout: ego block ``[position in section, speed, previous accel, route
    section index, lane, lateral speed, on-route flag per lane]`` (the flags
    padded to the network's widest section), then for each lane slot from
    rightmost to leftmost, ``n_front`` leaders and ``n_back`` followers as
    ``[present, relative distance, speed, accel]``. Distances are head to head.
    """
    net = world.network
    st = world.vehicle(ego_id)
    s = world.slot(ego_id)
    L = net.max_lanes
    rp = world.route_position(ego_id)
    flags = np.zeros(L)
    if rp is not None:
        on = rp.route.sections[rp.section].on_route
        flags[:len(on)] = on
    ego_block = [st.position, st.speed, st.prev_accel, rp.section if rp is not None else -1, st.lane,
                 world.V[14][s]]
    per_lane = (config.n_front + config.n_back) * 4
    lanes = np.zeros(L * per_lane)
    x_ego = world.V[3][s]
    for ln in range(net.sections[st.section].lanes):
        t = net.lane_track(st.section, ln)
        ahead, behind = _lane_neighbours(world, t, x_ego, s, config.scan_radius, config.n_front, config.n_back)
        base = ln * per_lane
        for k, (dx, i) in enumerate(ahead):
            lanes[base + 4 * k: base + 4 * k + 4] = 1.0, dx, world.V[4][i], world.V[5][i]
        base += config.n_front * 4
        for k, (dx, i) in enumerate(behind):
            lanes[base + 4 * k: base + 4 * k + 4] = 1.0, dx, world.V[4][i], world.V[5][i]
    return np.concatenate([np.array(ego_block, dtype=float), flags, lanes])


def observation_size(network: RoadNetwork, config: ObservationConfig = ObservationConfig()) -> int:
    return 6 + network.max_lanes * (1 + 4 * (config.n_front + config.n_back))


def uncontrolled_driver(world: World, vehicle_id: int) -> Action:
    """Acceleration an uncontrolled vehicle applies this step (never changes lane)."""
    s = world.slot(vehicle_id)
    if world.V[12][s]:
        raise ValueError(f"vehicle {vehicle_id} is controlled")
    a = E.uncontrolled_accel(s, world.V, world.N, world.NB, world.Z, world.time_step, world.dt, world.cap)
    return Action(float(a), LaneChange.CUR)


def step_world(world: World, actions: Mapping[int, Action]) -> World:
    """Advance ``world`` in place by one step and return it.

    ``actions`` must hold exactly one action per active controlled vehicle.
    Lane changes happen first and instantly; if several vehicles change lane
    in one step, each after the first is re-checked against the lanes as
    already changed and dropped if no longer feasible.
    """
    if world.status == E.CRASH:
        raise CrashedError("the world has crashed")
    if world.status == E.EGO_EXIT:
        raise CrashedError("the ego vehicle has left the network")
    controlled = set(world.controlled_ids())
    if set(actions) != controlled:
        missing = sorted(controlled - set(actions))
        extra = sorted(set(actions) - controlled)
        raise ValueError(f"action map mismatch: missing {missing}, unexpected {extra}")
    n = world.V[0].shape[0]
    acc = np.zeros(n)
    lc = np.zeros(n, dtype=np.int64)
    for vid, act in actions.items():
        s = world.slot(vid)
        d, amax = world.V[7][s], world.V[6][s]
        if not (math.isfinite(act.accel) and -d - 1e-12 <= act.accel <= amax + 1e-12):
            raise ValueError(f"vehicle {vid}: accel {act.accel} outside [-{d}, {amax}]")
        acc[s] = act.accel
        lc[s] = int(LaneChange(act.lane_change))
        if lc[s]:
            st = world.vehicle(vid)
            if not 0 <= st.lane + lc[s] < world.network.sections[st.section].lanes:
                raise ValueError(f"vehicle {vid}: no lane {LaneChange(lc[s]).name} of lane {st.lane}")
    status = E.step_core(world.V, world.O, world.N, world.NB, world.R, world.Z, world.I, acc, lc,
                         world.dt, world.integration, world.time_step, world.cap, world.ego_slot,
                         world.scratch, world._ctx)
    if status == E.BAD_ACTION:
        raise ValueError("lane change into a lane that does not exist")
    world.O[1][2] += 1
    world.status = status
    return world
