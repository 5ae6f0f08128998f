"""Scenario generators.

Every generator is a pure function of ``(params, seed)``. Initial placements
are safe: each vehicle could keep its speed for one step and still stop
behind its leader, which is assumed to brake at once.
"""
from __future__ import annotations

import math
from dataclasses import replace
from typing import Any, Callable, Optional

import numpy as np

from ..kernel import VehicleParams
from .config import BrakingZone, Inflow, ScenarioConfig, VehicleSpec
from .network import RoadNetwork, freeway, ring_road, straight_road

DT = 0.1
KINDS = ("loop_normal", "loop_congested", "loop_emergency", "freeway_bypass",
         "freeway_emergency", "freeway_merge", "platoon")


def _keep_speed_cap(gap: float, v_leader: float, p: VehicleParams, leader_decel: float) -> float:
    """Largest speed that can be held for one step with ``gap`` to the leader."""
    rd = p.reaction_time * p.max_decel
    room = gap - p.min_gap + v_leader * v_leader / (2 * leader_decel)
    if room <= 0:
        return 0.0
    return -rd + math.sqrt(rd * rd + 2 * p.max_decel * room)


def _place(network: RoadNetwork, track: int, x: float) -> tuple[str, int, float]:
    sec, lane, pos = network.locate(track, x)
    return network.sections[sec].name, lane, pos


def _assign_speeds(network: RoadNetwork, rows: list[dict]) -> None:
    """Cap each row's desired speed so its placement is safe. Rows carry
    ``track``, ``x``, ``speed`` (desired) and ``params``."""
    by_track: dict[int, list[dict]] = {}
    for r in rows:
        by_track.setdefault(r["track"], []).append(r)
    for members in by_track.values():
        members.sort(key=lambda r: -r["x"])  # front to back
        for k, r in enumerate(members):
            if k > 0:
                lead, gap = members[k - 1], members[k - 1]["x"] - r["x"]
            elif network.ring and len(members) > 1:
                lead = members[-1]  # one lap ahead
                gap = lead["x"] + network.circumference - r["x"]
            else:
                continue
            # on a ring every leader is assumed stopped, which breaks the circular dependency
            v_lead = 0.0 if network.ring else lead["speed"]
            cap = _keep_speed_cap(gap - lead["params"].length, v_lead, r["params"], lead["params"].max_decel)
            r["speed"] = min(r["speed"], cap)


def _specs(network: RoadNetwork, rows: list[dict]) -> tuple[VehicleSpec, ...]:
    out = []
    for r in sorted(rows, key=lambda r: r["id"]):
        section, lane, pos = _place(network, r["track"], r["x"])
        out.append(VehicleSpec(int(r["id"]), section, int(lane), float(pos), float(r["speed"]), float(r["limit"]),
                               r["params"], bool(r.get("controlled", False)), r.get("route")))
    return tuple(out)


def _merge_params(kind: str, defaults: dict, params: Optional[dict]) -> dict:
    out = dict(defaults)
    for k, v in (params or {}).items():
        if k not in defaults:
            raise ValueError(f"{kind}: unknown parameter {k!r}; known: {sorted(defaults)}")
        out[k] = v
    return out


# -- ring road -----------------------------------------------------------------------
_LOOP = dict(n_humans=25, human_limit=17.0, ego_limit=34.0, circumference=1000.0, lanes=3,
             horizon=5000, integration="ballistic", min_gap=2.0)
_EMERGENCY = dict(zone_section="s1", zone_lanes=[1], zone_start=0.0, zone_end=250.0, zone_t_start=500,
                  zone_t_end=5000, zone_decel=3.0, zone_floor=3.0)


def _loop(kind: str, p: dict, rng: np.random.Generator) -> ScenarioConfig:
    net = ring_road(float(p["circumference"]), int(p["lanes"]))
    C = net.circumference
    n = int(p["n_humans"]) + 1
    params = VehicleParams(min_gap=float(p["min_gap"]), reaction_time=DT)
    lanes = rng.integers(0, int(p["lanes"]), n)
    ego_index = int(rng.integers(0, n))
    desired = rng.uniform(0.5, 1.0, n)
    rows = []
    for lane in range(int(p["lanes"])):
        idx = np.flatnonzero(lanes == lane)
        if idx.size == 0:
            continue
        spacing = C / idx.size
        jitter = 0.2 if spacing * 0.6 - params.length > params.min_gap else 0.0
        offset = rng.uniform(0, C)
        shifts = rng.uniform(-jitter, jitter, idx.size) * spacing
        track = net.lane_track(0, lane)
        for j, k in enumerate(idx):
            x = float((offset + j * spacing + shifts[j]) % C)
            ego = k == ego_index
            limit = float(p["ego_limit"] if ego else p["human_limit"])
            rows.append(dict(k=int(k), track=track, x=x, speed=desired[k] * limit,
                             limit=limit, params=params, controlled=ego, route="loop" if ego else None))
    # ego gets id 0, the others 1..n-1 in draw order
    rows.sort(key=lambda r: r["k"])
    nid = 1
    for r in rows:
        if r["controlled"]:
            r["id"] = 0
        else:
            r["id"] = nid
            nid += 1
    _assign_speeds(net, rows)
    zones = ()
    if kind == "loop_emergency":
        zones = (BrakingZone(str(p["zone_section"]), tuple(int(z) for z in p["zone_lanes"]),
                             float(p["zone_start"]), float(p["zone_end"]), int(p["zone_t_start"]),
                             int(p["zone_t_end"]), float(p["zone_decel"]), float(p["zone_floor"])),)
    return ScenarioConfig(net, _specs(net, rows), int(p["horizon"]), DT, 0, kind=kind,
                          integration=str(p["integration"]), zones=zones, params=p)


# -- freeway -------------------------------------------------------------------------
_FREEWAY = dict(human_limit=15.0, ego_limit=25.0, section_length=500.0, horizon=6000,
                integration="ballistic", route="random", p_offramp=0.5, min_gap=2.0)


def _route(p: dict, rng: np.random.Generator) -> str:
    draw = rng.uniform()  # always drawn so the stream does not depend on the choice
    if p["route"] == "random":
        return "offramp" if draw < float(p["p_offramp"]) else "mainline"
    if p["route"] not in ("offramp", "mainline"):
        raise ValueError(f"route must be 'offramp', 'mainline' or 'random', got {p['route']!r}")
    return p["route"]


def _ego_row(net, p, rng, section: str, lane: Optional[int], position: float, route: str, params) -> dict:
    sec = net.index[section]
    if lane is None:
        lane = int(rng.integers(0, 3))
    else:
        rng.integers(0, 3)
    track, x = net.to_track(sec, lane, position)
    speed = float(rng.uniform(0.5, 1.0)) * float(p["ego_limit"])
    return dict(id=0, track=track, x=x, speed=speed, limit=float(p["ego_limit"]), params=params,
                controlled=True, route=route)


def _bypass(kind: str, p: dict, rng: np.random.Generator) -> ScenarioConfig:
    net = freeway(float(p["section_length"]), onramp=False, offramp=True)
    params = VehicleParams(min_gap=float(p["min_gap"]), reaction_time=DT)
    route = _route(p, rng)
    H = float(p["headway"])
    pattern = [int(k) for k in p["pattern"]]
    rows = []
    for i in range(int(p["n_fleet"])):
        track, x = net.to_track(net.index["upstream"], pattern[i % len(pattern)], float(p["fleet_tail"]) + i * H)
        rows.append(dict(id=i + 1, track=track, x=x, speed=float(p["human_limit"]), limit=float(p["human_limit"]),
                         params=params))
    ego_lane = None if p["ego_lane"] == "random" else int(p["ego_lane"])
    rows.append(_ego_row(net, p, rng, "upstream", ego_lane, float(p["ego_position"]), route, params))
    _assign_speeds(net, rows)
    return ScenarioConfig(net, _specs(net, rows), int(p["horizon"]), DT, 0, kind=kind,
                          integration=str(p["integration"]), params=p)


def _emergency(kind: str, p: dict, rng: np.random.Generator) -> ScenarioConfig:
    net = freeway(float(p["section_length"]), onramp=False, offramp=True)
    params = VehicleParams(min_gap=float(p["min_gap"]), reaction_time=DT)
    route = _route(p, rng)
    rows = []
    nid = 1
    for row in range(int(p["rows"])):
        for lane in range(3):
            track, x = net.to_track(net.index["upstream"], lane, float(p["wall_tail"]) + row * float(p["row_gap"]))
            rows.append(dict(id=nid, track=track, x=x, speed=float(p["human_limit"]),
                             limit=float(p["human_limit"]), params=params))
            nid += 1
    ego_lane = None if p["ego_lane"] == "random" else int(p["ego_lane"])
    rows.append(_ego_row(net, p, rng, "upstream", ego_lane, float(p["ego_position"]), route, params))
    _assign_speeds(net, rows)
    zone = BrakingZone(str(p["zone_section"]), tuple(int(z) for z in p["zone_lanes"]), float(p["zone_start"]),
                       float(p["zone_end"]), int(p["zone_t_start"]), int(p["zone_t_end"]),
                       float(p["zone_decel"]), float(p["zone_floor"]))
    return ScenarioConfig(net, _specs(net, rows), int(p["horizon"]), DT, 0, kind=kind,
                          integration=str(p["integration"]), zones=(zone,), params=p)


def _merge(kind: str, p: dict, rng: np.random.Generator) -> ScenarioConfig:
    net = freeway(float(p["section_length"]), onramp=True, offramp=True)
    params = VehicleParams(min_gap=float(p["min_gap"]), reaction_time=DT)
    route = _route(p, rng)
    H = float(p["headway"])
    pattern = [int(k) for k in p["pattern"]]
    limit = float(p["human_limit"])
    rows = [_ego_row(net, p, rng, "merge", 0, float(p["ego_position"]), route, params)]
    up = net.index["upstream"]
    k_max = int(float(p["prefill_length"]) // H)
    for k in range(1, k_max + 1):
        track = net.lane_track(up, pattern[(-k) % len(pattern)])
        rows.append(dict(id=k, track=track, x=k * H, speed=limit, limit=limit, params=params))
    _assign_speeds(net, rows)
    n_inject = int(math.ceil(int(p["horizon"]) * DT * limit / H)) + 1
    speeds = tuple(float(s) for s in rng.uniform(0.5, 1.0, n_inject) * limit)
    inflow = Inflow("upstream", tuple(pattern), H, speeds, limit, params)
    return ScenarioConfig(net, _specs(net, rows), int(p["horizon"]), DT, 0, kind=kind,
                          integration=str(p["integration"]), inflow=inflow, params=p)


# -- platoon -------------------------------------------------------------------------
_PLATOON = dict(w=25.0, k=3, eps=4.0, decels=[], gap0=20.0, v0=-1.0, follower_limit=-1.0,
                horizon=3000, integration="ballistic")


def _platoon(kind: str, p: dict, rng: np.random.Generator) -> ScenarioConfig:
    w, k = float(p["w"]), int(p["k"])
    if w < 0 or k < 1:
        raise ValueError("platoon needs w >= 0 and k >= 1")
    decels = [float(d) for d in p["decels"]] or [3.0] * (k + 1)
    if len(decels) != k + 1:
        raise ValueError(f"decels needs k + 1 = {k + 1} values (leader first)")
    v0 = w if float(p["v0"]) < 0 else float(p["v0"])
    f_limit = w + 10.0 if float(p["follower_limit"]) < 0 else float(p["follower_limit"])
    gap0 = float(p["gap0"])
    horizon = int(p["horizon"])
    spacing = gap0 + 5.0
    x_lead = k * spacing + 10.0
    net = straight_road(x_lead + w * horizon * DT + 200.0, lanes=1)
    rows = [dict(id=0, track=0, x=x_lead, speed=w, limit=w,
                 params=VehicleParams(max_decel=decels[0], reaction_time=DT, min_gap=float(p["eps"])))]
    for i in range(1, k + 1):
        rows.append(dict(id=i, track=0, x=x_lead - i * spacing, speed=v0, limit=f_limit,
                         params=VehicleParams(max_decel=decels[i], reaction_time=DT, min_gap=float(p["eps"])),
                         controlled=True, route="through"))
    return ScenarioConfig(net, _specs(net, rows), horizon, DT, 1, kind=kind,
                          integration=str(p["integration"]), params=p)


_GENERATORS: dict[str, tuple[dict, Callable]] = {
    "loop_normal": (_LOOP, _loop),
    "loop_congested": ({**_LOOP, "n_humans": 50}, _loop),
    "loop_emergency": ({**_LOOP, **_EMERGENCY}, _loop),
    "freeway_bypass": ({**_FREEWAY, "headway": 20.0, "n_fleet": 12, "pattern": [0, 1, 2, 1],
                        "fleet_tail": 100.0, "ego_lane": "random", "ego_position": 0.0}, _bypass),
    "freeway_emergency": ({**_FREEWAY, "route": "mainline", "rows": 3, "row_gap": 30.0, "wall_tail": 100.0,
                           "ego_lane": "random", "ego_position": 0.0, "zone_section": "upstream",
                           "zone_lanes": [0, 1, 2], "zone_start": 250.0, "zone_end": 500.0,
                           "zone_t_start": 0, "zone_t_end": 6000, "zone_decel": 3.0, "zone_floor": 3.0},
                          _emergency),
    "freeway_merge": ({**_FREEWAY, "route": "mainline", "headway": 5.0, "pattern": [0, 1, 2, 1],
                       "prefill_length": 1000.0, "ego_position": 0.0}, _merge),
    "platoon": (_PLATOON, _platoon),
}


def default_params(kind: str) -> dict[str, Any]:
    if kind not in _GENERATORS:
        raise ValueError(f"unknown scenario kind {kind!r}; expected one of {KINDS}")
    return dict(_GENERATORS[kind][0])


def make_scenario(kind: str, params: Optional[dict] = None, seed: int = 0) -> ScenarioConfig:
    """Deterministic scenario of the given kind for ``seed``."""
    if kind not in _GENERATORS:
        raise ValueError(f"unknown scenario kind {kind!r}; expected one of {KINDS}")
    defaults, gen = _GENERATORS[kind]
    p = _merge_params(kind, defaults, params)
    cfg = gen(kind, p, np.random.default_rng(seed))
    return replace(cfg, seed=int(seed))
