"""Scenario configuration and its TOML file format.

A config file is a fully realised scenario: every vehicle is listed
explicitly, so a file replays bit-for-bit without re-running the generator.
The ``[params]`` table only records how the scenario was generated.

Layout::

    kind = "loop_normal"          # informational
    seed = 7
    horizon = 5000                # steps
    dt = 0.1                      # s; must equal every vehicle's reaction_time
    integration = "ballistic"     # or "semi_implicit", "explicit"
    ego = 0                       # vehicle id the metrics follow

    [params]                      # generator arguments (provenance only)

    [network]
    topology = "ring"             # or "open"
    lane_width = 3.2
    [[network.sections]]
    name = "s0"
    length = 250.0
    lanes = 3
    successors = ["s1:0", ...]    # open networks only; "exit" or "end" terminate
    [network.routes.loop]
    s0 = [true, true, true]       # on-route flag per lane, lane 0 rightmost

    [[vehicles]]
    id = 0
    section = "s0"
    lane = 1
    position = 12.5               # front bumper, m from section start
    speed = 20.0
    limit = 34.0
    controlled = true
    route = "loop"                # optional
    max_accel = 2.5               # optional, VehicleParams defaults apply
    max_decel = 3.0
    reaction_time = 0.1
    min_gap = 2.0
    length = 5.0

    [[zones]]                     # scripted emergency braking of uncontrolled vehicles
    section = "s1"
    lanes = [1]
    start = 0.0                   # m within the section
    end = 250.0
    t_start = 500                 # steps, half-open window
    t_end = 5000
    decel = 3.0
    floor_speed = 3.0

    [inflow]                      # optional injector at the entry of ``section``
    section = "upstream"
    lanes = [0, 1, 2, 1]          # lane pattern, cycled
    headway = 5.0                 # m the last injected vehicle must clear
    speeds = [...]                # pre-drawn desired departure speeds
    limit = 15.0
    # plus optional vehicle parameter keys as for [[vehicles]]
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

from ..kernel import VehicleParams, check_defensive
from .network import RoadNetwork

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

INTEGRATIONS = ("ballistic", "semi_implicit", "explicit")
PARAM_KEYS = ("max_accel", "max_decel", "reaction_time", "min_gap", "length")


class ConfigError(ValueError):
    """A scenario config is malformed; the message names the offending field."""


@dataclass(frozen=True)
class VehicleSpec:
    id: int
    section: str
    lane: int
    position: float
    speed: float
    limit: float
    params: VehicleParams = field(default_factory=VehicleParams)
    controlled: bool = False
    route: Optional[str] = None


@dataclass(frozen=True)
class BrakingZone:
    section: str
    lanes: tuple[int, ...]
    start: float
    end: float
    t_start: int
    t_end: int
    decel: float
    floor_speed: float


@dataclass(frozen=True)
class Inflow:
    section: str
    lanes: tuple[int, ...]
    headway: float
    speeds: tuple[float, ...]
    limit: float
    params: VehicleParams = field(default_factory=VehicleParams)


@dataclass(frozen=True)
class ScenarioConfig:
    network: RoadNetwork
    vehicles: tuple[VehicleSpec, ...]
    horizon: int
    dt: float
    ego: int
    seed: int = 0
    kind: str = "custom"
    integration: str = "ballistic"
    zones: tuple[BrakingZone, ...] = ()
    inflow: Optional[Inflow] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        validate(self)

    def vehicle(self, vid: int) -> VehicleSpec:
        for v in self.vehicles:
            if v.id == vid:
                return v
        raise KeyError(vid)


def _fail(where: str, msg: str):
    raise ConfigError(f"{where}: {msg}")


def validate(cfg: ScenarioConfig) -> None:
    net = cfg.network
    if not cfg.dt > 0:
        _fail("dt", "must be > 0")
    if not (isinstance(cfg.horizon, int) and cfg.horizon > 0):
        _fail("horizon", "must be a positive integer")
    if cfg.integration not in INTEGRATIONS:
        _fail("integration", f"must be one of {INTEGRATIONS}")
    ids = [v.id for v in cfg.vehicles]
    if len(set(ids)) != len(ids):
        _fail("vehicles", "ids must be unique")
    if cfg.ego not in ids:
        _fail("ego", f"no vehicle with id {cfg.ego}")
    placed = []
    for k, v in enumerate(cfg.vehicles):
        where = f"vehicles[{k}]"
        if v.section not in net.index:
            _fail(f"{where}.section", f"unknown section {v.section!r}")
        sec = net.sections[net.index[v.section]]
        if not 0 <= v.lane < sec.lanes:
            _fail(f"{where}.lane", f"lane {v.lane} not in section {v.section!r}")
        if not 0 <= v.position < sec.length:
            _fail(f"{where}.position", f"must lie in [0, {sec.length})")
        if not (v.speed >= 0 and math.isfinite(v.speed)):
            _fail(f"{where}.speed", "must be finite and >= 0")
        if not (v.limit > 0 or (v.limit == 0 and not v.controlled)):
            _fail(f"{where}.limit", "must be > 0 (0 is allowed for a parked uncontrolled vehicle)")
        if not math.isclose(v.params.reaction_time, cfg.dt, rel_tol=0, abs_tol=1e-12):
            _fail(f"{where}.reaction_time", f"must equal dt = {cfg.dt}")
        if v.route is not None and v.route not in net.routes:
            _fail(f"{where}.route", f"unknown route {v.route!r}")
        track, x = net.to_track(net.index[v.section], v.lane, v.position)
        placed.append((track, x, v))
    placed.sort(key=lambda t: (t[0], t[1]))
    for (t0, x0, a), (t1, x1, b) in zip(placed, placed[1:]):
        if t0 == t1 and x1 - b.params.length - x0 <= 0:
            _fail("vehicles", f"vehicles {a.id} and {b.id} overlap")
        if t0 == t1:
            _check_pair(leader=b, follower=a)
    if net.ring:
        by_track: dict = {}
        for t, x, v in placed:
            by_track.setdefault(t, []).append((x, v))
        for items in by_track.values():
            if len(items) >= 2:
                (x_first, first), (x_last, last) = items[0], items[-1]
                if x_first + net.circumference - first.params.length - x_last <= 0:
                    _fail("vehicles", f"vehicles {last.id} and {first.id} overlap")
                _check_pair(leader=first, follower=last)
    multi = net.max_lanes > 1
    decels = {v.params.max_decel for v in cfg.vehicles}
    if cfg.inflow is not None:
        decels.add(cfg.inflow.params.max_decel)
    if multi and len(decels) > 1:
        _fail("vehicles", "on multi-lane roads every vehicle needs the same max_decel")
    for k, z in enumerate(cfg.zones):
        where = f"zones[{k}]"
        if z.section not in net.index:
            _fail(f"{where}.section", f"unknown section {z.section!r}")
        lanes = net.sections[net.index[z.section]].lanes
        if any(not 0 <= ln < lanes for ln in z.lanes):
            _fail(f"{where}.lanes", "lane out of range")
        if not (z.decel > 0 and z.floor_speed >= 0 and z.end > z.start and z.t_end > z.t_start):
            _fail(where, "need decel > 0, floor_speed >= 0, end > start, t_end > t_start")
        if any(z.decel > d for d in decels):
            _fail(f"{where}.decel", "exceeds a vehicle's max_decel")
    if cfg.inflow is not None:
        f = cfg.inflow
        if f.section not in net.index:
            _fail("inflow.section", f"unknown section {f.section!r}")
        sec = net.index[f.section]
        for ln in f.lanes:
            track = net.lane_track(sec, ln) if 0 <= ln < net.sections[sec].lanes else None
            if track is None or net.tracks[track].segments[0][0] != sec:
                _fail("inflow.lanes", f"lane {ln} of {f.section!r} is not an entry lane")
        if not f.lanes or not f.headway > 0 or not f.limit > 0:
            _fail("inflow", "need lanes, headway > 0 and limit > 0")
        if any(not s >= 0 for s in f.speeds):
            _fail("inflow.speeds", "must be >= 0")
        if not math.isclose(f.params.reaction_time, cfg.dt, rel_tol=0, abs_tol=1e-12):
            _fail("inflow.reaction_time", f"must equal dt = {cfg.dt}")


def _check_pair(leader: VehicleSpec, follower: VehicleSpec) -> None:
    try:
        check_defensive(follower.params.max_decel, leader.params.max_decel)
    except ValueError as exc:
        raise ConfigError(f"vehicles {follower.id} behind {leader.id}: {exc}") from None


# -- (de)serialisation --------------------------------------------------------------
def _params_dict(p: VehicleParams) -> dict:
    return asdict(p)


def to_dict(cfg: ScenarioConfig) -> dict:
    out: dict[str, Any] = {
        "kind": cfg.kind, "seed": cfg.seed, "horizon": cfg.horizon, "dt": cfg.dt,
        "integration": cfg.integration, "ego": cfg.ego, "params": dict(cfg.params),
        "network": cfg.network.to_dict(),
        "vehicles": [],
    }
    for v in cfg.vehicles:
        row = {"id": v.id, "section": v.section, "lane": v.lane, "position": v.position,
               "speed": v.speed, "limit": v.limit, "controlled": v.controlled}
        if v.route is not None:
            row["route"] = v.route
        row.update(_params_dict(v.params))
        out["vehicles"].append(row)
    if cfg.zones:
        out["zones"] = [{**asdict(z), "lanes": list(z.lanes)} for z in cfg.zones]
    if cfg.inflow is not None:
        f = cfg.inflow
        out["inflow"] = {"section": f.section, "lanes": list(f.lanes), "headway": f.headway,
                         "speeds": list(f.speeds), "limit": f.limit, **_params_dict(f.params)}
    return out


class _Reader:
    def __init__(self, table: dict, where: str):
        self.table, self.where = table, where
        self.used: set[str] = set()

    def get(self, key, kind, default=...):
        self.used.add(key)
        if key not in self.table:
            if default is ...:
                _fail(f"{self.where}.{key}" if self.where else key, "missing")
            return default
        val = self.table[key]
        try:
            if kind is float:
                if isinstance(val, bool) or not isinstance(val, (int, float)):
                    raise TypeError
                return float(val)
            if kind is int:
                if isinstance(val, bool) or not isinstance(val, int):
                    raise TypeError
                return val
            if kind is bool and not isinstance(val, bool):
                raise TypeError
            if kind is str and not isinstance(val, str):
                raise TypeError
            if kind in (list, dict) and not isinstance(val, kind):
                raise TypeError
        except TypeError:
            _fail(f"{self.where}.{key}" if self.where else key, f"expected {kind.__name__}, got {val!r}")
        return val

    def params(self) -> VehicleParams:
        base = VehicleParams()
        vals = {k: self.get(k, float, getattr(base, k)) for k in PARAM_KEYS}
        try:
            return VehicleParams(**vals)
        except ValueError as exc:
            _fail(self.where, str(exc))

    def done(self):
        extra = set(self.table) - self.used
        if extra:
            key = sorted(extra)[0]
            _fail(f"{self.where}.{key}" if self.where else key, "unknown key")


def from_dict(d: dict) -> ScenarioConfig:
    top = _Reader(d, "")
    net_table = top.get("network", dict)
    try:
        network = RoadNetwork.from_dict(net_table)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"network: {exc}") from None
    vehicles = []
    for k, row in enumerate(top.get("vehicles", list)):
        if not isinstance(row, dict):
            _fail(f"vehicles[{k}]", "expected a table")
        r = _Reader(row, f"vehicles[{k}]")
        vehicles.append(VehicleSpec(
            id=r.get("id", int), section=r.get("section", str), lane=r.get("lane", int),
            position=r.get("position", float), speed=r.get("speed", float), limit=r.get("limit", float),
            params=r.params(), controlled=r.get("controlled", bool, False), route=r.get("route", str, None)))
        r.done()
    zones = []
    for k, row in enumerate(top.get("zones", list, [])):
        r = _Reader(row, f"zones[{k}]")
        zones.append(BrakingZone(
            section=r.get("section", str), lanes=tuple(r.get("lanes", list)), start=r.get("start", float),
            end=r.get("end", float), t_start=r.get("t_start", int), t_end=r.get("t_end", int),
            decel=r.get("decel", float), floor_speed=r.get("floor_speed", float)))
        r.done()
    inflow = None
    if "inflow" in d:
        r = _Reader(top.get("inflow", dict), "inflow")
        inflow = Inflow(section=r.get("section", str), lanes=tuple(r.get("lanes", list)),
                        headway=r.get("headway", float), speeds=tuple(float(s) for s in r.get("speeds", list)),
                        limit=r.get("limit", float), params=r.params())
        r.done()
    cfg = ScenarioConfig(
        network=network, vehicles=tuple(vehicles), horizon=top.get("horizon", int), dt=top.get("dt", float),
        ego=top.get("ego", int), seed=top.get("seed", int, 0), kind=top.get("kind", str, "custom"),
        integration=top.get("integration", str, "ballistic"), zones=tuple(zones), inflow=inflow,
        params=top.get("params", dict, {}))
    top.done()
    return cfg


def dumps(cfg: ScenarioConfig) -> str:
    import tomli_w
    return tomli_w.dumps(to_dict(cfg))


def loads(text: str) -> ScenarioConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    return from_dict(data)


def save(cfg: ScenarioConfig, path) -> None:
    with open(path, "w") as f:
        f.write(dumps(cfg))


def load(path) -> ScenarioConfig:
    with open(path) as f:
        text = f.read()
    try:
        return loads(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
