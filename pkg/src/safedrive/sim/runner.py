"""Episode runner, metrics and output files."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from ..action import filter_action
from ..controllers import CONTROLLERS, EgoView, GreedyConfig, PolicyInterface, make_policy
from ..reward import RewardWeights
from . import engine as E
from .config import ScenarioConfig
from .world import ObservationConfig, World, build_context, build_observation, step_world

TRACE_FIELDS = ("step", "id", "section", "lane", "position", "speed", "accel", "jerk")


@dataclass
class Trace:
    """Per-(step, vehicle) rows after each step. ``jerk`` is NaN on a vehicle's first row.

    ``section`` holds section indices; the CSV writes their names.
    """

    columns: dict[str, np.ndarray]
    section_names: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.columns["step"])

    def for_vehicle(self, vid: int) -> dict[str, np.ndarray]:
        mask = self.columns["id"] == vid
        return {k: v[mask] for k, v in self.columns.items()}

    def write_csv(self, target) -> None:
        """Write to a path or an open text file."""
        if hasattr(target, "write"):
            self._write(target)
        else:
            with open(target, "w", newline="") as f:
                self._write(f)

    def _write(self, f) -> None:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        names = self.section_names
        for row in zip(*(self.columns[k] for k in TRACE_FIELDS)):
            out = [_fmt(v) for v in row]
            if names:
                out[2] = names[int(row[2])]
            w.writerow(out)


def _fmt(v) -> str:
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


@dataclass
class EpisodeMetrics:
    mean_speed: float
    rms_jerk: float
    mean_abs_jerk: float
    crash: bool
    crash_step: Optional[int]
    route_miss: bool
    merge_miss: bool
    steps: int
    exited: bool
    min_gap: Optional[float]  # smallest post-step front gap of the ego; None if it never had a leader
    trace: Optional[Trace] = field(default=None, repr=False, compare=False)

    def to_record(self) -> dict:
        rec = asdict(self)
        rec.pop("trace")
        return rec


class _TraceRecorder:
    def __init__(self, world: World):
        self.world = world
        self.parts: list[tuple] = []
        self.last_a: dict[int, float] = {}

    def record(self):
        w = self.world
        order, meta = w.O[0], w.O[1]
        slots = np.sort(order[:meta[1]])
        vid, track, x, v, a = w.V[0][slots], w.V[2][slots], w.V[3][slots], w.V[4][slots], w.V[5][slots]
        sec = np.empty(len(slots), dtype=np.int64)
        lane = np.empty(len(slots), dtype=np.int64)
        for k in range(len(slots)):
            sec[k], lane[k] = E.locate(w.N, track[k], x[k])
        pos = x - w.N[7][sec]
        jerk = np.array([(a[k] - self.last_a[i]) / w.dt if i in self.last_a else math.nan
                         for k, i in enumerate(vid.tolist())])
        self.last_a = dict(zip(vid.tolist(), a.tolist()))
        step = np.full(len(slots), w.time_step, dtype=np.int64)
        self.parts.append((step, vid.copy(), sec, lane, pos, v.copy(), a.copy(), jerk))

    def trace(self) -> Trace:
        names = tuple(s.name for s in self.world.network.sections)
        if not self.parts:
            return Trace({k: np.zeros(0) for k in TRACE_FIELDS}, names)
        cols = [np.concatenate([p[i] for p in self.parts]) for i in range(len(TRACE_FIELDS))]
        return Trace(dict(zip(TRACE_FIELDS, cols)), names)


def _controller_cfg(cfg: GreedyConfig, weights: RewardWeights, cap: float) -> np.ndarray:
    w_comf = weights.comf if cfg.comfort_weight is None else cfg.comfort_weight
    out = np.zeros(8)
    out[E.K_THRESHOLD] = cfg.lane_change_threshold
    out[E.K_GRID] = cfg.grid_size
    out[E.K_MANDATORY] = cfg.mandatory_distance
    out[E.K_WCOMF] = w_comf
    out[E.K_WLC] = weights.lc
    out[E.K_WMLC] = weights.mlc
    out[E.K_GAMMA] = weights.gamma
    out[E.K_CAP] = cap
    return out


def _policy_actions(world: World, policy: PolicyInterface, obs_cfg: Optional[ObservationConfig]):
    actions = {}
    for vid in world.controlled_ids():
        ctx = build_context(world, vid)
        st = world.vehicle(vid)
        obs = None
        if obs_cfg is not None:
            obs = (lambda v=vid: build_observation(world, v, obs_cfg))
        view = EgoView(vid, ctx, st.speed, st.prev_accel, st.params, st.speed_limit,
                       world.route_position(vid), obs)
        actions[vid] = filter_action(policy(view), ctx, st.speed, st.params, world.cap)
    return actions


def run_episode(config: ScenarioConfig, controller: Union[str, PolicyInterface] = "gipps_greedy", *,
                greedy: Optional[GreedyConfig] = None, weights: Optional[RewardWeights] = None,
                trace: bool = False, compiled: bool = True,
                observation: Optional[ObservationConfig] = None,
                on_step: Optional[Callable[[World], None]] = None) -> EpisodeMetrics:
    """Run one episode to the horizon, a crash or the ego leaving the network.

    ``controller`` is a built-in controller name or any callable following
    :class:`~safedrive.controllers.PolicyInterface`; every action it returns
    passes through :func:`~safedrive.action.filter_action`. Built-in
    controllers run compiled unless ``compiled=False``; the results are the
    same either way.
    """
    greedy = greedy or GreedyConfig()
    weights = weights or RewardWeights()
    world = World(config)
    acc = np.zeros(E.N_METRICS)
    acc[E.M_MIN_GAP] = math.inf
    named = isinstance(controller, str)
    if named and controller not in CONTROLLERS:
        raise ValueError(f"unknown controller {controller!r}; expected one of {CONTROLLERS}")
    fast = named and compiled
    status = E.OK
    recorder = None

    if fast and not trace and on_step is None:
        ctrl_id = E.GIPPS if controller == "gipps_greedy" else E.COMFORT
        status = E.run_compiled(world.V, world.O, world.N, world.NB, world.R, world.Z, world.I, ctrl_id,
                                _controller_cfg(greedy, weights, world.cap), world.dt, world.integration,
                                world.ego_slot, config.horizon, world.scratch, acc)
        world.status = status
    else:
        if trace:
            recorder = _TraceRecorder(world)
        policy = None if fast else (make_policy(controller, greedy, weights, world.cap) if named else controller)
        if fast:
            ctrl_id = E.GIPPS if controller == "gipps_greedy" else E.COMFORT
            kcfg = _controller_cfg(greedy, weights, world.cap)
            n = world.V[0].shape[0]
            acc_cmd, lc_cmd = np.zeros(n), np.zeros(n, dtype=np.int64)
            ctx, rdelta = np.zeros((3, E.CTX_COLS)), np.zeros(3, dtype=np.int64)
        for _ in range(config.horizon):
            if fast:
                E.decide(world.V, world.O, world.N, world.NB, world.R, ctrl_id, kcfg, acc_cmd, lc_cmd, ctx, rdelta)
                status = E.step_core(world.V, world.O, world.N, world.NB, world.R, world.Z, world.I, acc_cmd,
                                     lc_cmd, world.dt, world.integration, world.time_step, world.cap,
                                     world.ego_slot, world.scratch, world._ctx)
                world.O[1][2] += 1
                world.status = status
            else:
                step_world(world, _policy_actions(world, policy, observation))
                status = world.status
            E.record(world.V, world.NB, world.ego_slot, world.dt, acc)
            if recorder is not None:
                recorder.record()
            if on_step is not None:
                on_step(world)
            if status != E.OK:
                break
    return _metrics(world, acc, status, recorder.trace() if recorder is not None else None)


def _metrics(world: World, acc: np.ndarray, status: int, trace: Optional[Trace]) -> EpisodeMetrics:
    steps = int(acc[E.M_STEPS])
    ego = world.ego_slot
    merge_miss = False
    if status == E.OK and world.V[1][ego]:
        merge_miss = bool(world.N[2][world.V[2][ego]] == E.END)
    n_jerk = max(steps - 1, 0)
    min_gap = float(acc[E.M_MIN_GAP])
    return EpisodeMetrics(
        mean_speed=float(acc[E.M_SUM_V] / steps) if steps else 0.0,
        rms_jerk=math.sqrt(acc[E.M_SUM_J2] / n_jerk) if n_jerk else 0.0,
        mean_abs_jerk=float(acc[E.M_SUM_ABS_J] / n_jerk) if n_jerk else 0.0,
        crash=status == E.CRASH,
        crash_step=steps if status == E.CRASH else None,
        route_miss=bool(world.V[15][ego]),
        merge_miss=merge_miss,
        steps=steps,
        exited=status == E.EGO_EXIT,
        min_gap=min_gap if math.isfinite(min_gap) else None,
        trace=trace,
    )


def write_metrics_json(metrics: EpisodeMetrics, path, extra: Optional[dict] = None) -> None:
    rec = {**(extra or {}), **metrics.to_record()}
    with open(path, "w") as f:
        json.dump(rec, f, indent=2, sort_keys=True)
        f.write("\n")
