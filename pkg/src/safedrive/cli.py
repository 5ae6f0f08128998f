"""Command-line entry point.

Subcommands: ``run``, ``batch``, ``platoon``, ``stability`` and ``repro``.
Exit codes: 0 success, 1 usage or config error, 2 crash under ``--forbid-crash``.

Data files carry no timestamps and are written in a fixed order so identical
requests give byte-identical outputs; wall-clock details go to
``manifest.json`` only.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import os
import platform
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import __version__
from .analysis import SWEEP_FIELDS, platoon_prediction, stability_sweep
from .controllers import CONTROLLERS, GreedyConfig
from .sim import config as sim_config
from .sim.config import ConfigError
from .sim.scenarios import KINDS, make_scenario
from .sim.runner import EpisodeMetrics, run_episode

OUT_ENV = "SAFEDRIVE_OUT"
DEFAULT_OUT = "runs"
EXIT_OK, EXIT_USAGE, EXIT_CRASH = 0, 1, 2

TABLE_KINDS = ("loop_normal", "loop_congested", "loop_emergency")
AGGREGATE_FIELDS = ("episodes", "failed", "mean_speed", "mean_speed_std", "mean_abs_jerk", "mean_abs_jerk_std",
                    "rms_jerk", "rms_jerk_std", "crash_rate", "route_miss_rate", "merge_miss_rate")


class UsageError(Exception):
    pass


# -- output helpers ------------------------------------------------------------------
def atomic_write(path: Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv(fields: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _cell(row.get(k)) for k in fields})
    return buf.getvalue()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _trace_text(metrics: EpisodeMetrics) -> str:
    buf = io.StringIO()
    metrics.trace.write_csv(buf)
    return buf.getvalue()


def _versions() -> dict:
    import numba
    return {"safedrive": __version__, "numpy": np.__version__, "numba": numba.__version__,
            "python": platform.python_version()}


def write_manifest(out: Path, request: dict, seeds: Sequence[int], started: _dt.datetime) -> None:
    finished = _dt.datetime.now(_dt.timezone.utc)
    atomic_write(out / "manifest.json", _json({
        "request": request, "seeds": list(seeds), "versions": _versions(),
        "started": started.isoformat(), "finished": finished.isoformat(),
    }))


def _out_dir(arg: Optional[str], name: str) -> Path:
    base = Path(arg) if arg else Path(os.environ.get(OUT_ENV, DEFAULT_OUT)) / name
    try:
        base.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"output directory {base}: {exc}") from None
    if not os.access(base, os.W_OK):
        raise UsageError(f"output directory {base} is not writable")
    return base


# -- request parsing -----------------------------------------------------------------
def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _params(pairs: Sequence[str]) -> dict:
    out = {}
    for item in pairs or ():
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--param expects key=value, got {item!r}")
        out[key.strip()] = _parse_value(val.strip())
    return out


def _floats(text: str, name: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{name}: expected comma-separated numbers, got {text!r}") from None


def _seed_list(args) -> list[int]:
    if args.seed_list:
        try:
            seeds = [int(t) for t in args.seed_list.split(",") if t.strip()]
        except ValueError:
            raise UsageError(f"--seed-list: expected comma-separated integers, got {args.seed_list!r}") from None
    else:
        seeds = list(range(args.seed_start, args.seed_start + args.seeds))
    if not seeds or len(set(seeds)) != len(seeds):
        raise UsageError("need at least one seed and no duplicates")
    return seeds


def _greedy(args) -> GreedyConfig:
    try:
        return GreedyConfig(lane_change_threshold=args.threshold, comfort_weight=args.comfort_weight,
                            grid_size=args.grid, mandatory_distance=args.mandatory_distance)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _scenario_request(args) -> dict:
    if args.config and args.scenario:
        raise UsageError("give either --scenario or --config, not both")
    if not (args.config or args.scenario):
        raise UsageError("one of --scenario or --config is required")
    _greedy(args)
    return {"scenario": args.scenario, "config": args.config, "params": _params(args.param),
            "controller": args.controller, "threshold": args.threshold, "comfort_weight": args.comfort_weight,
            "grid": args.grid, "mandatory_distance": args.mandatory_distance}


def _build_config(req: dict, seed: int):
    if req["config"]:
        if req["params"]:
            raise UsageError("--param only applies to --scenario")
        return sim_config.load(req["config"])
    try:
        return make_scenario(req["scenario"], req["params"], seed)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise UsageError(str(exc)) from None


# -- episodes ------------------------------------------------------------------------
def _episode(req: dict, seed: int, trace: bool = False):
    cfg = _build_config(req, seed)
    greedy = GreedyConfig(req["threshold"], req["comfort_weight"], req["grid"], req["mandatory_distance"])
    return cfg, run_episode(cfg, req["controller"], greedy=greedy, trace=trace)


def _batch_worker(job: tuple) -> dict:
    """Run one seed and write its record atomically. Errors become part of the record."""
    req, seed, ep_dir = job
    try:
        _, m = _episode(req, seed)
        rec = {"seed": seed, "error": None, **m.to_record()}
    except Exception as exc:  # recorded per seed; the batch carries on
        rec = {"seed": seed, "error": f"{type(exc).__name__}: {exc}"}
    atomic_write(Path(ep_dir) / f"seed_{seed:06d}.json", _json(rec))
    return rec


def aggregate(records: Sequence[dict]) -> dict:
    ok = [r for r in records if r.get("error") is None]
    n = len(ok)

    def mean(key):
        return float(np.mean([r[key] for r in ok])) if n else None

    def std(key):
        return float(np.std([r[key] for r in ok])) if n else None

    return {
        "episodes": len(records), "failed": len(records) - n,
        "mean_speed": mean("mean_speed"), "mean_speed_std": std("mean_speed"),
        "mean_abs_jerk": mean("mean_abs_jerk"), "mean_abs_jerk_std": std("mean_abs_jerk"),
        "rms_jerk": mean("rms_jerk"), "rms_jerk_std": std("rms_jerk"),
        "crash_rate": mean("crash"), "route_miss_rate": mean("route_miss"), "merge_miss_rate": mean("merge_miss"),
    }


EPISODE_FIELDS = ("seed", "error", "mean_speed", "mean_abs_jerk", "rms_jerk", "crash", "crash_step",
                  "route_miss", "merge_miss", "exited", "steps", "min_gap")


def run_batch(req: dict, seeds: Sequence[int], out: Path, jobs: int = 1) -> tuple[list[dict], dict]:
    ep_dir = out / "episodes"
    ep_dir.mkdir(parents=True, exist_ok=True)
    work = [(req, s, str(ep_dir)) for s in seeds]
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_batch_worker, work))
    else:
        records = [_batch_worker(w) for w in work]
    records.sort(key=lambda r: r["seed"])
    agg = aggregate(records)
    atomic_write(out / "episodes.csv", _csv(EPISODE_FIELDS, records))
    atomic_write(out / "aggregate.json", _json({"request": req, "seeds": list(seeds), **agg}))
    return records, agg


# -- subcommands ---------------------------------------------------------------------
def cmd_run(args) -> int:
    req = _scenario_request(args)
    out = _out_dir(args.out, "run")
    started = _dt.datetime.now(_dt.timezone.utc)
    cfg, m = _episode(req, args.seed, trace=args.trace)
    atomic_write(out / "scenario.toml", sim_config.dumps(cfg))
    atomic_write(out / "metrics.json", _json({"seed": args.seed, **req, **m.to_record()}))
    if args.trace:
        atomic_write(out / "trace.csv", _trace_text(m))
    write_manifest(out, {"subcommand": "run", **req, "trace": args.trace}, [args.seed], started)
    _say(args, f"{out}: mean_speed={m.mean_speed:.3f} mean_abs_jerk={m.mean_abs_jerk:.4f} "
               f"crash={m.crash} route_miss={m.route_miss} steps={m.steps}")
    return EXIT_CRASH if (args.forbid_crash and m.crash) else EXIT_OK


def cmd_batch(args) -> int:
    req = _scenario_request(args)
    seeds = _seed_list(args)
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    _build_config(req, seeds[0])  # fail fast on a bad request
    out = _out_dir(args.out, "batch")
    started = _dt.datetime.now(_dt.timezone.utc)
    records, agg = run_batch(req, seeds, out, args.jobs)
    write_manifest(out, {"subcommand": "batch", **req, "jobs": args.jobs}, seeds, started)
    for r in records:
        if r.get("error"):
            print(f"seed {r['seed']}: {r['error']}", file=sys.stderr)
    _say(args, f"{out}: " + " ".join(f"{k}={agg[k]}" for k in AGGREGATE_FIELDS))
    crashed = any(r.get("crash") for r in records)
    return EXIT_CRASH if (args.forbid_crash and crashed) else EXIT_OK


PLATOON_FIELDS = ("follower", "leader", "d_e", "d_l", "measured_gap", "predicted_gap", "rel_error")


def platoon_comparison(m: EpisodeMetrics, cfg, transient: int) -> list[dict]:
    """Mean post-transient bumper gap of each follower against the closed-form prediction."""
    vs = sorted(cfg.vehicles, key=lambda v: -v.position)
    w = float(cfg.params["w"])
    pred = platoon_prediction(w, [v.params for v in vs[1:]], [v.params.max_decel for v in vs[:-1]])
    cols = m.trace.columns
    rows = []
    for (lead, fol), g_pred in zip(zip(vs, vs[1:]), pred):
        sel_l = (cols["id"] == lead.id) & (cols["step"] > transient)
        sel_f = (cols["id"] == fol.id) & (cols["step"] > transient)
        n = min(int(sel_l.sum()), int(sel_f.sum()))
        if n == 0:
            measured = math.nan
        else:
            gaps = cols["position"][sel_l][:n] - lead.params.length - cols["position"][sel_f][:n]
            measured = float(np.mean(gaps))
        rows.append(dict(follower=fol.id, leader=lead.id, d_e=fol.params.max_decel, d_l=lead.params.max_decel,
                         measured_gap=measured, predicted_gap=g_pred, rel_error=abs(measured - g_pred) / g_pred))
    return rows


def cmd_platoon(args) -> int:
    params = {"w": args.w, "k": args.k, "eps": args.eps, "horizon": args.horizon}
    if args.decels:
        params["decels"] = _floats(args.decels, "--decels")
    if args.horizon <= args.transient:
        raise UsageError("--horizon must exceed --transient")
    out = _out_dir(args.out, "platoon")
    started = _dt.datetime.now(_dt.timezone.utc)
    cfg = _build_config({"config": None, "scenario": "platoon", "params": params}, 0)
    m = run_episode(cfg, args.controller, trace=True)
    rows = platoon_comparison(m, cfg, args.transient)
    atomic_write(out / "trace.csv", _trace_text(m))
    atomic_write(out / "comparison.csv", _csv(PLATOON_FIELDS, rows))
    req = {"subcommand": "platoon", **params, "transient": args.transient, "controller": args.controller}
    write_manifest(out, req, [0], started)
    for r in rows:
        _say(args, f"follower {r['follower']}: measured {r['measured_gap']:.6f} m, "
                   f"predicted {r['predicted_gap']:.6f} m, rel error {r['rel_error']:.2e}")
    return EXIT_CRASH if (args.forbid_crash and m.crash) else EXIT_OK


def default_speeds() -> list[float]:
    return [0.0] + [0.5 * i for i in range(1, 121)]


def cmd_stability(args) -> int:
    speeds = _floats(args.w, "--w") if args.w else default_speeds()
    decels = _floats(args.d, "--d")
    rts = _floats(args.r, "--r")
    if any(w < 0 for w in speeds) or any(d <= 0 for d in decels) or any(r <= 0 for r in rts):
        raise UsageError("need w >= 0, d > 0 and r > 0")
    out = _out_dir(args.out, "stability")
    started = _dt.datetime.now(_dt.timezone.utc)
    rows = stability_sweep(speeds, decels, rts, min_gap=args.eps)
    atomic_write(out / "stability.csv", _csv(SWEEP_FIELDS, rows))
    write_manifest(out, {"subcommand": "stability", "w": speeds, "d": decels, "r": rts, "eps": args.eps},
                   [], started)
    positive = [r for r in rows if r["w"] > 0]
    worst = max((r["radius"] for r in positive), default=math.nan)
    stable = sum(r["classification"] == "asymptotically_stable" for r in positive)
    _say(args, f"{out}: {len(rows)} rows; {stable}/{len(positive)} rows with w > 0 asymptotically stable; "
               f"max radius {worst:.6f}")
    return EXIT_OK


def cmd_repro(args) -> int:
    """Platoon run, loop-scenario batches and the stability sweep under fixed seeds."""
    out = _out_dir(args.out, "repro")
    started = _dt.datetime.now(_dt.timezone.utc)
    seeds = list(range(args.seeds))
    ns = argparse.Namespace(w=25.0, k=3, eps=4.0, decels=None, horizon=3000, transient=2000,
                            controller="gipps_greedy", out=str(out / "platoon"), forbid_crash=False, quiet=True)
    cmd_platoon(ns)
    table = []
    for kind in TABLE_KINDS:
        for ctrl in CONTROLLERS:
            req = {"scenario": kind, "config": None, "params": {}, "controller": ctrl, "threshold": 3.0,
                   "comfort_weight": None, "grid": 21, "mandatory_distance": 150.0}
            _, agg = run_batch(req, seeds, out / "batch" / f"{kind}__{ctrl}", args.jobs)
            table.append({"scenario": kind, "controller": ctrl, **agg})
    atomic_write(out / "table.csv", _csv(("scenario", "controller") + AGGREGATE_FIELDS, table))
    cmd_stability(argparse.Namespace(w=None, d="1,2,3,4,5,6,7,8,9", r="0.05,0.1,0.5,1", eps=2.0,
                                     out=str(out / "stability"), quiet=True))
    write_manifest(out, {"subcommand": "repro", "jobs": args.jobs}, seeds, started)
    for row in table:
        _say(args, f"{row['scenario']:15s} {row['controller']:15s} speed={row['mean_speed']:.3f} "
                   f"|jerk|={row['mean_abs_jerk']:.4f} crash_rate={row['crash_rate']}")
    return EXIT_OK


def _say(args, text: str) -> None:
    if not getattr(args, "quiet", False):
        print(text)


# -- argument parser -----------------------------------------------------------------
def _scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", choices=KINDS,
                   help="scenario kind to synthesize")
    p.add_argument("--config", help="scenario TOML file (instead of --scenario)")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="override a scenario parameter; VALUE is parsed as JSON when possible")
    p.add_argument("--controller", choices=CONTROLLERS, default="comfort_greedy")
    p.add_argument("--threshold", type=float, default=3.0, help="lane-change gain threshold (m/s)")
    p.add_argument("--comfort-weight", type=float, default=None, help="override the comfort reward weight")
    p.add_argument("--grid", type=int, default=21, help="acceleration grid size")
    p.add_argument("--mandatory-distance", type=float, default=150.0,
                   help="route-pressure distance per required lane change (m)")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<subcommand> or ./{DEFAULT_OUT}/...)")
    p.add_argument("--forbid-crash", action="store_true", help="exit 2 if any episode crashes")
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safedrive", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one episode")
    _scenario_args(p)
    _common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", action="store_true", help="also write trace.csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="run many seeds and aggregate")
    _scenario_args(p)
    _common(p)
    p.add_argument("--seeds", type=int, default=30, help="number of seeds")
    p.add_argument("--seed-start", type=int, default=0)
    p.add_argument("--seed-list", help="explicit comma-separated seeds")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("platoon", help="platoon steady state against the prediction")
    _common(p)
    p.add_argument("--w", type=float, default=25.0, help="leader speed (m/s)")
    p.add_argument("--k", type=int, default=3, help="number of followers")
    p.add_argument("--eps", type=float, default=4.0, help="minimum stopped gap (m)")
    p.add_argument("--decels", help="comma-separated max decelerations, leader first (k + 1 values)")
    p.add_argument("--horizon", type=int, default=3000)
    p.add_argument("--transient", type=int, default=2000, help="steps ignored before measuring")
    p.add_argument("--controller", choices=CONTROLLERS, default="gipps_greedy")
    p.set_defaults(func=cmd_platoon)

    p = sub.add_parser("stability", help="equilibrium stability sweep")
    _common(p)
    p.add_argument("--w", help="comma-separated leader speeds (default 0 and 0.5..60 step 0.5)")
    p.add_argument("--d", default="1,2,3,4,5,6,7,8,9", help="comma-separated decelerations")
    p.add_argument("--r", default="0.05,0.1,0.5,1", help="comma-separated reaction times")
    p.add_argument("--eps", type=float, default=2.0)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("repro", help="platoon, loop batches and stability sweep in one go")
    _common(p)
    p.add_argument("--seeds", type=int, default=30)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_repro)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if getattr(args, "seeds", 1) is not None and getattr(args, "seeds", 1) < 1:
            raise UsageError("--seeds must be >= 1")
        return args.func(args)
    except (UsageError, ConfigError, OSError) as exc:
        print(f"safedrive {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
