"""Steady state of a follower that always drives at its maximal safe speed
behind a leader cruising at constant speed ``w``.

The follower's state is ``(gap, speed)`` and evolves by the map in
:func:`step`. Its fixed point, the Jacobian spectrum there, and the predicted
spacing of a whole platoon are computed in closed form.
"""
from __future__ import annotations

import cmath
import csv
import enum
import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernel
from .kernel import VehicleParams

MARGINAL_TOL = 1e-12


class Stability(str, enum.Enum):
    ASYMPTOTICALLY_STABLE = "asymptotically_stable"
    MARGINAL = "marginal"
    UNSTABLE = "unstable"


@dataclass(frozen=True)
class FollowerSystem:
    """Two-vehicle system. ``speed_limit`` and ``accel_bounded`` are off by
    default; switching them on mirrors what a simulated controller can do."""

    leader_speed: float
    ego: VehicleParams
    leader_decel: float
    gap: float = 0.0
    speed: float = 0.0
    speed_limit: Optional[float] = None
    accel_bounded: bool = False

    def __post_init__(self):
        if self.leader_speed < 0:
            raise ValueError("leader speed must be >= 0")
        kernel.check_defensive(self.ego.max_decel, self.leader_decel)

    def at(self, gap: float, speed: float) -> "FollowerSystem":
        return replace(self, gap=gap, speed=speed)


@dataclass(frozen=True)
class EquilibriumReport:
    g_star: float
    v_star: float
    eigenvalues: tuple[complex, complex]
    spectral_radius: float
    classification: Stability


def step(sys: FollowerSystem) -> tuple[float, float]:
    ego = sys.ego
    r = ego.reaction_time
    g_next = sys.gap - r * (sys.speed - sys.leader_speed)
    v_next = kernel.safe_speed(sys.gap, sys.speed, sys.leader_speed, ego, sys.leader_decel,
                               cap=math.inf).speed
    if sys.speed_limit is not None:
        v_next = min(v_next, sys.speed_limit)
    if sys.accel_bounded:
        a = min(max((v_next - sys.speed) / r, -ego.max_decel), ego.max_accel)
        v_next = max(sys.speed + a * r, 0.0)
    return g_next, v_next


def trajectory(sys: FollowerSystem, n_steps: int) -> np.ndarray:
    """States after 0..n_steps applications of :func:`step`, shape (n_steps + 1, 2)."""
    out = np.empty((n_steps + 1, 2))
    out[0] = sys.gap, sys.speed
    for i in range(1, n_steps + 1):
        g, v = step(sys)
        sys = sys.at(g, v)
        out[i] = g, v
    return out


def equilibrium_gap(w: float, ego: VehicleParams, leader_decel: float) -> float:
    d_e, d_l = ego.max_decel, leader_decel
    return w * ego.reaction_time + (d_l - d_e) / (2 * d_l * d_e) * w * w + ego.min_gap


def equilibrium(sys: FollowerSystem) -> tuple[float, float]:
    return equilibrium_gap(sys.leader_speed, sys.ego, sys.leader_decel), sys.leader_speed


def jacobian(sys: FollowerSystem, gap: Optional[float] = None,
             speed: Optional[float] = None) -> np.ndarray:
    """Jacobian of the unbounded map, at the equilibrium unless a state is given."""
    d, r = sys.ego.max_decel, sys.ego.reaction_time
    if gap is None:
        root = sys.leader_speed + d * r / 2
    else:
        v = sys.speed if speed is None else speed
        half = r * d / 2
        a = half * half - 2 * d * (r * v / 2 - sys.leader_speed ** 2 / (2 * sys.leader_decel)
                                   - gap + sys.ego.min_gap)
        root = math.sqrt(a)
    return np.array([[1.0, -r], [d / root, -d * r / (2 * root)]])


def jacobian_eigenvalues(sys: FollowerSystem) -> tuple[complex, complex]:
    """(lambda_plus, lambda_minus) at the equilibrium, in closed form."""
    w, d, r = sys.leader_speed, sys.ego.max_decel, sys.ego.reaction_time
    root = cmath.sqrt(w * w - 2 * w * d * r - (d * r) ** 2)
    denom = 2 * w + d * r
    return (w + root) / denom, (w - root) / denom


def classify_stability(sys: FollowerSystem) -> EquilibriumReport:
    g_star, v_star = equilibrium(sys)
    lams = jacobian_eigenvalues(sys)
    radius = max(abs(l) for l in lams)
    if radius < 1 - MARGINAL_TOL:
        cls = Stability.ASYMPTOTICALLY_STABLE
    elif radius <= 1 + MARGINAL_TOL:
        cls = Stability.MARGINAL
    else:
        cls = Stability.UNSTABLE
    return EquilibriumReport(g_star, v_star, lams, radius, cls)


def platoon_prediction(w: float, followers: Sequence[VehicleParams],
                       leader_decels: Sequence[float]) -> list[float]:
    """Steady-state bumper gap in front of each follower of a platoon led at speed ``w``.

    ``leader_decels[i]`` is the maximal deceleration of the vehicle directly
    ahead of ``followers[i]``.
    """
    if len(followers) != len(leader_decels):
        raise ValueError("need one leader deceleration per follower")
    out = []
    for ego, d_l in zip(followers, leader_decels):
        kernel.check_defensive(ego.max_decel, d_l)
        out.append(equilibrium_gap(w, ego, d_l))
    return out


SWEEP_FIELDS = ("w", "d_e", "d_l", "r", "eps", "g_star", "re_plus", "im_plus",
                "re_minus", "im_minus", "radius", "classification")


def stability_sweep(speeds: Iterable[float], decels: Iterable[float], reaction_times: Iterable[float],
                    min_gap: float = 2.0, leader_decel: Optional[float] = None) -> list[dict]:
    """One report row per grid point. The leader decel defaults to the ego's."""
    rows = []
    decels = list(decels)
    reaction_times = list(reaction_times)
    for w in speeds:
        for d in decels:
            for r in reaction_times:
                ego = VehicleParams(max_decel=d, reaction_time=r, min_gap=min_gap)
                d_l = d if leader_decel is None else leader_decel
                rep = classify_stability(FollowerSystem(w, ego, d_l))
                lp, lm = rep.eigenvalues
                rows.append(dict(w=w, d_e=d, d_l=d_l, r=r, eps=min_gap, g_star=rep.g_star,
                                 re_plus=lp.real, im_plus=lp.imag, re_minus=lm.real, im_minus=lm.imag,
                                 radius=rep.spectral_radius, classification=rep.classification.value))
    return rows


def write_sweep_csv(rows: Iterable[dict], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=SWEEP_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
