"""Road model.

A network is a set of sections. Each lane of a section either continues into
a lane of another section (``"name:lane"``), leaves the network (``"exit"``)
or ends in a lane drop (``"end"``). Lane 0 is the rightmost lane.

Internally every maximal chain of connected lanes becomes a *track*. All
vehicles on a track share a longitudinal coordinate, so leaders and followers
are found by sorting on ``(track, x)``. This requires each lane to have at
most one predecessor.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..route import RouteSpec

EXIT = "exit"
END = "end"


@dataclass(frozen=True)
class SectionSpec:
    name: str
    length: float
    lanes: int
    successors: tuple[str, ...] = ()

    def __post_init__(self):
        if self.length <= 0 or self.lanes < 1:
            raise ValueError(f"section {self.name!r}: need positive length and >= 1 lane")
        if self.successors and len(self.successors) != self.lanes:
            raise ValueError(f"section {self.name!r}: one successor per lane required")


@dataclass
class Track:
    segments: list  # (section index, lane, x_start, x_end)
    terminal: str  # EXIT, END or "ring"
    starts: np.ndarray = field(init=False)

    def __post_init__(self):
        self.starts = np.array([s[2] for s in self.segments])

    @property
    def x_start(self) -> float:
        return self.segments[0][2]

    @property
    def x_end(self) -> float:
        return self.segments[-1][3]

    def segment_at(self, x: float):
        i = int(np.searchsorted(self.starts, x, side="right")) - 1
        return self.segments[max(i, 0)]


def _parse_successor(text: str) -> tuple[str, Optional[tuple[str, int]]]:
    if text in (EXIT, END):
        return text, None
    name, _, lane = text.rpartition(":")
    if not name:
        raise ValueError(f"bad successor {text!r}; expected 'section:lane', 'exit' or 'end'")
    return "link", (name, int(lane))


class RoadNetwork:
    """Sections laid out along one longitudinal axis.

    ``topology="ring"`` joins the listed sections in order into a loop; lane
    ``k`` of each section continues into lane ``k`` of the next, so all
    sections must have the same lane count. ``topology="open"`` takes the
    connectivity from each section's ``successors``.
    """

    def __init__(self, sections, topology: str = "open", routes: Optional[dict[str, RouteSpec]] = None,
                 lane_width: float = 3.2):
        self.sections: tuple[SectionSpec, ...] = tuple(sections)
        self.topology = topology
        self.routes = dict(routes or {})
        self.lane_width = lane_width
        self.index = {s.name: i for i, s in enumerate(self.sections)}
        if len(self.index) != len(self.sections):
            raise ValueError("section names must be unique")
        if topology == "ring":
            self._build_ring()
        elif topology == "open":
            self._build_open()
        else:
            raise ValueError(f"unknown topology {topology!r}")
        self.max_lanes = max(s.lanes for s in self.sections)
        self._check_routes()

    # -- construction -----------------------------------------------------
    def _build_ring(self):
        lanes = {s.lanes for s in self.sections}
        if len(lanes) != 1:
            raise ValueError("ring sections must all have the same lane count")
        n_lanes = lanes.pop()
        self.offsets = np.concatenate([[0.0], np.cumsum([s.length for s in self.sections])[:-1]])
        self.circumference = float(sum(s.length for s in self.sections))
        self.tracks = []
        self.track_of = {}
        for lane in range(n_lanes):
            segs = [(i, lane, self.offsets[i], self.offsets[i] + s.length) for i, s in enumerate(self.sections)]
            for i, _ in enumerate(self.sections):
                self.track_of[(i, lane)] = len(self.tracks)
            self.tracks.append(Track(segs, "ring"))

    def _build_open(self):
        self.circumference = None
        links: dict[tuple[int, int], tuple[str, Optional[tuple[int, int]]]] = {}
        preds: dict[tuple[int, int], tuple[int, int]] = {}
        for i, s in enumerate(self.sections):
            succ = s.successors or (EXIT,) * s.lanes
            for lane, text in enumerate(succ):
                kind, target = _parse_successor(text)
                if target is not None:
                    if target[0] not in self.index:
                        raise ValueError(f"{s.name}:{lane} links to unknown section {target[0]!r}")
                    j = self.index[target[0]]
                    if not 0 <= target[1] < self.sections[j].lanes:
                        raise ValueError(f"{s.name}:{lane} links to missing lane {text!r}")
                    target = (j, target[1])
                    if target in preds:
                        raise ValueError(f"lane {text!r} has more than one predecessor")
                    preds[target] = (i, lane)
                links[(i, lane)] = (kind, target)
        self.offsets = self._layout(links)
        self.tracks = []
        self.track_of = {}
        for start in sorted(links):
            if start in preds:
                continue
            segs, node = [], start
            while True:
                i, lane = node
                x0 = self.offsets[i]
                segs.append((i, lane, x0, x0 + self.sections[i].length))
                self.track_of[node] = len(self.tracks)
                kind, nxt = links[node]
                if nxt is None:
                    self.tracks.append(Track(segs, kind))
                    break
                if nxt in self.track_of or any(nxt == (s[0], s[1]) for s in segs):
                    raise ValueError("open networks must be acyclic")
                node = nxt
        if len(self.track_of) != len(links):
            raise ValueError("open networks must be acyclic")

    def _layout(self, links) -> np.ndarray:
        offsets: list[Optional[float]] = [None] * len(self.sections)
        adj: dict[int, set[int]] = {i: set() for i in range(len(self.sections))}
        for (i, _), (_, target) in links.items():
            if target is not None:
                adj[i].add(target[0])
        for root in range(len(self.sections)):
            if offsets[root] is not None:
                continue
            offsets[root] = 0.0
            stack = [root]
            while stack:
                i = stack.pop()
                for j in range(len(self.sections)):
                    if j in adj[i]:
                        want = offsets[i] + self.sections[i].length
                    elif i in adj[j]:
                        want = offsets[i] - self.sections[j].length
                    else:
                        continue
                    if offsets[j] is None:
                        offsets[j] = want
                        stack.append(j)
                    elif abs(offsets[j] - want) > 1e-9:
                        raise ValueError(f"inconsistent section layout at {self.sections[j].name!r}")
        return np.array(offsets, dtype=float)

    def _check_routes(self):
        for rid, route in self.routes.items():
            for rs in route.sections:
                if rs.name not in self.index:
                    raise ValueError(f"route {rid!r} visits unknown section {rs.name!r}")
                if len(rs.on_route) != self.sections[self.index[rs.name]].lanes:
                    raise ValueError(f"route {rid!r}: lane labels of {rs.name!r} do not match lane count")

    # -- queries ----------------------------------------------------------
    def lane_track(self, section: int, lane: int) -> Optional[int]:
        return self.track_of.get((section, lane))

    def locate(self, track: int, x: float) -> tuple[int, int, float]:
        """(section index, lane, position within section) of a point on a track."""
        seg = self.tracks[track].segment_at(x)
        return seg[0], seg[1], x - seg[2]

    def to_track(self, section: int, lane: int, position: float) -> tuple[int, float]:
        if not 0 <= lane < self.sections[section].lanes:
            raise ValueError(f"lane {lane} not in section {self.sections[section].name!r}")
        return self.track_of[(section, lane)], float(self.offsets[section] + position)

    @property
    def ring(self) -> bool:
        return self.topology == "ring"

    def __eq__(self, other) -> bool:
        if not isinstance(other, RoadNetwork):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "topology": self.topology,
            "lane_width": self.lane_width,
            "sections": [
                {"name": s.name, "length": s.length, "lanes": s.lanes,
                 **({"successors": list(s.successors)} if s.successors else {})}
                for s in self.sections
            ],
            "routes": {rid: {rs.name: list(rs.on_route) for rs in r.sections} for rid, r in self.routes.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoadNetwork":
        sections = [SectionSpec(s["name"], float(s["length"]), int(s["lanes"]),
                                tuple(s.get("successors", ()))) for s in d["sections"]]
        routes = {rid: RouteSpec.from_lists(list(r.items())) for rid, r in d.get("routes", {}).items()}
        return cls(sections, d.get("topology", "open"), routes, float(d.get("lane_width", 3.2)))


def ring_road(circumference: float = 1000.0, lanes: int = 3, n_sections: int = 4) -> RoadNetwork:
    length = circumference / n_sections
    sections = [SectionSpec(f"s{i}", length, lanes) for i in range(n_sections)]
    route = RouteSpec.from_lists([(s.name, [True] * lanes) for s in sections])
    return RoadNetwork(sections, "ring", {"loop": route})


def straight_road(length: float, lanes: int = 1) -> RoadNetwork:
    sec = SectionSpec("road", length, lanes, (EXIT,) * lanes)
    return RoadNetwork([sec], "open", {"through": RouteSpec.from_lists([("road", [True] * lanes)])})


def freeway(section_length: float = 500.0, onramp: bool = False, offramp: bool = True,
            ramp_length: float = 200.0) -> RoadNetwork:
    """Abstract three-lane freeway.

    With ``onramp`` a ``merge`` section adds an acceleration lane (lane 0)
    that ends at the section end. With ``offramp`` a ``diverge`` section adds
    a deceleration lane (lane 0) that continues into the one-lane ``offramp``
    while lanes 1-3 continue into ``downstream``.
    """
    L = section_length
    sections = []
    mainline = [("upstream", [True] * 3)]
    if onramp:
        sections.append(SectionSpec("upstream", L, 3, ("merge:1", "merge:2", "merge:3")))
        nxt = ("diverge:1", "diverge:2", "diverge:3") if offramp else ("downstream:0", "downstream:1", "downstream:2")
        sections.append(SectionSpec("merge", L, 4, (END,) + nxt))
        mainline.append(("merge", [False, True, True, True]))
    else:
        nxt = ("diverge:1", "diverge:2", "diverge:3") if offramp else ("downstream:0", "downstream:1", "downstream:2")
        sections.append(SectionSpec("upstream", L, 3, nxt))
    routes = {}
    if offramp:
        sections.append(SectionSpec("diverge", L, 4, ("offramp:0", "downstream:0", "downstream:1", "downstream:2")))
        sections.append(SectionSpec("offramp", ramp_length, 1, (EXIT,)))
        routes["offramp"] = RouteSpec.from_lists(mainline + [("diverge", [True, False, False, False]),
                                                             ("offramp", [True])])
        mainline = mainline + [("diverge", [False, True, True, True])]
    sections.append(SectionSpec("downstream", L, 3, (EXIT,) * 3))
    routes["mainline"] = RouteSpec.from_lists(mainline + [("downstream", [True] * 3)])
    return RoadNetwork(sections, "open", routes)
