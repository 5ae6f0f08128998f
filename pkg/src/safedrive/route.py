"""Route specification: ordered sections with per-lane on-route labels."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class RouteSection:
    name: str
    on_route: tuple[bool, ...]  # lane 0 is the rightmost lane

    def __post_init__(self):
        if not any(self.on_route):
            raise ValueError(f"section {self.name!r} has no on-route lane")


@dataclass(frozen=True)
class RouteSpec:
    sections: tuple[RouteSection, ...]

    @classmethod
    def from_lists(cls, items: Sequence[tuple[str, Sequence[bool]]]) -> "RouteSpec":
        return cls(tuple(RouteSection(name, tuple(bool(b) for b in lanes)) for name, lanes in items))

    def index(self, section_name: str) -> int:
        """Position of a section in the route, or -1 when the route does not visit it."""
        for i, s in enumerate(self.sections):
            if s.name == section_name:
                return i
        return -1

    def lane_changes_needed(self, section_index: int, lane: int) -> int:
        """Fewest lane changes from ``lane`` to an on-route lane of the section."""
        if not 0 <= section_index < len(self.sections):
            raise IndexError(f"section index {section_index} outside route of {len(self.sections)} sections")
        labels = self.sections[section_index].on_route
        if not 0 <= lane < len(labels):
            raise IndexError(f"lane {lane} not in section {self.sections[section_index].name!r}")
        return min(abs(lane - k) for k, ok in enumerate(labels) if ok)

    def is_on_route(self, section_index: int, lane: int) -> bool:
        return self.lane_changes_needed(section_index, lane) == 0


@dataclass(frozen=True)
class RoutePosition:
    """Where a vehicle is relative to its route.

    ``section`` indexes ``route.sections``; ``dist_to_end`` is measured to the
    end of that section.
    """

    route: RouteSpec
    section: int
    lane: int
    dist_to_end: float

    def delta(self, lane: int | None = None) -> int:
        return self.route.lane_changes_needed(self.section, self.lane if lane is None else lane)

    def lane_count(self) -> int:
        return len(self.route.sections[self.section].on_route)
