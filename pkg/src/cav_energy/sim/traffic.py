"""Seeded Poisson traffic generation per route."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..corridor import MPH, Route, SafetyParams, min_safe_gap
from ..errors import InvalidInput

__all__ = ["TRAFFIC_LEVELS", "Arrival", "spawn_traffic", "flows_for_level"]

# vehicles per hour, columns as labeled in the published traffic table
# (the "low" column carries the largest volumes)
TRAFFIC_LEVELS: dict[str, dict[Route, float]] = {
    "low": {Route.MAIN: 500, Route.HIGHWAY: 800, Route.SRZ_SIDE: 1400, Route.ROUNDABOUT_SIDE: 700},
    "medium": {Route.MAIN: 400, Route.HIGHWAY: 600, Route.SRZ_SIDE: 1100, Route.ROUNDABOUT_SIDE: 550},
    "high": {Route.MAIN: 300, Route.HIGHWAY: 400, Route.SRZ_SIDE: 800, Route.ROUNDABOUT_SIDE: 400},
}

_ROUTE_ORDER = list(Route)


@dataclass(frozen=True)
class Arrival:
    t: float
    route: Route
    id: int


def flows_for_level(level: str) -> dict[Route, float]:
    try:
        return dict(TRAFFIC_LEVELS[level.lower()])
    except KeyError:
        raise InvalidInput(f"unknown traffic level {level!r}") from None


def spawn_traffic(flows, duration: float, seed: int, *, speeds=None,
                  safety: SafetyParams | None = None) -> list[Arrival]:
    """Poisson arrivals per route with rate ``vph / 3600``.

    Each route draws from its own generator seeded by ``(seed, route)``, so
    changing one flow leaves the other routes' arrivals untouched.  An
    arrival closer than the safe time headway ``(gamma + rho*v) / v`` to the
    previous one on the route (at the route speed ``v``) is pushed back to
    that headway.
    """
    if duration < 0:
        raise InvalidInput("duration must be non-negative")
    safety = safety or SafetyParams()
    speeds = speeds or {}
    events = []
    for route, vph in flows.items():
        route = Route(route)
        if vph < 0:
            raise InvalidInput(f"flow on {route.value} is negative")
        if vph == 0:
            continue
        v = float(speeds.get(route, 40 * MPH))
        headway = min_safe_gap(safety, v) / v
        rng = np.random.default_rng([seed, _ROUTE_ORDER.index(route)])
        t = 0.0
        last = -np.inf
        while True:
            t += rng.exponential(3600.0 / vph)
            t_spawn = max(t, last + headway)
            if t_spawn >= duration:
                break
            events.append((t_spawn, _ROUTE_ORDER.index(route), route))
            last = t_spawn
    events.sort(key=lambda e: (e[0], e[1]))
    return [Arrival(float(t), route, i) for i, (t, _, route) in enumerate(events, start=1)]
