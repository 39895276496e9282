"""Corridor geometry, zone lookup and the rear-end safe distance.

Positions are longitudinal coordinates in meters along the main route.
Side (congestion) routes are straight feeders that end at the entry line of
the conflict zone they feed; their last ``cz_length`` meters form that
zone's control zone.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import (
    BadLimits,
    InvalidInput,
    NegativeSpeed,
    OverlappingZones,
    PositionOutOfRange,
    ZoneOutOfBounds,
)

MPH = 0.44704  # m/s per mph

__all__ = [
    "MPH",
    "ZoneKind",
    "Route",
    "ConflictZoneSpec",
    "Corridor",
    "ZoneContext",
    "SafetyParams",
    "VehicleState",
    "build_corridor",
    "load_corridor",
    "default_corridor_config",
    "locate",
    "min_safe_gap",
]


class ZoneKind(enum.Enum):
    MERGE = 1
    SRZ = 2
    ROUNDABOUT = 3


class Route(str, enum.Enum):
    MAIN = "main"
    HIGHWAY = "highway"
    SRZ_SIDE = "srz_side"
    ROUNDABOUT_SIDE = "roundabout_side"


@dataclass(frozen=True)
class ConflictZoneSpec:
    kind: ZoneKind
    cz_entry_pos: float
    cz_length: float = 100.0
    zone_length: float = 30.0
    zone_speed_limit: float = 40 * MPH
    side_route_id: Route | None = None
    side_route_length: float = 300.0
    side_route_speed: float = 40 * MPH
    # which stream holds right of way under the human-driver priority rule
    priority: str = "side"

    @property
    def conflict_entry(self) -> float:
        return self.cz_entry_pos + self.cz_length

    @property
    def conflict_exit(self) -> float:
        return self.cz_entry_pos + self.cz_length + self.zone_length


@dataclass(frozen=True)
class Corridor:
    total_length: float = 1500.0
    zones: tuple[ConflictZoneSpec, ...] = ()
    v_min: float = 1.0
    v_max: float = 40 * MPH
    u_min: float = -3.0
    u_max: float = 1.5
    main_speed: float = 40 * MPH

    def zone(self, z: int) -> ConflictZoneSpec:
        """Zone by its 1-based index."""
        return self.zones[z - 1]

    def zone_for_side_route(self, route: Route) -> int:
        for z, spec in enumerate(self.zones, start=1):
            if spec.side_route_id == route:
                return z
        raise KeyError(route)


@dataclass(frozen=True)
class ZoneContext:
    state: str  # "free" | "control" | "conflict"
    zone: int | None = None

    def __repr__(self) -> str:
        if self.zone is None:
            return "Free"
        name = "InControlZone" if self.state == "control" else "InConflictZone"
        return f"{name}({self.zone})"


FREE = ZoneContext("free")


def in_control_zone(z: int) -> ZoneContext:
    return ZoneContext("control", z)


def in_conflict_zone(z: int) -> ZoneContext:
    return ZoneContext("conflict", z)


@dataclass(frozen=True)
class SafetyParams:
    gamma: float = 2.0  # standstill distance, m
    rho: float = 1.2  # minimum time gap, s

    def __post_init__(self):
        if not (self.gamma > 0 and self.rho > 0):
            raise InvalidInput(f"safety parameters must be positive: {self}")


@dataclass
class VehicleState:
    id: int
    route: Route = Route.MAIN
    p: float = 0.0
    v: float = 0.0
    u: float = 0.0
    zone_context: ZoneContext = FREE
    # zone index -> [t0z, tz, tfz]
    timestamps: dict[int, list[float]] = field(default_factory=dict)


def min_safe_gap(params: SafetyParams, v: float) -> float:
    """Speed-dependent minimum following distance ``gamma + rho * v``."""
    if v < 0:
        raise NegativeSpeed(f"speed {v} < 0")
    return params.gamma + params.rho * v


def locate(corridor: Corridor, p: float) -> ZoneContext:
    if p < 0 or p > corridor.total_length:
        raise PositionOutOfRange(f"position {p} outside [0, {corridor.total_length}]")
    for z, spec in enumerate(corridor.zones, start=1):
        if spec.cz_entry_pos <= p < spec.conflict_entry:
            return in_control_zone(z)
        if spec.conflict_entry <= p < spec.conflict_exit:
            return in_conflict_zone(z)
    return FREE


def default_corridor_config() -> dict[str, Any]:
    """Mcity-like corridor: on-ramp merge, speed reduction zone, roundabout."""
    return {
        "total_length": 1500.0,
        "v_min": 1.0,
        "v_max": 40 * MPH,
        "u_min": -3.0,
        "u_max": 1.5,
        "main_speed": 40 * MPH,
        "zones": [
            {
                "kind": "merge",
                "cz_entry_pos": 150.0,
                "cz_length": 100.0,
                "zone_length": 30.0,
                "zone_speed_limit": 40 * MPH,
                "side_route": "highway",
                "side_route_length": 300.0,
                "side_route_speed": 40 * MPH,
                "priority": "side",
            },
            {
                "kind": "srz",
                "cz_entry_pos": 600.0,
                "cz_length": 100.0,
                "zone_length": 125.0,
                "zone_speed_limit": 18.6 * MPH,
                "side_route": "srz_side",
                "side_route_length": 300.0,
                "side_route_speed": 40 * MPH,
                "priority": "main",
            },
            {
                "kind": "roundabout",
                "cz_entry_pos": 1150.0,
                "cz_length": 100.0,
                "zone_length": 30.0,
                "zone_speed_limit": 25 * MPH,
                "side_route": "roundabout_side",
                "side_route_length": 300.0,
                "side_route_speed": 25 * MPH,
                "priority": "side",
            },
        ],
    }


_ZONE_KEYS = {
    "kind", "cz_entry_pos", "cz_length", "zone_length", "zone_speed_limit",
    "side_route", "side_route_length", "side_route_speed", "priority",
}


def _parse_zone(i: int, raw: Mapping[str, Any]) -> ConflictZoneSpec:
    unknown = set(raw) - _ZONE_KEYS
    if unknown:
        raise InvalidInput(f"zone {i}: unknown keys {sorted(unknown)}")
    try:
        kind = ZoneKind[str(raw["kind"]).upper()]
        entry = float(raw["cz_entry_pos"])
    except KeyError as exc:
        raise InvalidInput(f"zone {i}: missing or bad field {exc}") from None
    default_len = 125.0 if kind is ZoneKind.SRZ else 30.0
    side = raw.get("side_route")
    priority = str(raw.get("priority", "main" if kind is ZoneKind.SRZ else "side"))
    if priority not in ("main", "side"):
        raise InvalidInput(f"zone {i}: priority must be 'main' or 'side'")
    return ConflictZoneSpec(
        kind=kind,
        cz_entry_pos=entry,
        cz_length=float(raw.get("cz_length", 100.0)),
        zone_length=float(raw.get("zone_length", default_len)),
        zone_speed_limit=float(raw.get("zone_speed_limit", 40 * MPH)),
        side_route_id=Route(side) if side is not None else None,
        side_route_length=float(raw.get("side_route_length", 300.0)),
        side_route_speed=float(raw.get("side_route_speed", 40 * MPH)),
        priority=priority,
    )


def build_corridor(config: str | Mapping[str, Any] | None = None) -> Corridor:
    """Build and validate a corridor from YAML text or an already-parsed mapping.

    ``None`` gives the default three-zone corridor.
    """
    if config is None:
        config = default_corridor_config()
    elif isinstance(config, str):
        try:
            config = yaml.safe_load(config)
        except yaml.YAMLError as exc:
            raise InvalidInput(f"corridor config does not parse: {exc}") from None
    if not isinstance(config, Mapping):
        raise InvalidInput("corridor config must be a mapping")
    raw_zones = config.get("zones") or []
    if not raw_zones:
        raise InvalidInput("corridor needs at least one zone")

    zones = tuple(_parse_zone(i, z) for i, z in enumerate(raw_zones, start=1))
    corridor = Corridor(
        total_length=float(config.get("total_length", 1500.0)),
        zones=zones,
        v_min=float(config.get("v_min", 1.0)),
        v_max=float(config.get("v_max", 40 * MPH)),
        u_min=float(config.get("u_min", -3.0)),
        u_max=float(config.get("u_max", 1.5)),
        main_speed=float(config.get("main_speed", config.get("v_max", 40 * MPH))),
    )
    _validate(corridor)
    return corridor


def _validate(c: Corridor) -> None:
    if not (c.u_min < 0 < c.u_max):
        raise BadLimits(f"need u_min < 0 < u_max, got {c.u_min}, {c.u_max}")
    if not (0 <= c.v_min < c.v_max):
        raise BadLimits(f"need 0 <= v_min < v_max, got {c.v_min}, {c.v_max}")
    if c.total_length <= 0:
        raise BadLimits("total_length must be positive")
    prev_end = None
    for z, spec in enumerate(c.zones, start=1):
        if spec.cz_length <= 0 or spec.zone_length < 0:
            raise BadLimits(f"zone {z}: control zone length must be positive")
        if spec.zone_speed_limit > c.v_max + 1e-12 or spec.zone_speed_limit <= 0:
            raise BadLimits(f"zone {z}: speed limit {spec.zone_speed_limit} not in (0, v_max]")
        if spec.cz_entry_pos < 0 or spec.conflict_exit > c.total_length:
            raise ZoneOutOfBounds(f"zone {z} spans [{spec.cz_entry_pos}, {spec.conflict_exit}]")
        if spec.side_route_id is not None and spec.side_route_length < spec.cz_length:
            raise BadLimits(f"zone {z}: side route shorter than its control zone")
        if prev_end is not None and spec.cz_entry_pos < prev_end:
            raise OverlappingZones(
                f"zone {z} control zone starts at {spec.cz_entry_pos}, "
                f"before zone {z - 1} ends at {prev_end}"
            )
        prev_end = spec.conflict_exit


def load_corridor(path: str | Path) -> Corridor:
    return build_corridor(Path(path).read_text())
