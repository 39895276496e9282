"""Human-driver baseline: car following, yielding and speed-limit compliance.

The car-following law is a simplified Wiedemann-74 style model with three
regimes.  With ``v`` the follower speed and ``gap`` the distance to the
leader:

* emergency: ``gap < ax``, or the follower could not stop behind a leader
  braking at the same limit, brakes at ``max_decel``;
* following: ``gap <= sdx = ax + bx_mult * bx_add * sqrt(v)`` relaxes the gap
  towards ``bx = ax + bx_add * sqrt(v)`` while matching the leader speed;
* free: first-order approach to the desired speed.

When closing in on a slower leader the deceleration needed to match its
speed before the gap shrinks to ``ax`` is applied in every regime.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .corridor import MPH, ConflictZoneSpec, VehicleState
from .errors import InvalidInput, LeaderBehindFollower

__all__ = [
    "DriverParams",
    "YieldDecision",
    "car_following_accel",
    "yield_decision",
    "reduced_speed_response",
    "step_vehicle",
]


@dataclass(frozen=True)
class DriverParams:
    ax: float = 2.0
    bx_add: float = 2.0
    bx_mult: float = 3.0
    desired_speed: float = 40 * MPH
    max_accel: float = 1.5
    max_decel: float = 3.0
    tau: float = 0.5  # reaction smoothing, s
    gap_time: float = 2.0  # time to close a gap error in the following regime, s

    def __post_init__(self):
        for name in ("ax", "bx_add", "bx_mult", "desired_speed", "max_accel",
                     "max_decel", "tau", "gap_time"):
            if not getattr(self, name) > 0:
                raise InvalidInput(f"driver parameter {name} must be positive")

    def desired_gap(self, v: float) -> float:
        return self.ax + self.bx_add * math.sqrt(max(v, 0.0))

    def following_threshold(self, v: float) -> float:
        return self.ax + self.bx_mult * self.bx_add * math.sqrt(max(v, 0.0))


def car_following_accel(follower: VehicleState, leader: VehicleState | None,
                        params: DriverParams, desired_speed: float | None = None) -> float:
    """Acceleration command of a human driver, clipped to the driver limits."""
    v = follower.v
    v_des = params.desired_speed if desired_speed is None else desired_speed
    u = (v_des - v) / params.tau
    if leader is not None:
        gap = leader.p - follower.p
        if gap < 0:
            raise LeaderBehindFollower(f"leader at {leader.p} is behind follower at {follower.p}")
        if gap < params.ax:
            return -params.max_decel
        b = params.max_decel
        if v * v / (2 * b) > gap - params.ax + leader.v**2 / (2 * b):
            return -params.max_decel
        if gap <= params.following_threshold(v):
            bx = params.desired_gap(v)
            u_follow = ((leader.v - v) + (gap - bx) / params.gap_time) / params.tau
            u = min(u, u_follow)
        if v > leader.v:
            u = min(u, -(v - leader.v) ** 2 / (2.0 * (gap - params.ax + 1e-9)))
    return min(max(u, -params.max_decel), params.max_accel)


class YieldDecision(enum.Enum):
    GO = "go"
    STOP = "stop"


def yield_decision(vehicle: VehicleState, conflict_occupancy, gap_acceptance: float = 3.0,
                   now: float = 0.0) -> YieldDecision:
    """Go unless a priority vehicle is predicted in the conflict zone soon.

    ``conflict_occupancy`` holds ``(id, entry_time, exit_time)`` predictions
    in the same clock as ``now``.
    """
    horizon = now + gap_acceptance
    for _, t_in, t_out in conflict_occupancy:
        if t_in <= horizon and t_out >= now:
            return YieldDecision.STOP
    return YieldDecision.GO


def reduced_speed_response(vehicle: VehicleState, zone: ConflictZoneSpec | None,
                           route_speed: float = 40 * MPH) -> float:
    """Target speed: the zone limit while inside the zone, else the route speed.

    There is no anticipation; the target changes only once the vehicle is
    past the zone entry line.
    """
    if zone is not None and vehicle.zone_context.state == "conflict":
        return zone.zone_speed_limit
    return route_speed


def step_vehicle(p: float, v: float, u: float, dt: float) -> tuple[float, float]:
    """Semi-implicit Euler step of the double integrator; speed kept >= 0."""
    v_new = max(v + u * dt, 0.0)
    return p + v_new * dt, v_new
