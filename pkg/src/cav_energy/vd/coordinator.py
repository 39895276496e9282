"""FIFO queues per control zone, entry-time assignment and rear-end checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..corridor import ConflictZoneSpec, SafetyParams, VehicleState, min_safe_gap
from ..errors import (
    DisjointTimeSpans,
    InvalidInput,
    OutOfOrderArrival,
    PredecessorUnassigned,
    ZeroPredecessorSpeed,
)
from .trajectory import Limits

__all__ = [
    "QueueEntry",
    "ZoneQueue",
    "register_vehicle",
    "assign_entry_time",
    "RearEndReport",
    "verify_rear_end",
    "CrossingPlan",
    "schedule_crossing",
]


@dataclass
class QueueEntry:
    id: int
    vehicle_id: int
    t0z: float
    tz: float | None = None
    v_at_tz: float | None = None  # speed when entering the conflict zone
    released: bool = False


@dataclass
class ZoneQueue:
    zone: int
    entries: list[QueueEntry] = field(default_factory=list)
    _next_id: int = 1

    @property
    def count(self) -> int:
        """Vehicles currently inside the control zone."""
        return sum(1 for e in self.entries if not e.released)

    def entry_for(self, vehicle_id: int) -> QueueEntry:
        for e in reversed(self.entries):
            if e.vehicle_id == vehicle_id:
                return e
        raise InvalidInput(f"vehicle {vehicle_id} is not registered in zone {self.zone}")

    def predecessor(self, entry: QueueEntry) -> QueueEntry | None:
        idx = self.entries.index(entry)
        return self.entries[idx - 1] if idx > 0 else None

    def release(self, vehicle_id: int) -> None:
        self.entry_for(vehicle_id).released = True


def register_vehicle(queue: ZoneQueue, vehicle: VehicleState, t: float) -> tuple[ZoneQueue, int]:
    """Append a vehicle entering the control zone at time ``t``.

    Ties with the previous arrival time are allowed.
    """
    if queue.entries and t < queue.entries[-1].t0z:
        raise OutOfOrderArrival(
            f"arrival at t={t} precedes last entry t0z={queue.entries[-1].t0z} in zone {queue.zone}"
        )
    ident = queue._next_id
    queue._next_id += 1
    queue.entries.append(QueueEntry(ident, vehicle.id, float(t)))
    return queue, ident


def assign_entry_time(
    queue: ZoneQueue,
    vehicle: VehicleState,
    zone: ConflictZoneSpec,
    safety: SafetyParams,
    limits: Limits | None = None,
    *,
    delta_speed: float | None = None,
    arrival_speed: float | None = None,
) -> float:
    """Time at which ``vehicle`` may enter the conflict zone.

    ``tz = max(min(t_prev + delta / v_prev, t0 + L/v_min), t0 + L/v0, t0 + L/v_max)``
    where the headway term is dropped for the head of the queue.  ``delta``
    is evaluated at ``delta_speed`` (default: the vehicle's entry speed).
    ``arrival_speed`` is stored as the speed at ``tz`` for the next vehicle
    (default: the zone speed limit, the fixed terminal speed).
    """
    limits = limits or Limits()
    entry = queue.entry_for(vehicle.id)
    t0, v0, L = entry.t0z, vehicle.v, zone.cz_length
    if not v0 > 0:
        raise InvalidInput(f"vehicle {vehicle.id} enters the control zone at speed {v0}")

    tz = max(t0 + L / v0, t0 + L / limits.v_max)
    prev = queue.predecessor(entry)
    if prev is not None:
        if prev.tz is None:
            raise PredecessorUnassigned(f"vehicle {prev.vehicle_id} has no entry time yet")
        if not (prev.v_at_tz and prev.v_at_tz > 0):
            raise ZeroPredecessorSpeed(f"vehicle {prev.vehicle_id} enters at zero speed")
        dspeed = v0 if delta_speed is None else delta_speed
        headway = prev.tz + min_safe_gap(safety, dspeed) / prev.v_at_tz
        cap = t0 + L / limits.v_min if limits.v_min > 0 else math.inf
        tz = max(min(headway, cap), tz)

    entry.tz = tz
    entry.v_at_tz = zone.zone_speed_limit if arrival_speed is None else arrival_speed
    return tz


@dataclass(frozen=True)
class RearEndReport:
    min_margin: float
    first_violation: float | None
    t_min_margin: float

    @property
    def ok(self) -> bool:
        return self.first_violation is None


def verify_rear_end(leader, follower, safety: SafetyParams, dt: float = 0.05,
                    *, t_from: float | None = None, t_to: float | None = None) -> RearEndReport:
    """Sample ``p_leader - p_follower - (gamma + rho*v_follower)`` over the overlap.

    Trajectories need ``t_start``, ``t_end`` and a vectorized ``sample``.
    ``t_from``/``t_to`` narrow the checked window further.
    """
    if dt <= 0:
        raise InvalidInput("dt must be positive")
    lo = max(leader.t_start, follower.t_start)
    hi = min(leader.t_end, follower.t_end)
    if t_from is not None:
        lo = max(lo, t_from)
    if t_to is not None:
        hi = min(hi, t_to)
    if hi < lo:
        raise DisjointTimeSpans(f"no common time in [{lo}, {hi}]")
    n = int(math.floor((hi - lo) / dt + 1e-9))
    ts = lo + dt * np.arange(n + 1)
    if ts[-1] < hi - 1e-12:
        ts = np.append(ts, hi)
    pk, _, _ = leader.sample(ts)
    pi, vi, _ = follower.sample(ts)
    margin = pk - pi - (safety.gamma + safety.rho * vi)
    # round-off at exact equality must not register as a violation
    bad = np.nonzero(margin < -1e-9)[0]
    k = int(np.argmin(margin))
    return RearEndReport(
        min_margin=float(margin[k]),
        first_violation=float(ts[bad[0]]) if bad.size else None,
        t_min_margin=float(ts[k]),
    )


@dataclass(frozen=True)
class CrossingPlan:
    tz: float
    trajectory: object  # CubicTrajectory in the zone-local frame (p=0 at entry)
    delay: float  # extra time added beyond the entry-time formula


def schedule_crossing(
    queue: ZoneQueue,
    vehicle: VehicleState,
    zone: ConflictZoneSpec,
    safety: SafetyParams,
    limits: Limits,
    ahead=(),
    *,
    merging=(),
    vf: float | None = None,
    delta_speed: float | None = None,
    step: float = 0.2,
    max_delay: float = 60.0,
    dt_check: float = 0.05,
    cruise_distance: float = 0.0,
    speed_fractions=(0.75, 0.5, 0.25),
) -> CrossingPlan:
    """Entry time plus trajectory that keeps the rear-end margin against ``ahead``.

    The terminal speed defaults to the zone speed limit.
    ``ahead`` holds trajectories (zone-local frame, extended past their
    own entry time) of vehicles that must stay in front over the whole
    control zone; ``merging`` holds vehicles of another stream, which only
    need the margin from the conflict entry on.  The formula
    value of ``tz`` is tried first and pushed back by ``step`` until the
    solved trajectory clears every one of them; with ``cruise_distance``
    the check also covers cruising that far past the conflict entry (the
    traverse of the conflict zone).

    If no delay works at the preferred terminal speed, the entry speed (when
    lower), the predecessor's conflict-entry speed and then ``speed_fractions`` of the preferred speed
    (not below ``v_min``) are tried: a vehicle that has to wait longer
    cannot always slow down and speed up again within the control zone.
    Raises the last solver error, or ``Infeasible`` if nothing works.
    """
    from ..errors import Infeasible

    entry = queue.entry_for(vehicle.id)
    if vf is not None:
        speeds = [vf]
    else:
        speeds = [zone.zone_speed_limit]
        if vehicle.v < zone.zone_speed_limit:
            # the entry-time floor t0 + L/v0 caps the mean crossing speed at
            # v0, which can make the zone speed unreachable for slow entrants
            speeds.append(max(vehicle.v, limits.v_min))
        prev = queue.predecessor(entry)
        if prev is not None and prev.v_at_tz is not None and prev.v_at_tz < speeds[-1]:
            # closing in on a slower vehicle: match its speed at the conflict zone
            speeds.append(prev.v_at_tz)
        for f in speed_fractions:
            v = max(f * speeds[0], limits.v_min)
            if v < speeds[-1] - 1e-9:
                speeds.append(v)
    err: Exception = Infeasible("no safe entry time")
    for speed in speeds:
        try:
            return _schedule_at_speed(queue, entry, vehicle, zone, safety, limits, ahead, merging,
                                      speed, delta_speed, step, max_delay, dt_check,
                                      cruise_distance / speed)
        except Infeasible as exc:
            err = exc
    entry.tz = None
    raise err


def _schedule_at_speed(queue, entry, vehicle, zone, safety, limits, ahead, merging, vf,
                       delta_speed, step, max_delay, dt_check, cruise_after=0.0,
                       resolution=0.01):
    from ..errors import Infeasible, ModelError
    from .trajectory import BoundaryConditions, _distance_bounds, piece_arcs

    tz0 = assign_entry_time(queue, vehicle, zone, safety, limits,
                            delta_speed=vf if delta_speed is None else delta_speed,
                            arrival_speed=vf)

    def attempt(tz):
        bc = BoundaryConditions(entry.t0z, 0.0, vehicle.v, tz, zone.cz_length, vf)
        traj = piece_arcs(bc, limits)
        checked = traj.with_cruise(traj.tf + cruise_after) if cruise_after > 0 else traj
        if (all(verify_rear_end(other, checked, safety, dt_check).ok for other in ahead)
                and all(verify_rear_end(other, checked, safety, dt_check, t_from=tz).ok
                        for other in merging)):
            return traj
        return None

    last_err: Exception | None = None
    n_max = int(max_delay / step)
    for k in range(n_max + 1):
        tz = tz0 + k * step
        try:
            traj = attempt(tz)
        except ModelError as exc:
            last_err = exc
            # the slowest profile only covers more ground as tz grows
            try:
                bc = BoundaryConditions(entry.t0z, 0.0, vehicle.v, tz, zone.cz_length, vf)
                if bc.distance < _distance_bounds(bc, limits)[0]:
                    break
            except ModelError:
                pass
            continue
        if traj is not None:
            if k > 0:
                # tighten the delay inside the last step; only checked points are kept
                lo, hi = tz - step, tz
                while hi - lo > resolution:
                    mid = 0.5 * (lo + hi)
                    try:
                        found = attempt(mid)
                    except ModelError:
                        found = None
                    if found is None:
                        lo = mid
                    else:
                        hi, traj = mid, found
                tz = hi
            entry.tz = tz
            return CrossingPlan(tz, traj, tz - tz0)
        last_err = Infeasible(f"no safe entry within {k * step:.1f} s of the formula time")
    if not isinstance(last_err, Infeasible):
        last_err = Infeasible(str(last_err))
    raise last_err
