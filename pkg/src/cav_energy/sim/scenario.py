"""Fixed-step corridor simulation with baseline or coordinated driving.

Every vehicle is a point on its route.  Main-route positions run along the
corridor; side-route vehicles travel a straight feeder that ends at the
entry line of their conflict zone and leave the network once they clear
that zone.  Around a zone both streams share a zone-local coordinate
``x`` with the control-zone entry at 0 and the conflict entry at
``cz_length``, which is what the car-following, yielding, scheduling and
safety monitors compare.

With vehicle coordination active every vehicle that reaches a control zone
joins the zone's first-in-first-out queue and follows a planned trajectory
up to the conflict entry, then cruises at its terminal speed through the
conflict zone.  Everywhere else vehicles follow the human-driver model.
Powertrain energy use is evaluated after the traffic run, in one batch
over the recorded speed traces of the completed main-route vehicles.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..corridor import (
    Corridor,
    Route,
    SafetyParams,
    VehicleState,
    build_corridor,
    in_conflict_zone,
    min_safe_gap,
)
from ..driver import (
    DriverParams,
    YieldDecision,
    car_following_accel,
    reduced_speed_response,
    yield_decision,
)
from ..errors import InvalidInput, ModelError, ParetoTableMissing
from ..powertrain.maps import PowertrainMaps, synthesize_default_maps
from ..powertrain.model import mpge, simulate_powertrain
from ..powertrain.params import MILE, PowertrainConfig
from ..vd.coordinator import ZoneQueue, register_vehicle, schedule_crossing
from ..vd.trajectory import Arc, ArcKind, CubicTrajectory, Limits
from .metrics import Aggregates, collect_metrics
from .traffic import Arrival, flows_for_level, spawn_traffic

__all__ = [
    "ControllerCase",
    "ScenarioConfig",
    "VehicleRecord",
    "SimResult",
    "run_scenario",
]

log = logging.getLogger(__name__)

STOP_SPEED = 0.5  # m/s; dropping below this counts as a stop
MARGIN_TOL = 1e-6  # m; round-off allowance of the safety monitors
HORIZON = 600.0  # s; cruise extrapolation of vehicles ahead when scheduling
APPROACH = 200.0  # m before and after a zone where coordinated vehicles keep the safe gap


class ControllerCase(str, enum.Enum):
    BASELINE = "baseline"
    VD = "vd"
    PT = "pt"
    VDPT = "vdpt"

    @property
    def has_vd(self) -> bool:
        return self in (ControllerCase.VD, ControllerCase.VDPT)

    @property
    def has_pt(self) -> bool:
        return self in (ControllerCase.PT, ControllerCase.VDPT)


@dataclass
class ScenarioConfig:
    traffic_level: str = "high"
    flows: dict | None = None  # vph per route; overrides traffic_level
    arrivals: tuple | None = None  # explicit ((t, route), ...); overrides flows
    controller_case: ControllerCase = ControllerCase.BASELINE
    dt: float = 0.1
    duration: float = 1800.0
    seed: int = 0
    corridor: Corridor = field(default_factory=build_corridor)
    driver: DriverParams = field(default_factory=DriverParams)
    safety: SafetyParams = field(default_factory=SafetyParams)
    powertrain: PowertrainConfig = field(default_factory=PowertrainConfig)
    trace_stride: float = 1.0  # s between stored speed samples

    def __post_init__(self):
        self.controller_case = ControllerCase(self.controller_case)
        if not 0 < self.dt <= 0.5:
            raise InvalidInput(f"dt {self.dt} outside (0, 0.5]")
        if not self.duration > 0:
            raise InvalidInput("duration must be positive")
        if self.trace_stride < self.dt - 1e-12:
            raise InvalidInput("trace stride must be at least one step")
        if self.flows is not None:
            self.flows = {Route(k): float(v) for k, v in self.flows.items()}
            if any(v < 0 for v in self.flows.values()):
                raise InvalidInput("flows must be non-negative")
        else:
            flows_for_level(self.traffic_level)
        if self.arrivals is not None:
            self.arrivals = tuple((float(t), Route(r)) for t, r in self.arrivals)

    def route_flows(self) -> dict:
        return dict(self.flows) if self.flows is not None else flows_for_level(self.traffic_level)

    def to_dict(self) -> dict:
        """JSON-ready echo of the configuration."""
        corridor = asdict(self.corridor)
        for z in corridor["zones"]:
            z["kind"] = z["kind"].name.lower()
            z["side_route_id"] = z["side_route_id"].value if z["side_route_id"] else None
        pt = asdict(self.powertrain)
        pt["policy"]["mode"] = self.powertrain.policy.mode.value
        return {
            "traffic_level": self.traffic_level,
            "flows": {r.value: v for r, v in self.route_flows().items()},
            "arrivals": [[t, r.value] for t, r in self.arrivals] if self.arrivals else None,
            "controller_case": self.controller_case.value,
            "dt": self.dt,
            "duration": self.duration,
            "seed": self.seed,
            "trace_stride": self.trace_stride,
            "corridor": corridor,
            "driver": asdict(self.driver),
            "safety": asdict(self.safety),
            "powertrain": pt,
        }


@dataclass
class VehicleRecord:
    id: int
    route: str
    spawn_time: float
    exit_time: float
    travel_time: float
    distance_miles: float
    fuel_gal: float | None
    net_kwh: float | None
    mpge: float | None
    stops: int
    fallbacks: int
    trace_dt: float
    speed_trace: np.ndarray  # m/s, sampled every trace_dt from spawn

    def row(self) -> dict:
        return {k: getattr(self, k) for k in _RECORD_COLS}


@dataclass
class SimResult:
    config: ScenarioConfig
    records: list[VehicleRecord]
    aggregates: Aggregates | None  # None when no main-route vehicle finished
    en_route: int  # vehicles still driving at the end (excluded)
    unspawned: int  # arrivals still waiting for room at the entry
    monitors: dict
    plans: list[dict]  # one per coordinated crossing
    events: list[dict]  # fallbacks and other logged events

    @property
    def empty(self) -> bool:
        return self.aggregates is None

    @property
    def mean_travel_time(self) -> float | None:
        tt = [r.travel_time for r in self.records]
        return float(np.mean(tt)) if tt else None

    def summary(self) -> dict:
        return {
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "empty": self.empty,
            "aggregates": self.aggregates.to_dict() if self.aggregates else None,
            "mean_travel_time": self.mean_travel_time,
            "vehicles_completed": len(self.records),
            "vehicles_en_route": self.en_route,
            "arrivals_unspawned": self.unspawned,
            "monitors": self.monitors,
            "events": self.events,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"

    def records_csv(self) -> str:
        buf = io.StringIO()
        cols = list(_RECORD_COLS)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"# seed={self.config.seed} case={self.config.controller_case.value}"])
        w.writerow(cols)
        for r in self.records:
            row = r.row()
            w.writerow([_fmt(row[c]) for c in cols])
        return buf.getvalue()

    def traces_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"# seed={self.config.seed} case={self.config.controller_case.value}"])
        w.writerow(["id", "route", "t", "v"])
        for r in self.records:
            for j, v in enumerate(r.speed_trace):
                w.writerow([r.id, r.route, _fmt(r.spawn_time + j * r.trace_dt), _fmt(float(v))])
        return buf.getvalue()


_RECORD_COLS = ("id", "route", "spawn_time", "exit_time", "travel_time", "distance_miles",
                "fuel_gal", "net_kwh", "mpge", "stops", "fallbacks")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


# ------------------------------------------------------------------ vehicles


class _Vehicle:
    __slots__ = ("id", "route", "zone_of_route", "s", "v", "u", "spawn_t", "trace",
                 "plan", "stops", "fallbacks", "z", "x", "region", "moving",
                 "committed", "done_t", "exit_s")

    def __init__(self, ident, route, zone_of_route, v, t, exit_s):
        self.id = ident
        self.route = route
        self.zone_of_route = zone_of_route  # zone fed by a side route, None on main
        self.s = 0.0
        self.v = v
        self.u = 0.0
        self.spawn_t = t
        self.trace = [v]
        self.plan = None  # _Plan while coordinated
        self.stops = 0
        self.fallbacks = 0
        self.z = None  # zone whose control/conflict region holds the vehicle
        self.x = 0.0  # zone-local coordinate in that zone
        self.region = None  # "control" | "conflict" | None
        self.moving = True
        self.committed = set()  # zones where the driver already decided to go
        self.done_t = None
        self.exit_s = exit_s


@dataclass
class _Plan:
    zone: int
    traj: CubicTrajectory  # zone-local, includes the conflict-zone cruise
    t_exit: float


class _World:
    """Geometry helpers shared by the step loop."""

    def __init__(self, corridor: Corridor):
        self.c = corridor
        self.zones = corridor.zones
        self.side_zone = {spec.side_route_id: z for z, spec in enumerate(self.zones, start=1)
                          if spec.side_route_id is not None}

    def route_speed(self, route: Route) -> float:
        if route is Route.MAIN:
            return self.c.main_speed
        return self.c.zone(self.side_zone[route]).side_route_speed

    def exit_s(self, route: Route) -> float:
        if route is Route.MAIN:
            return self.c.total_length
        spec = self.c.zone(self.side_zone[route])
        return spec.side_route_length + spec.zone_length

    def locate(self, veh: _Vehicle) -> None:
        veh.z, veh.region = None, None
        if veh.route is Route.MAIN:
            for z, spec in enumerate(self.zones, start=1):
                if spec.cz_entry_pos <= veh.s < spec.conflict_exit:
                    veh.z = z
                    veh.x = veh.s - spec.cz_entry_pos
                    break
        else:
            spec = self.c.zone(veh.zone_of_route)
            x = veh.s - (spec.side_route_length - spec.cz_length)
            if x >= 0:
                veh.z, veh.x = veh.zone_of_route, x
        if veh.z is not None:
            spec = self.c.zone(veh.z)
            veh.region = "control" if veh.x < spec.cz_length else "conflict"

    def local_x(self, veh: _Vehicle, z: int, s: float | None = None) -> float:
        s = veh.s if s is None else s
        spec = self.c.zone(z)
        if veh.route is Route.MAIN:
            return s - spec.cz_entry_pos
        return s - (spec.side_route_length - spec.cz_length)

    def route_s(self, veh: _Vehicle, z: int, x: float) -> float:
        spec = self.c.zone(z)
        if veh.route is Route.MAIN:
            return x + spec.cz_entry_pos
        return x + spec.side_route_length - spec.cz_length

    def streams_at(self, z: int) -> tuple[Route, ...]:
        spec = self.c.zone(z)
        return (Route.MAIN,) if spec.side_route_id is None else (Route.MAIN, spec.side_route_id)

    def has_priority(self, route: Route, z: int) -> bool:
        spec = self.c.zone(z)
        is_side = route is not Route.MAIN
        return (spec.priority == "side") == is_side


def _cruise(t0: float, x0: float, v0: float, horizon: float = HORIZON) -> CubicTrajectory:
    return CubicTrajectory((Arc(t0, t0 + horizon, ArcKind.UNCONSTRAINED, 0.0, 0.0, v0, x0),))


# ------------------------------------------------------------------ runner


def run_scenario(config: ScenarioConfig, maps: PowertrainMaps | None = None,
                 controller=None) -> SimResult:
    """Run one scenario and evaluate the powertrain of finished vehicles.

    ``controller`` is a fitted ``ParetoSplitController``; it is required
    when the case includes the powertrain controller.
    """
    case = config.controller_case
    if case.has_pt and controller is None:
        raise ParetoTableMissing("the powertrain-controller case needs a Pareto table")
    maps = maps or synthesize_default_maps()
    if controller is not None and case.has_pt and controller.table_.maps_fingerprint != maps.fingerprint():
        from ..errors import FingerprintMismatch

        raise FingerprintMismatch("Pareto table was built for different efficiency maps")

    sim = _Simulation(config)
    sim.run()
    return sim.finish(maps, controller)


class _Simulation:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.world = _World(cfg.corridor)
        self.limits = Limits.from_corridor(cfg.corridor)
        self.vd = cfg.controller_case.has_vd
        if cfg.arrivals is not None:
            arr = sorted(cfg.arrivals, key=lambda a: a[0])
            self.arrivals = [Arrival(t, r, i) for i, (t, r) in enumerate(arr, start=1)]
        else:
            speeds = {r: self.world.route_speed(r) for r in Route
                      if r is Route.MAIN or r in self.world.side_zone}
            flows = {r: f for r, f in cfg.route_flows().items() if r in speeds}
            self.arrivals = spawn_traffic(flows, cfg.duration, cfg.seed, speeds=speeds,
                                          safety=cfg.safety)
        self.pending: dict[Route, list[Arrival]] = {}
        self.streams: dict[Route, list[_Vehicle]] = {}
        self.queues = {z: ZoneQueue(z) for z in range(1, len(self.world.zones) + 1)}
        self.finished: list[_Vehicle] = []
        self.plans: list[dict] = []
        self.events: list[dict] = []
        # (interpolated line-crossing time, vehicle id) per zone
        self.order_cz: dict[int, list[tuple]] = {z: [] for z in self.queues}
        self.order_conflict: dict[int, list[tuple]] = {z: [] for z in self.queues}
        self.mon = {
            "rear_end_violations": 0,
            "rear_end_vehicles": set(),
            "lateral_violations": 0,
            "lateral_pairs": set(),
            "collisions": 0,
            "stops_in_control_zones": 0,
            "srz_control_zone_stops": 0,
            "cz_speed_sum": 0.0,
            "cz_speed_count": 0,
            "srz_entry_speed_max": 0.0,
            "min_rear_end_margin": math.inf,
        }
        self.t = 0.0
        self.k = 0

    # ---------------------------------------------------------------- loop

    def run(self):
        cfg = self.cfg
        n_steps = int(round(cfg.duration / cfg.dt))
        next_arrival = 0
        for k in range(n_steps):
            self.k = k
            self.t = k * cfg.dt
            while next_arrival < len(self.arrivals) and self.arrivals[next_arrival].t <= self.t + 1e-9:
                a = self.arrivals[next_arrival]
                self.pending.setdefault(a.route, []).append(a)
                next_arrival += 1
            self._spawn()
            self._step()
        self.t = n_steps * cfg.dt
        self.unspawned = sum(len(p) for p in self.pending.values()) + len(self.arrivals) - next_arrival

    def _spawn(self):
        safety = self.cfg.safety
        for route in sorted(self.pending, key=lambda r: list(Route).index(r)):
            queue = self.pending[route]
            while queue:
                stream = self.streams.setdefault(route, [])
                v = self.world.route_speed(route)
                if stream:
                    last = stream[-1]
                    v = min(v, last.v)
                    if last.s < min_safe_gap(safety, v) or v <= 0:
                        break
                a = queue.pop(0)
                zone = self.world.side_zone.get(route)
                stream.append(_Vehicle(a.id, route, zone, v, self.t, self.world.exit_s(route)))

    def _all(self):
        for route in sorted(self.streams, key=lambda r: list(Route).index(r)):
            yield from self.streams[route]

    def _step(self):
        cfg, world = self.cfg, self.world
        dt = cfg.dt
        t_next = self.t + dt
        vehicles = list(self._all())
        for veh in vehicles:
            world.locate(veh)
        conflict_occ = self._conflict_occupants(vehicles)

        # new states from the states at t (synchronous update)
        new = {}
        for veh in vehicles:
            plan = veh.plan
            if plan is not None and self.t < plan.t_exit - 1e-9:
                # the plan also covers the step that crosses the exit line
                x, v, _ = plan.traj.evaluate(min(t_next, plan.traj.tf))
                new[veh.id] = (world.route_s(veh, plan.zone, x), max(v, 0.0))
                continue
            if plan is not None:
                veh.plan = None
            u = self._baseline_accel(veh, conflict_occ)
            v_new = max(veh.v + u * dt, 0.0)
            new[veh.id] = (veh.s + v_new * dt, v_new)

        crossings = []
        for veh in vehicles:
            s_old, v_old = veh.s, veh.v
            s_new, v_new = new[veh.id]
            veh.u = (v_new - v_old) / dt
            veh.s, veh.v = s_new, v_new
            veh.trace.append(v_new)
            self._zone_lines(veh, s_old, s_new, crossings)

        if self.vd and crossings:
            crossings.sort(key=lambda c: (c[0], c[1].id))
            for t_c, veh, z, v_c in crossings:
                self._coordinate(veh, z, t_c, v_c, t_next)

        for veh in vehicles:
            world.locate(veh)
        self._monitor(vehicles)

        for veh in vehicles:
            if veh.s >= veh.exit_s:
                veh.done_t = t_next
                self.streams[veh.route].remove(veh)
                self.finished.append(veh)

    # ---------------------------------------------------------------- driving

    def _conflict_occupants(self, vehicles):
        occ: dict[int, list[_Vehicle]] = {}
        for veh in vehicles:
            if veh.region is not None:
                occ.setdefault(veh.z, []).append(veh)
        return occ

    def _leader_gap(self, veh: _Vehicle, region_occ, merged_only: bool = False):
        """Nearest vehicle ahead: same-stream predecessor or a cross-stream vehicle
        already inside the shared conflict zone.

        With ``merged_only`` cross-stream vehicles count only once ``veh`` is
        in the conflict zone itself, i.e. in the same lane.
        """
        stream = self.streams[veh.route]
        idx = stream.index(veh)
        best = None
        if idx > 0:
            lead = stream[idx - 1]
            best = (lead.s - veh.s, lead)
        if veh.z is not None and not (merged_only and veh.region != "conflict"):
            for other in region_occ.get(veh.z, ()):
                if other.route is veh.route or other.region != "conflict":
                    continue
                gap = other.x - veh.x
                if gap > 0 and (best is None or gap < best[0]):
                    best = (gap, other)
        return best

    def _baseline_accel(self, veh: _Vehicle, region_occ) -> float:
        cfg, world = self.cfg, self.world
        params = cfg.driver
        route_speed = world.route_speed(veh.route)
        v_des = route_speed
        if veh.z is not None and veh.region == "conflict":
            spec = world.c.zone(veh.z)
            state = VehicleState(veh.id, veh.route, veh.s, veh.v, zone_context=in_conflict_zone(veh.z))
            v_des = min(reduced_speed_response(state, spec, route_speed), route_speed)
        me = VehicleState(veh.id, veh.route, 0.0, veh.v)
        lead = self._leader_gap(veh, region_occ)
        leader = None
        if lead is not None:
            gap, other = lead
            if gap < 0:
                self.mon["collisions"] += 1
                return -params.max_decel
            rule = self._gap_rule(veh) if self.vd else None
            if rule == "approach":
                # hand over at the safe gap: the driver's standstill margin ax
                # then sits on top of the speed-dependent part rho * v
                gap -= cfg.safety.rho * veh.v
            elif rule == "depart":
                # keep the coordinated spacing: the driver's desired gap maps onto delta
                gap += params.desired_gap(veh.v) - min_safe_gap(cfg.safety, veh.v)
            leader = VehicleState(other.id, other.route, max(gap, 0.0), other.v)
        if veh.z is not None and veh.region == "control" and not world.has_priority(veh.route, veh.z):
            stop_gap = self._yield_gap(veh, region_occ)
            if stop_gap is not None and (leader is None or stop_gap < leader.p):
                leader = VehicleState(-1, veh.route, stop_gap, 0.0)
        return car_following_accel(me, leader, params, v_des)

    def _gap_rule(self, veh: _Vehicle) -> str | None:
        """Spacing rule of a coordinated vehicle driving on its own.

        ``"approach"`` inside a zone region, on a feeder, or within
        ``APPROACH`` before a control zone: the gap opens to at least the safe
        gap.  ``"depart"`` within ``APPROACH`` after a conflict exit: the
        vehicle keeps the safe gap it left the zone with, so it does not brake
        while the vehicles behind it still follow their plans.
        """
        if veh.z is not None:
            return "approach"
        if veh.route is not Route.MAIN:
            return "approach"  # feeders end in their control zone
        for spec in self.world.zones:
            if spec.cz_entry_pos - APPROACH <= veh.s < spec.cz_entry_pos:
                return "approach"
        for spec in self.world.zones:
            if spec.conflict_exit <= veh.s < spec.conflict_exit + APPROACH:
                return "depart"
        return None

    def _yield_gap(self, veh: _Vehicle, region_occ) -> float | None:
        """Distance to the stop line when the driver must wait, else None."""
        z = veh.z
        if z in veh.committed:
            return None
        spec = self.world.c.zone(z)
        params = self.cfg.driver
        to_line = spec.cz_length - veh.x
        if veh.v * veh.v / (2 * params.max_decel) > max(to_line - params.ax, 0.0):
            veh.committed.add(z)  # cannot stop before the line any more
            return None
        occupancy = []
        zone_end = spec.cz_length + spec.zone_length
        for other in region_occ.get(z, ()):
            if other.route is veh.route or not self.world.has_priority(other.route, z):
                continue
            speed = max(other.v, 1.0)
            t_in = self.t + max(spec.cz_length - other.x, 0.0) / speed
            t_out = self.t + max(zone_end - other.x, 0.0) / speed
            occupancy.append((other.id, t_in, t_out))
        arrive = self.t + to_line / max(veh.v, 1.0)
        decision = yield_decision(VehicleState(veh.id, veh.route, veh.s, veh.v), occupancy,
                                  now=min(arrive, self.t + 3.0))
        if decision is YieldDecision.GO:
            if to_line < 1.0 or veh.v * veh.v / (2 * params.max_decel) > to_line - params.ax - 5.0:
                veh.committed.add(z)
            return None
        return to_line

    # ---------------------------------------------------------------- zones

    def _zone_lines(self, veh: _Vehicle, s_old: float, s_new: float, crossings):
        world = self.world
        zones = (range(1, len(world.zones) + 1) if veh.route is Route.MAIN
                 else (veh.zone_of_route,))
        step = s_new - s_old
        if step <= 0:
            return
        for z in zones:
            spec = world.c.zone(z)
            x_old = world.local_x(veh, z, s_old)
            x_new = world.local_x(veh, z, s_new)
            if x_old < 0 <= x_new:
                t_c = self.t + (0.0 - x_old) / step * self.cfg.dt
                self.order_cz[z].append((t_c, veh.id))
                if self.vd:
                    crossings.append((t_c, veh, z, veh.v))
            if x_old < spec.cz_length <= x_new:
                t_in = self.t + (spec.cz_length - x_old) / step * self.cfg.dt
                self.order_conflict[z].append((t_in, veh.id))
                if spec.kind.name == "SRZ":
                    self.mon["srz_entry_speed_max"] = max(self.mon["srz_entry_speed_max"], veh.v)

    def _ahead_trajectory(self, other: _Vehicle, z: int, t_now: float):
        if other.plan is not None and other.plan.zone == z:
            return other.plan.traj.with_cruise(other.plan.t_exit + HORIZON)
        return _cruise(t_now, self.world.local_x(other, z), other.v)

    def _coordinate(self, veh: _Vehicle, z: int, t_c: float, v_c: float, t_now: float):
        """Register at the control-zone entry and plan the crossing."""
        cfg, world = self.cfg, self.world
        spec = world.c.zone(z)
        queue = self.queues[z]
        state = VehicleState(veh.id, veh.route, 0.0, v_c)
        register_vehicle(queue, state, t_c)
        entry = queue.entry_for(veh.id)
        prev = queue.predecessor(entry)
        ahead, merging = [], []
        stream = self.streams[veh.route]
        idx = stream.index(veh)
        leader = stream[idx - 1] if idx > 0 else None
        if leader is not None:
            ahead.append(self._ahead_trajectory(leader, z, t_now))
        if prev is not None:
            other = self._find(prev.vehicle_id)
            if other is not None and other is not leader:
                target = ahead if other.route is veh.route else merging
                target.append(self._ahead_trajectory(other, z, t_now))
        try:
            plan = schedule_crossing(queue, state, spec, cfg.safety, self.limits, ahead,
                                     merging=merging, cruise_distance=spec.zone_length)
        except ModelError as exc:
            veh.fallbacks += 1
            # successors still need a crossing slot: assume the current speed
            entry.tz = t_c + spec.cz_length / max(v_c, self.limits.v_min)
            entry.v_at_tz = max(min(spec.zone_speed_limit, v_c), self.limits.v_min)
            self.events.append({"t": round(t_now, 6), "vehicle": veh.id, "zone": z,
                                "event": "fallback", "reason": f"{type(exc).__name__}: {exc}"})
            log.info("vehicle %d zone %d falls back to human driving: %s", veh.id, z, exc)
            return
        traj = plan.trajectory
        _, vf, _ = traj.evaluate(traj.tf)
        t_exit = plan.tz + spec.zone_length / vf
        full = traj.with_cruise(t_exit + cfg.dt)
        veh.plan = _Plan(z, full, t_exit)
        x, v, _ = full.evaluate(min(t_now, full.tf))
        veh.s, veh.v = world.route_s(veh, z, x), v
        veh.trace[-1] = v
        self.plans.append({"vehicle": veh.id, "zone": z, "t0": t_c, "v0": v_c,
                           "tz": plan.tz, "vf": float(vf), "delay": plan.delay})

    def _find(self, vid: int):
        for veh in self._all():
            if veh.id == vid:
                return veh
        return None

    # ---------------------------------------------------------------- monitors

    def _monitor(self, vehicles):
        mon, world = self.mon, self.world
        safety = self.cfg.safety
        occ = self._conflict_occupants(vehicles)
        for veh in vehicles:
            if veh.z is None:
                veh.moving = veh.v >= STOP_SPEED
                continue
            if veh.region == "control":
                mon["cz_speed_sum"] += veh.v
                mon["cz_speed_count"] += 1
            if veh.moving and veh.v < STOP_SPEED:
                veh.stops += 1
                mon["stops_in_control_zones"] += 1
                if veh.region == "control" and world.c.zone(veh.z).kind.name == "SRZ":
                    mon["srz_control_zone_stops"] += 1
            veh.moving = veh.v >= STOP_SPEED
            lead = self._leader_gap(veh, occ, merged_only=True)
            if lead is not None:
                margin = lead[0] - min_safe_gap(safety, veh.v)
                mon["min_rear_end_margin"] = min(mon["min_rear_end_margin"], margin)
                if margin < -MARGIN_TOL:
                    mon["rear_end_violations"] += 1
                    mon["rear_end_vehicles"].add(veh.id)
        for z, members in occ.items():
            inside = [v for v in members if v.region == "conflict"]
            for i, a in enumerate(inside):
                for b in inside[i + 1:]:
                    if a.route is b.route:
                        continue
                    rear, front = (a, b) if a.x <= b.x else (b, a)
                    if front.x - rear.x < min_safe_gap(safety, rear.v) - MARGIN_TOL:
                        mon["lateral_violations"] += 1
                        mon["lateral_pairs"].add((min(a.id, b.id), max(a.id, b.id), z))

    # ---------------------------------------------------------------- results

    def _fifo_violations(self) -> int:
        bad = 0
        for z in self.queues:
            cz = [v for _, v in sorted(self.order_cz[z])]
            conflict = [v for _, v in sorted(self.order_conflict[z])]
            both = set(cz) & set(conflict)
            entered = [v for v in cz if v in both]
            crossed = [v for v in conflict if v in both]
            bad += sum(1 for a, b in zip(entered, crossed) if a != b)
        return bad

    def finish(self, maps: PowertrainMaps, controller) -> SimResult:
        cfg = self.cfg
        dt = cfg.dt
        stride = max(int(round(cfg.trace_stride / dt)), 1)
        done = sorted(self.finished, key=lambda v: v.id)
        main = [v for v in done if v.route is Route.MAIN]
        energy = {}
        if main:
            n = max(len(v.trace) - 1 for v in main)
            V = np.zeros((len(main), n))
            A = np.zeros((len(main), n))
            valid = np.zeros((len(main), n), dtype=bool)
            for i, veh in enumerate(main):
                tr = np.asarray(veh.trace)
                m = tr.size - 1
                V[i, :m] = tr[1:]
                A[i, :m] = np.diff(tr) / dt
                valid[i, :m] = True
            splitter = None
            pt = cfg.powertrain
            if cfg.controller_case.has_pt:
                splitter = controller.splitter(pt.battery, pt.policy)
            res = simulate_powertrain(V, A, dt, maps, pt, splitter=splitter, valid=valid)
            fuel = res.fuel_gal
            kwh = res.net_kwh(pt.battery.soc, pt.battery.capacity_kwh)
            dist = (V * valid).sum(axis=1) * dt / MILE
            for i, veh in enumerate(main):
                energy[veh.id] = (float(dist[i]), float(fuel[i]), float(kwh[i]),
                                  mpge(float(dist[i]), float(fuel[i]), float(kwh[i]), pt.kwh_per_gallon))
        records = []
        for veh in done:
            tr = np.asarray(veh.trace)
            dist = float(tr[1:].sum() * dt / MILE)
            fuel = kwh = value = None
            if veh.id in energy:
                dist, fuel, kwh, value = energy[veh.id]
            records.append(VehicleRecord(
                veh.id, veh.route.value, veh.spawn_t, veh.done_t, veh.done_t - veh.spawn_t,
                dist, fuel, kwh, value, veh.stops, veh.fallbacks, stride * dt, tr[::stride].copy()))
        mpges = [r.mpge for r in records if r.mpge is not None]
        aggregates = collect_metrics(mpges) if mpges else None
        mon = dict(self.mon)
        mon["rear_end_vehicles"] = len(mon["rear_end_vehicles"])
        mon["lateral_pairs"] = len(mon["lateral_pairs"])
        count = mon.pop("cz_speed_count")
        mon["cz_mean_speed"] = mon.pop("cz_speed_sum") / count if count else None
        if not math.isfinite(mon["min_rear_end_margin"]):
            mon["min_rear_end_margin"] = None
        mon["fifo_violations"] = self._fifo_violations() if self.vd else None
        mon["fallbacks"] = sum(1 for e in self.events if e["event"] == "fallback")
        mon["coordinated_crossings"] = len(self.plans)
        en_route = sum(len(s) for s in self.streams.values())
        return SimResult(cfg, records, aggregates, en_route, self.unspawned, mon,
                         self.plans, self.events)
