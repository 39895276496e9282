"""Quasi-static backward model of a parallel plug-in hybrid.

A speed/acceleration trace is turned into wheel torque, pushed through the
gearbox to the shared engine/motor shaft, split between the actuators and
converted into fuel flow and battery power.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import (
    DemandExceedsCapability,
    InvalidInput,
    NegativeSpeed,
    NoFeasibleGear,
    OutsideEnvelope,
    PowerLimitExceeded,
    ZeroConsumption,
)
from .maps import PowertrainMaps, rpm_to_rad
from .params import (
    AIR_DENSITY,
    G,
    GAL_TO_CO2,
    GASOLINE_KG_PER_GAL,
    KWH_TO_CO2,
    LHV_GASOLINE,
    Battery,
    Driveline,
    Mode,
    PowertrainConfig,
    SplitPolicy,
    VehicleParams,
)

__all__ = [
    "road_load",
    "gear_select",
    "shaft_state",
    "engine_fuel_rate",
    "motor_electrical_power",
    "battery_step",
    "mpge",
    "baseline_split",
    "PowertrainResult",
    "simulate_powertrain",
]

STANDSTILL = 0.1  # m/s; rolling resistance is zero below this


def road_load(v, a, params: VehicleParams):
    """Wheel torque (N*m) and wheel speed (rad/s) for speed ``v`` and accel ``a``."""
    v_arr = np.asarray(v, dtype=float)
    if np.any(v_arr < 0):
        raise NegativeSpeed("speed must be non-negative")
    a_arr = np.asarray(a, dtype=float)
    rolling = np.where(v_arr >= STANDSTILL, params.mass * G * params.rolling_coeff, 0.0)
    aero = 0.5 * AIR_DENSITY * params.drag_coeff * params.frontal_area * v_arr**2
    force = params.mass * a_arr + rolling + aero
    r, eta = params.wheel_radius, params.traction_efficiency
    torque = np.where(force > 0, force * r / eta, force * r * eta)
    speed = v_arr / r
    if np.ndim(torque) == 0:
        return float(torque), float(speed)
    return torque, speed


def shaft_state(wheel_torque, wheel_speed, gear, driveline: Driveline):
    """Shaft speed (rpm) and torque for a 1-based gear index (arrays allowed)."""
    g = np.asarray(gear, dtype=int) - 1
    ratio = np.asarray(driveline.gear_ratios)[g] * driveline.final_drive_ratio
    eff = np.asarray(driveline.gear_efficiencies)[g] * driveline.final_drive_efficiency
    w = np.asarray(wheel_speed, dtype=float) * ratio
    tw = np.asarray(wheel_torque, dtype=float)
    t = np.where(tw > 0, tw / (ratio * eff), tw / ratio * eff)
    return w / rpm_to_rad(1.0), t


def _capability(maps: PowertrainMaps, n_rpm):
    return maps.engine_max_torque(n_rpm) + maps.motor_max_torque(n_rpm)


def gear_select(v: float, demand_torque: float, driveline: Driveline, maps: PowertrainMaps,
                prev_gear: int | None = None) -> int:
    """Highest gear with shaft speed in the shift window and enough torque.

    Below the window in every gear the first gear is used (motor launch).
    A downshift from ``prev_gear`` waits until the speed has fallen by the
    hysteresis margin below the point where that gear left the window.
    """
    if v < 0:
        raise NegativeSpeed(f"speed {v} < 0")
    gear = _gear_batch(np.array([v]), np.array([demand_torque]), driveline, maps,
                       None if prev_gear is None else np.array([prev_gear]))
    if gear[0] == 0:
        raise NoFeasibleGear(f"wheel torque {demand_torque:.1f} N*m exceeds every gear")
    return int(gear[0])


def _gear_batch(v, tw, driveline: Driveline, maps: PowertrainMaps, prev=None, r_wheel=None):
    """Vectorized gear choice; 0 marks an infeasible demand."""
    r = VehicleParams().wheel_radius if r_wheel is None else r_wheel
    ratio = np.asarray(driveline.gear_ratios) * driveline.final_drive_ratio
    eff = np.asarray(driveline.gear_efficiencies) * driveline.final_drive_efficiency
    ws = (v / r)[:, None]
    twc = tw[:, None]
    n = ws * ratio / rpm_to_rad(1.0)  # (vehicles, gears)
    t = np.where(twc > 0, twc / (ratio * eff), twc / ratio * eff)
    torque_ok = t <= _capability(maps, n) + 1e-9
    window = (n >= driveline.shift_rpm_low) & (n <= driveline.shift_rpm_high)
    ok = window & torque_ok
    n_g = ratio.size
    gears = np.arange(1, n_g + 1)
    chosen = np.max(np.where(ok, gears, 0), axis=1)
    # launch: below the window in every gear, first gear if it has the torque
    launch = (chosen == 0) & (n[:, 0] < driveline.shift_rpm_low) & torque_ok[:, 0]
    chosen = np.where(launch, 1, chosen)
    if prev is not None:
        # keep the previous higher gear until the speed drops by the margin
        hold = (prev > chosen) & (chosen > 0)
        if np.any(hold):
            idx = np.maximum(prev, 1) - 1
            rows = np.arange(v.size)
            nh = (v + driveline.downshift_hysteresis) / r * ratio[idx] / rpm_to_rad(1.0)
            keep = hold & (nh >= driveline.shift_rpm_low) & torque_ok[rows, idx]
            chosen = np.where(keep, prev, chosen)
    return chosen


def engine_fuel_rate(n_rpm: float, t_eng: float, maps: PowertrainMaps) -> float:
    """Fuel mass flow in g/s; zero when the engine delivers no torque."""
    if t_eng == 0:
        return 0.0
    s = maps.spec
    if t_eng < 0 or not (s.engine_speed_min <= n_rpm <= s.engine_speed_max):
        raise OutsideEnvelope(f"engine point ({n_rpm} rpm, {t_eng} N*m) outside envelope")
    if t_eng > float(maps.engine_max_torque(n_rpm)) + 1e-9:
        raise OutsideEnvelope(f"engine torque {t_eng} above full load at {n_rpm} rpm")
    eta = float(maps.engine_efficiency(n_rpm, t_eng))
    return t_eng * rpm_to_rad(n_rpm) / (eta * LHV_GASOLINE) * 1e3


def _fuel_batch(n, t, maps):
    eta = maps.engine_efficiency(n, t)
    p = np.maximum(t, 0.0) * rpm_to_rad(n)
    return np.where(t > 0, p / (eta * LHV_GASOLINE) * 1e3, 0.0)


def motor_electrical_power(n_rpm: float, t_mot: float, maps: PowertrainMaps) -> float:
    """Battery-side power in W, positive when discharging."""
    if t_mot == 0:
        return 0.0
    if abs(t_mot) > float(maps.motor_max_torque(n_rpm)) + 1e-9:
        raise OutsideEnvelope(f"motor torque {t_mot} beyond envelope at {n_rpm} rpm")
    return float(_elec_batch(np.array(n_rpm), np.array(t_mot), maps))


def _elec_batch(n, t, maps):
    eta = maps.motor_efficiency(n, t)
    p = t * rpm_to_rad(n)
    return np.where(p > 0, p / eta, p * eta)


def battery_step(batt: Battery, p_elec: float, dt: float) -> Battery:
    """Energy-bucket SOC update; sets ``clamped`` when the SOC saturates."""
    if abs(p_elec) > batt.max_power + 1e-9:
        raise PowerLimitExceeded(f"|{p_elec:.0f}| W above {batt.max_power:.0f} W")
    soc = batt.soc - p_elec * dt / batt.capacity_j
    clamped = soc < 0.0 or soc > 1.0
    return replace(batt, soc=min(max(soc, 0.0), 1.0), clamped=batt.clamped or clamped)


def mpge(distance: float, fuel: float, net_battery_energy: float,
         kwh_per_gallon: float = GAL_TO_CO2 / KWH_TO_CO2) -> float:
    """Miles per gallon equivalent; battery energy is converted at ``kwh_per_gallon``."""
    if distance <= 0:
        raise InvalidInput("distance must be positive")
    if fuel < 0 or net_battery_energy < 0:
        raise InvalidInput("consumptions must be non-negative")
    gallons = fuel + net_battery_energy / kwh_per_gallon
    if gallons <= 0:
        raise ZeroConsumption("no fuel and no battery energy used")
    return distance / gallons


# ------------------------------------------------------------------ splits


def _hold_batch(n, t, soc, soc0, band, maps, policy):
    """HoldBattery split for propulsion demands (arrays)."""
    te_max = maps.engine_max_torque(n)
    tm_max = maps.motor_max_torque(n)
    te = np.minimum(t, te_max)
    tm = t - te
    # SOC correction: charge below the set point, assist above it
    err = np.clip((soc0 - soc) / band, -1.0, 1.0)
    c = policy.hold_gain * err
    engine_on = te_max > 0
    c = np.where(engine_on, c, 0.0)
    c = np.minimum(c, te_max - te)  # engine headroom for charging
    c = np.maximum(c, -te)  # cannot assist more than the engine carries
    c = np.minimum(c, tm_max + tm)  # generator limit for charging
    c = np.maximum(c, -(tm_max - tm))  # motor limit for assisting
    return te + c, tm - c


def baseline_split(mode: Mode, state, batt: Battery, maps: PowertrainMaps,
                   policy: SplitPolicy | None = None, soc0: float | None = None):
    """Rule-based factory-like torque split ``(T_eng, T_mot)`` at the shaft.

    ``state`` is ``(N [rpm], T_demand [N*m])``.  Negative demand is sent to
    the motor (regeneration limits are applied by the caller).
    """
    policy = policy or SplitPolicy()
    n, t = float(state[0]), float(state[1])
    soc0 = batt.soc if soc0 is None else soc0
    if t <= 0:
        return 0.0, t
    te_max = float(maps.engine_max_torque(n))
    tm_max = float(maps.motor_max_torque(n))
    if t > te_max + tm_max + 1e-9:
        raise DemandExceedsCapability(f"{t:.1f} N*m above {te_max + tm_max:.1f} N*m at {n:.0f} rpm")

    if mode is Mode.EV:
        if t > tm_max + 1e-9:
            raise DemandExceedsCapability(f"EV mode: {t:.1f} N*m above motor limit {tm_max:.1f}")
        return 0.0, t
    if mode is Mode.CHARGE_BATTERY:
        if t > te_max + 1e-9:
            raise DemandExceedsCapability(f"charge mode: {t:.1f} N*m above engine limit {te_max:.1f}")
        c = policy.charge_torque if batt.soc < policy.charge_ceiling else 0.0
        c = max(min(c, te_max - t, tm_max), 0.0)
        return t + c, -c
    if mode is Mode.HYBRID:
        if t <= min(policy.hybrid_threshold, tm_max) or te_max == 0:
            return 0.0, t
        te = min(t, te_max)
        return te, t - te
    te, tm = _hold_batch(np.array(n), np.array(t), batt.soc, soc0, batt.hold_band, maps, policy)
    return float(te), t - float(te)


# ------------------------------------------------------------ trace runner


@dataclass
class PowertrainResult:
    fuel_g: np.ndarray  # per vehicle
    soc_final: np.ndarray
    soc_trace: np.ndarray | None
    unmet_steps: np.ndarray
    wheel_work_j: np.ndarray  # positive wheel work

    @property
    def fuel_gal(self) -> np.ndarray:
        return self.fuel_g / 1e3 / GASOLINE_KG_PER_GAL

    def net_kwh(self, soc0: float, capacity_kwh: float) -> np.ndarray:
        """Battery energy drawn over the trace; net charging counts as zero."""
        return np.maximum(soc0 - self.soc_final, 0.0) * capacity_kwh


def simulate_powertrain(v, a, dt: float, maps: PowertrainMaps, config: PowertrainConfig | None = None,
                        splitter=None, valid=None, keep_soc_trace: bool = False) -> PowertrainResult:
    """Run the backward model over speed/acceleration traces.

    ``v`` and ``a`` have shape (vehicles, steps); ``valid`` masks padded
    steps.  ``splitter(n, t, soc)`` returns ``(T_eng, T_mot)`` for positive
    shaft demands, or None for the rule-based split of ``config.policy``.
    """
    cfg = config or PowertrainConfig()
    veh, dl, batt, pol = cfg.vehicle, cfg.driveline, cfg.battery, cfg.policy
    v = np.atleast_2d(np.asarray(v, dtype=float))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if valid is None:
        valid = np.ones(v.shape, dtype=bool)
    n_veh, n_steps = v.shape
    soc0 = batt.soc
    soc = np.full(n_veh, soc0)
    fuel = np.zeros(n_veh)
    unmet = np.zeros(n_veh, dtype=int)
    work = np.zeros(n_veh)
    gear = np.zeros(n_veh, dtype=int)
    soc_hist = np.empty((n_veh, n_steps)) if keep_soc_trace else None
    cap_j = batt.capacity_j
    regen_ceiling = soc0 + batt.hold_band if pol.mode is Mode.HOLD_BATTERY and splitter is None else 0.95

    for k in range(n_steps):
        m = valid[:, k]
        vk = np.where(m, np.maximum(v[:, k], 0.0), 0.0)
        ak = np.where(m, a[:, k], 0.0)
        tw, ww = road_load(vk, ak, veh)
        tw = np.atleast_1d(tw)
        ww = np.atleast_1d(ww)
        work += np.where(m, np.maximum(tw * ww, 0.0), 0.0) * dt

        g = _gear_batch(vk, tw, dl, maps, gear, veh.wheel_radius)
        short = g == 0
        if np.any(short):
            # demand beyond every gear: first gear at full capability
            g = np.where(short, 1, g)
            unmet += short & m
        gear = np.where(m, g, gear)
        n, t = shaft_state(tw, ww, g, dl)
        cap_e = maps.engine_max_torque(n)
        cap_m = maps.motor_max_torque(n)
        over = t > cap_e + cap_m
        unmet += over & m & ~short
        t = np.minimum(t, cap_e + cap_m)

        drive = t > 0
        te = np.zeros(n_veh)
        tm = np.zeros(n_veh)
        if splitter is None:
            te_h, tm_h = _hold_batch(n, np.where(drive, t, 0.0), soc, soc0, batt.hold_band, maps, pol)
        else:
            te_h, tm_h = splitter(n, np.where(drive, t, 0.0), soc)
        te = np.where(drive, te_h, 0.0)
        tm = np.where(drive, tm_h, 0.0)

        # regeneration: motor absorbs braking torque within its limits
        brake = t < 0
        regen_ok = brake & (soc < regen_ceiling)
        tm = np.where(regen_ok, np.maximum(t * veh.traction_torque_loss_factor, -cap_m), tm)

        # battery power limit: shift excess motoring to the engine, trim charging
        w = rpm_to_rad(n)
        p_el = _elec_batch(n, tm, maps)
        too_much = p_el > batt.max_power
        if np.any(too_much):
            eta = maps.motor_efficiency(n, tm)
            tm_lim = np.where(w > 0, batt.max_power * eta / np.maximum(w, 1e-9), tm)
            extra = np.where(too_much, tm - tm_lim, 0.0)
            room = np.maximum(cap_e - te, 0.0)
            shift = np.minimum(extra, room)
            te = te + shift
            unmet += (too_much & (extra > room + 1e-9) & m)
            tm = np.where(too_much, tm_lim, tm)
            p_el = _elec_batch(n, tm, maps)
        too_much_c = p_el < -batt.max_power
        if np.any(too_much_c):
            eta = maps.motor_efficiency(n, tm)
            tm = np.where(too_much_c, -batt.max_power / np.maximum(w * eta, 1e-9), tm)
            p_el = _elec_batch(n, tm, maps)
        # regen stops at the ceiling; the friction brakes take the rest of the step
        room = np.maximum(regen_ceiling - soc, 0.0) * cap_j / dt
        p_el = np.where(brake, np.maximum(p_el, -room), p_el)

        fuel +=np.where(m, _fuel_batch(n, te, maps), 0.0) * dt
        soc = np.where(m, np.clip(soc - p_el * dt / cap_j, 0.0, 1.0), soc)
        if soc_hist is not None:
            soc_hist[:, k] = soc

    return PowertrainResult(fuel, soc, soc_hist, unmet, work)
