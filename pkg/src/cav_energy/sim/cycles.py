"""Standard drive cycles and a speed-tracking driver that traces them."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..corridor import MPH
from ..errors import InvalidInput, TrackingDiverged, ZeroConsumption
from ..powertrain.maps import PowertrainMaps
from ..powertrain.model import mpge, simulate_powertrain
from ..powertrain.params import MILE, PowertrainConfig

__all__ = [
    "DriveCycle",
    "TraceResult",
    "STANDARD_CYCLES",
    "load_drive_cycle",
    "read_cycle_csv",
    "stitch_cycles",
    "combined_cycle",
    "trace_drive_cycle",
]

STANDARD_CYCLES = ("udds", "hwfet", "us06")


@dataclass(frozen=True)
class DriveCycle:
    name: str
    t: np.ndarray  # s, strictly increasing from 0
    v: np.ndarray  # m/s

    def __post_init__(self):
        t, v = np.asarray(self.t, dtype=float), np.asarray(self.v, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size == 0:
            raise InvalidInput("cycle needs matching 1-D time and speed columns")
        if t[0] != 0 or np.any(np.diff(t) <= 0):
            raise InvalidInput("cycle time must start at 0 and strictly increase")
        if np.any(v < 0):
            raise InvalidInput("cycle speeds must be non-negative")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    @property
    def distance_miles(self) -> float:
        return float(np.sum(np.diff(self.t) * (self.v[1:] + self.v[:-1]) / 2)) / MILE


def read_cycle_csv(path, name: str | None = None) -> DriveCycle:
    """Two columns ``seconds, mph``; one optional header row."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"cycle not found: {p}")
    ts, vs = [], []
    with p.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                if len(row) != 2:
                    raise ValueError(f"expected 2 columns, got {len(row)}")
                t, v = float(row[0]), float(row[1])
            except ValueError as exc:
                if lineno == 1 and not ts:
                    continue  # header
                raise InvalidInput(f"{p}: line {lineno}: {exc}") from None
            ts.append(t)
            vs.append(v * MPH)
    return DriveCycle(name or p.stem, np.array(ts), np.array(vs))


def load_drive_cycle(name_or_path) -> DriveCycle:
    """A bundled cycle by name (udds, hwfet, us06, combined) or a CSV path."""
    key = str(name_or_path).lower()
    if key == "combined":
        return combined_cycle()
    if key in STANDARD_CYCLES:
        res = resources.files("cav_energy") / "data" / "cycles" / f"{key}.csv"
        with resources.as_file(res) as path:
            return read_cycle_csv(path, key)
    return read_cycle_csv(name_or_path)


def stitch_cycles(cycles, name: str = "combined") -> DriveCycle:
    """Concatenate cycles back to back with a 1 s step between them."""
    ts, vs, offset = [], [], 0.0
    for c in cycles:
        ts.append(c.t + offset)
        vs.append(c.v)
        offset = ts[-1][-1] + 1.0
    return DriveCycle(name, np.concatenate(ts), np.concatenate(vs))


def combined_cycle() -> DriveCycle:
    return stitch_cycles([load_drive_cycle(n) for n in STANDARD_CYCLES])


@dataclass
class TraceResult:
    cycle: str
    pt_case: str
    mpge: float
    distance_miles: float
    fuel_gal: float
    net_kwh: float
    rms_error: float  # m/s
    t: np.ndarray
    v: np.ndarray
    soc: np.ndarray


def _track(cycle: DriveCycle, dt: float, kp: float, ki: float, u_lo: float, u_hi: float):
    """PI speed control with conditional integration.

    The feedforward is the reference slope over the last step: the driver
    reacts to the trace, it does not preview it.
    """
    n = int(round(cycle.duration / dt))
    t = dt * np.arange(n + 1)
    ref = np.interp(t, cycle.t, cycle.v)
    v = np.empty(n + 1)
    v[0] = ref[0]
    integ = 0.0
    for k in range(n):
        err = ref[k] - v[k]
        ff = (ref[k] - ref[k - 1]) / dt if k > 0 else 0.0
        u_raw = ff + kp * err + ki * integ
        u = min(max(u_raw, u_lo), u_hi)
        if u == u_raw:
            integ += err * dt  # no wind-up while saturated
        v[k + 1] = max(v[k] + u * dt, 0.0)
    rms = float(np.sqrt(np.mean((ref - v) ** 2)))
    return t, v, rms


def trace_drive_cycle(cycle: DriveCycle, pt_case: str, maps: PowertrainMaps, controller=None,
                      *, config: PowertrainConfig | None = None, dt: float = 0.1,
                      kp: float = 0.8, ki: float = 0.05,
                      accel_limits: tuple[float, float] = (-6.0, 4.5)) -> TraceResult:
    """Drive ``cycle`` with a PI driver and run the powertrain behind it.

    ``pt_case`` is ``"baseline"`` (rule-based charge-holding split) or
    ``"pareto"`` (``controller``, a fitted ``ParetoSplitController``).
    Raises ``TrackingDiverged`` if the RMS speed error exceeds 1 m/s and
    ``ZeroConsumption`` when the trace uses no energy at all.
    """
    case = pt_case.lower()
    if case not in ("baseline", "pareto"):
        raise InvalidInput(f"unknown powertrain case {pt_case!r}")
    if case == "pareto" and controller is None:
        raise InvalidInput("pareto case needs a fitted controller")
    cfg = config or PowertrainConfig()
    t, v, rms = _track(cycle, dt, kp, ki, *accel_limits)
    if rms > 1.0:
        raise TrackingDiverged(f"RMS speed error {rms:.3f} m/s on {cycle.name}")
    a = np.diff(v) / dt
    v_steps = v[1:]
    splitter = controller.splitter(cfg.battery, cfg.policy) if case == "pareto" else None
    res = simulate_powertrain(v_steps, a, dt, maps, cfg, splitter=splitter, keep_soc_trace=True)
    distance = float(np.sum(v_steps) * dt) / MILE
    fuel = float(res.fuel_gal[0])
    kwh = float(res.net_kwh(cfg.battery.soc, cfg.battery.capacity_kwh)[0])
    if fuel + kwh == 0:
        raise ZeroConsumption(f"{cycle.name}: no fuel and no battery energy used")
    value = mpge(distance, fuel, kwh, cfg.kwh_per_gallon)
    soc = np.concatenate([[cfg.battery.soc], res.soc_trace[0]])
    return TraceResult(cycle.name, case, value, distance, fuel, kwh, rms, t, v, soc)
