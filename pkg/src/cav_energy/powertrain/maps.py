"""Engine and motor efficiency maps on regular speed x torque grids.

The factory maps of the reference vehicle are not public.  The default maps
are synthetic:

* engine: a Willans-line efficiency ``x / (x + c)`` in the load fraction
  ``x = T / T_max(N)``, with a full-load enrichment penalty above ``x = 0.8``
  and a speed factor that equals one over the 1750-4000 rpm peak-torque band;
  scaled so the peak is 0.35.
* motor: 0.80 plus 0.15 times a plateau that is one over the mid envelope
  and falls off towards the low-speed, low-torque and high-power corners.

Both grids use 100 rpm x 10 N*m spacing.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from ..errors import BadSpec, InvalidInput

__all__ = [
    "MapSpec",
    "PowertrainMaps",
    "synthesize_default_maps",
    "save_maps",
    "load_maps",
    "rpm_to_rad",
]

RPM = 2 * math.pi / 60


def rpm_to_rad(n):
    return n * RPM


@dataclass(frozen=True)
class MapSpec:
    speed_step: float = 100.0  # rpm
    torque_step: float = 10.0  # N*m
    engine_speed_min: float = 1000.0
    engine_speed_max: float = 6000.0
    engine_max_torque: float = 250.0
    engine_max_power: float = 110e3
    engine_peak_eff: float = 0.35
    engine_band: tuple[float, float] = (1750.0, 4000.0)
    engine_inertia: float = 0.15
    motor_speed_max: float = 6000.0
    motor_max_torque: float = 300.0
    motor_max_power: float = 100e3
    motor_peak_eff: float = 0.95
    motor_corner_eff: float = 0.80
    motor_peak_torque_speed: float = 2000.0
    motor_inertia: float = 0.1

    def validate(self) -> None:
        if self.speed_step <= 0 or self.torque_step <= 0:
            raise BadSpec("grid steps must be positive")
        n_e = (self.engine_speed_max - self.engine_speed_min) / self.speed_step
        if n_e < 1 or self.engine_max_torque / self.torque_step < 1:
            raise BadSpec("engine grid needs at least 2 x 2 points")
        if self.motor_speed_max / self.speed_step < 1 or self.motor_max_torque / self.torque_step < 1:
            raise BadSpec("motor grid needs at least 2 x 2 points")
        if self.engine_max_torque > 250.0 + 1e-9 or self.motor_max_torque > 300.0 + 1e-9:
            raise BadSpec("torque limits exceed the vehicle specification (250 / 300 N*m)")
        if not (0 < self.engine_peak_eff <= 1 and 0 < self.motor_corner_eff <= self.motor_peak_eff <= 1):
            raise BadSpec("efficiencies must lie in (0, 1]")
        if self.engine_speed_min <= 0 or self.engine_speed_max <= self.engine_speed_min:
            raise BadSpec("engine speed range is empty")


class PowertrainMaps:
    """Efficiency grids plus the actuator envelopes they belong to."""

    def __init__(self, spec: MapSpec, engine_speeds, engine_torques, engine_eff,
                 motor_speeds, motor_torques, motor_eff):
        self.spec = spec
        self.engine_speeds = np.asarray(engine_speeds, dtype=float)
        self.engine_torques = np.asarray(engine_torques, dtype=float)
        self.engine_eff = np.asarray(engine_eff, dtype=float)
        self.motor_speeds = np.asarray(motor_speeds, dtype=float)
        self.motor_torques = np.asarray(motor_torques, dtype=float)
        self.motor_eff = np.asarray(motor_eff, dtype=float)
        for eff in (self.engine_eff, self.motor_eff):
            if not (np.all(eff > 0) and np.all(eff <= 1)):
                raise BadSpec("efficiency grids must lie in (0, 1]")
        for axis in (self.engine_speeds, self.engine_torques, self.motor_speeds, self.motor_torques):
            steps = np.diff(axis)
            if axis.size < 2 or not np.allclose(steps, steps[0]) or steps[0] <= 0:
                raise BadSpec("map axes must be uniform and increasing with >= 2 points")

    # envelopes -----------------------------------------------------------

    def engine_max_torque(self, n_rpm):
        """Full-load torque; zero outside the engine speed range."""
        n = np.asarray(n_rpm, dtype=float)
        s = self.spec
        t = np.minimum(s.engine_max_torque, s.engine_max_power / np.maximum(rpm_to_rad(n), 1e-9))
        ok = (n >= s.engine_speed_min - 1e-9) & (n <= s.engine_speed_max + 1e-9)
        return np.where(ok, t, 0.0)

    def motor_max_torque(self, n_rpm):
        n = np.asarray(n_rpm, dtype=float)
        s = self.spec
        t = np.minimum(s.motor_max_torque, s.motor_max_power / np.maximum(rpm_to_rad(n), 1e-9))
        return np.where(n <= s.motor_speed_max + 1e-9, t, 0.0)

    # efficiencies --------------------------------------------------------

    def engine_efficiency(self, n_rpm, t):
        """Bilinear interpolation; queries are clamped to the grid."""
        return _bilinear(self.engine_speeds, self.engine_torques, self.engine_eff, n_rpm, t)

    def motor_efficiency(self, n_rpm, t):
        return _bilinear(self.motor_speeds, self.motor_torques, self.motor_eff, np.abs(n_rpm), t)

    # identity ------------------------------------------------------------

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(asdict(self.spec), sort_keys=True).encode())
        for arr in (self.engine_speeds, self.engine_torques, self.engine_eff,
                    self.motor_speeds, self.motor_torques, self.motor_eff):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def _bilinear(xs, ys, z, x, y):
    """Interpolate ``z`` on the uniform grid ``xs`` x ``ys`` at clamped points."""
    x = np.clip(np.asarray(x, dtype=float), xs[0], xs[-1])
    y = np.clip(np.asarray(y, dtype=float), ys[0], ys[-1])
    fx = (x - xs[0]) / (xs[1] - xs[0])
    fy = (y - ys[0]) / (ys[1] - ys[0])
    i = np.minimum(fx.astype(int), xs.size - 2)
    j = np.minimum(fy.astype(int), ys.size - 2)
    wx, wy = fx - i, fy - j
    return ((1 - wx) * ((1 - wy) * z[i, j] + wy * z[i, j + 1])
            + wx * ((1 - wy) * z[i + 1, j] + wy * z[i + 1, j + 1]))


def _engine_grid(spec: MapSpec):
    speeds = np.arange(spec.engine_speed_min, spec.engine_speed_max + 1e-9, spec.speed_step)
    torques = np.arange(0.0, spec.engine_max_torque + 1e-9, spec.torque_step)
    N, T = np.meshgrid(speeds, torques, indexing="ij")
    tmax = np.minimum(spec.engine_max_torque, spec.engine_max_power / rpm_to_rad(N))
    x = T / tmax
    c = 0.12
    willans = x / (x + c) / (0.8 / (0.8 + c))
    enrich = 1.0 - 0.6 * np.clip(x - 0.8, 0.0, None) ** 2
    lo, hi = spec.engine_band
    below = np.clip((lo - N) / (lo - spec.engine_speed_min + 1e-9), 0, 1)
    above = np.clip((N - hi) / (spec.engine_speed_max - hi + 1e-9), 0, 1)
    speed_factor = 1.0 - 0.08 * below**2 - 0.15 * above**2
    eff = spec.engine_peak_eff * np.minimum(willans, 1.0) * enrich * speed_factor
    # off-load points and corners above full load keep a small positive value
    return speeds, torques, np.maximum(eff, 0.02)


def _motor_grid(spec: MapSpec):
    speeds = np.arange(0.0, spec.motor_speed_max + 1e-9, spec.speed_step)
    torques = np.arange(-spec.motor_max_torque, spec.motor_max_torque + 1e-9, spec.torque_step)
    N, T = np.meshgrid(speeds, torques, indexing="ij")
    s = N / spec.motor_speed_max
    tau = np.abs(T) / spec.motor_max_torque
    plateau = (
        np.clip(s / 0.12, 0, 1)
        * np.clip(tau / 0.08, 0, 1)
        * (1.0 - 0.6 * np.clip((s - 0.75) / 0.25, 0, 1) * np.clip((tau - 0.5) / 0.5, 0, 1))
    )
    eff = spec.motor_corner_eff + (spec.motor_peak_eff - spec.motor_corner_eff) * plateau
    return speeds, torques, eff


def synthesize_default_maps(spec: MapSpec | None = None) -> PowertrainMaps:
    spec = spec or MapSpec()
    spec.validate()
    es, et, ee = _engine_grid(spec)
    ms, mt, me = _motor_grid(spec)
    return PowertrainMaps(spec, es, et, ee, ms, mt, me)


# ------------------------------------------------------------------ files


def _grid_csv(speeds, torques, eff) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rpm\\Nm", *[f"{t:g}" for t in torques]])
    for n, row in zip(speeds, eff):
        w.writerow([f"{n:g}", *[f"{x:.17g}" for x in row]])
    return buf.getvalue()


def _read_grid(path: Path):
    rows = list(csv.reader(path.read_text().splitlines()))
    try:
        torques = np.array([float(x) for x in rows[0][1:]])
        speeds = np.array([float(r[0]) for r in rows[1:]])
        eff = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise InvalidInput(f"{path}: malformed efficiency grid ({exc})") from None
    if eff.shape != (len(speeds), len(torques)):
        raise InvalidInput(f"{path}: ragged efficiency grid")
    return speeds, torques, eff


def save_maps(maps: PowertrainMaps, directory) -> Path:
    """Write ``engine.csv``, ``motor.csv`` and ``maps.json`` into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "engine.csv").write_text(_grid_csv(maps.engine_speeds, maps.engine_torques, maps.engine_eff))
    (d / "motor.csv").write_text(_grid_csv(maps.motor_speeds, maps.motor_torques, maps.motor_eff))
    meta = {"spec": asdict(maps.spec), "fingerprint": maps.fingerprint()}
    (d / "maps.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return d


def load_maps(directory) -> PowertrainMaps:
    d = Path(directory)
    if not d.is_dir() or not (d / "maps.json").exists():
        raise FileNotFoundError(f"maps not found: {d}")
    meta = json.loads((d / "maps.json").read_text())
    raw = meta["spec"]
    raw["engine_band"] = tuple(raw["engine_band"])
    spec = MapSpec(**raw)
    es, et, ee = _read_grid(d / "engine.csv")
    ms, mt, me = _read_grid(d / "motor.csv")
    return PowertrainMaps(spec, es, et, ee, ms, mt, me)
